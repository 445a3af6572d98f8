#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nftlab/error.hpp"

namespace nftlab {

// Dense n-dimensional array of 64-bit reals, row-major. Value type: copies
// are deep, tensors are immutable by convention once handed to the graph.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}

  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    if (count(t.shape) != static_cast<std::int64_t>(d.size()))
      throw ShapeError("tensor data length " + std::to_string(d.size()) +
                       " does not match shape " + shape_string(t.shape));
    t.data = std::move(d);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(s));
      n *= d;
    }
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

  std::string shape_str() const { return shape_string(shape); }
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw ShapeError("dot size mismatch " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace nftlab
