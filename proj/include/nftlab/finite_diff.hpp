#pragma once

#include <functional>

#include "nftlab/error.hpp"
#include "nftlab/tensor.hpp"

namespace nftlab {

// Central-difference gradient oracle: (f(x + h e_k) - f(x - h e_k)) / (2h)
// per coordinate. Exact for linear f at any h.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                                   const Tensor& x, double h) {
  if (h <= 0.0) throw ValueError("finite_diff_gradient needs h > 0");
  Tensor g(x.shape, 0.0);
  Tensor probe = x;
  for (std::int64_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double fp = f(probe);
    probe[k] = orig - h;
    const double fm = f(probe);
    probe[k] = orig;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// l2 relative error between gradients; denominator guards the zero vector.
inline double gradient_rel_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("gradient_rel_error shape mismatch: " + a.shape_str() + " vs " +
                     b.shape_str());
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace nftlab
