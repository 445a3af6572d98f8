#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nftlab/error.hpp"
#include "nftlab/tensor.hpp"

namespace nftlab {

// Low-level accumulating matrix kernels. C is m x n throughout.
namespace detail {

// C += A[m,k] * B[k,n]
inline void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C += A[m,k] * B[n,k]^T
inline void gemm_nt(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C += A[k,m]^T * B[k,n]
inline void gemm_tn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int p = 0; p < k; ++p) {
    const double* a = A + static_cast<std::size_t>(p) * m;
    const double* b = B + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline double softplus(double f) {
  // log(1 + e^f), stable for large |f|
  if (f > 0.0) return f + std::log1p(std::exp(-f));
  return std::log1p(std::exp(f));
}

inline double logistic(double f) {
  if (f >= 0.0) {
    const double e = std::exp(-f);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(f);
  return e / (1.0 + e);
}

}  // namespace detail

// Stable logistic loss log(1+exp(f)) - y*f; linear in y, so soft labels work.
inline double logistic_loss_value(double f, double y) {
  return detail::softplus(f) - y * f;
}

enum class Op {
  Input,
  MatMul,
  Conv2d,
  AddBiasRows,
  AddBiasChannels,
  Relu,
  MaxPool2,
  Flatten,
  ScaleColumns,
  ScaleFilters,
  MulElem,
  LogisticLoss,
  SoftCrossEntropy,
  Mean,
  Sum,
  Add,
  Scale,
  L1Distance,
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward() runs
// one reverse sweep over creation order, so gradients are deterministic.
// The tape is confined to a single thread.
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1, b = -1;     // operand node ids
    Tensor value;
    Tensor adjoint;         // allocated by backward(), same shape as value
    int i0 = 0, i1 = 0;     // op integers (stride, padding)
    double c0 = 0.0;        // op constant (scale factor)
    Tensor aux;             // constant payload (targets, labels, l1 reference)
    Tensor cache;           // forward intermediates reused by backward
    std::vector<std::int32_t> idx;  // argmax routing for max-pool
  };

  int input(Tensor v) { return push(Op::Input, -1, -1, std::move(v)); }

  int matmul(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
      throw ShapeError("matmul shape mismatch: " + A.shape_str() + " x " + B.shape_str());
    Tensor out({A.dim(0), B.dim(1)});
    detail::gemm_nn(A.dim(0), A.dim(1), B.dim(1), A.data.data(), B.data.data(),
                    out.data.data());
    return push(Op::MatMul, a, b, std::move(out));
  }

  // Cross-correlation (no kernel flip). x [N,C,H,W], k [F,C,kh,kw].
  int conv2d(int x, int k, int stride, int padding) {
    const Tensor& X = val(x);
    const Tensor& K = val(k);
    if (X.rank() != 4 || K.rank() != 4)
      throw ShapeError("conv2d wants 4-d input and kernels, got " + X.shape_str() +
                       " and " + K.shape_str());
    if (X.dim(1) != K.dim(1))
      throw ShapeError("conv2d channel mismatch: input " + X.shape_str() +
                       " vs kernels " + K.shape_str());
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const int F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw || Ho < 1 || Wo < 1)
      throw ShapeError("conv2d output dimension < 1 for input " + X.shape_str() +
                       " kernels " + K.shape_str());

    // im2col -> one gemm; the column matrix is cached for backward.
    const int cols_k = C * kh * kw;
    const int rows = N * Ho * Wo;
    Tensor cols({rows, cols_k});
    im2col(X, kh, kw, stride, padding, Ho, Wo, cols);

    Tensor out_mat({rows, F});
    detail::gemm_nt(rows, cols_k, F, cols.data.data(), K.data.data(),
                    out_mat.data.data());

    Tensor out({N, F, Ho, Wo});
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f)
        for (int o = 0; o < Ho * Wo; ++o)
          out[((static_cast<std::int64_t>(n) * F + f) * Ho * Wo) + o] =
              out_mat[(static_cast<std::int64_t>(n) * Ho * Wo + o) * F + f];

    int id = push(Op::Conv2d, x, k, std::move(out));
    nodes_[static_cast<std::size_t>(id)].i0 = stride;
    nodes_[static_cast<std::size_t>(id)].i1 = padding;
    nodes_[static_cast<std::size_t>(id)].cache = std::move(cols);
    return id;
  }

  int add_bias_rows(int x, int b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (X.rank() != 2 || B.size() != X.dim(1))
      throw ShapeError("add_bias_rows mismatch: " + X.shape_str() + " + " + B.shape_str());
    Tensor out = X;
    const int n = X.dim(0), k = X.dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) out[static_cast<std::int64_t>(i) * k + j] += B[j];
    return push(Op::AddBiasRows, x, b, std::move(out));
  }

  int add_bias_channels(int x, int b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (X.rank() != 4 || B.size() != X.dim(1))
      throw ShapeError("add_bias_channels mismatch: " + X.shape_str() + " + " + B.shape_str());
    Tensor out = X;
    const int N = X.dim(0), F = X.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(X.dim(2)) * X.dim(3);
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) {
        double* p = out.data.data() + (static_cast<std::int64_t>(n) * F + f) * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] += B[f];
      }
    return push(Op::AddBiasChannels, x, b, std::move(out));
  }

  int relu(int x) {
    Tensor out = val(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::Relu, x, -1, std::move(out));
  }

  // 2x2 window max, stride 2. Ties route to the first row-major element.
  int max_pool2(int x) {
    const Tensor& X = val(x);
    if (X.rank() != 4) throw ShapeError("max_pool2 wants 4-d input, got " + X.shape_str());
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
      throw ShapeError("max_pool2 needs even spatial dims, got " + X.shape_str());
    const int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(out.size()));
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j, ++o) {
            double best = -1.0;
            std::int64_t best_at = -1;
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj) {
                const std::int64_t at = base + (2 * i + di) * static_cast<std::int64_t>(W) +
                                        (2 * j + dj);
                if (best_at < 0 || X[at] > best) {
                  best = X[at];
                  best_at = at;
                }
              }
            out[o] = best;
            arg[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(best_at);
          }
      }
    int id = push(Op::MaxPool2, x, -1, std::move(out));
    nodes_[static_cast<std::size_t>(id)].idx = std::move(arg);
    return id;
  }

  // [N,...] -> [N, prod(rest)]
  int flatten(int x) {
    const Tensor& X = val(x);
    if (X.rank() < 2) throw ShapeError("flatten wants rank >= 2, got " + X.shape_str());
    Tensor out = X;
    const int n = X.dim(0);
    out.shape = {n, static_cast<int>(X.size() / n)};
    return push(Op::Flatten, x, -1, std::move(out));
  }

  // W [in,out] with per-column scale m [out]: the per-neuron mask of a dense layer.
  int scale_columns(int w, int m) {
    const Tensor& W = val(w);
    const Tensor& M = val(m);
    if (W.rank() != 2 || M.size() != W.dim(1))
      throw ShapeError("scale_columns mismatch: " + W.shape_str() + " by " + M.shape_str());
    Tensor out = W;
    const int in = W.dim(0), outn = W.dim(1);
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < outn; ++j) out[static_cast<std::int64_t>(i) * outn + j] *= M[j];
    return push(Op::ScaleColumns, w, m, std::move(out));
  }

  // K [F,C,kh,kw] with per-filter scale m [F]: the per-filter mask of a conv layer.
  int scale_filters(int k, int m) {
    const Tensor& K = val(k);
    const Tensor& M = val(m);
    if (K.rank() != 4 || M.size() != K.dim(0))
      throw ShapeError("scale_filters mismatch: " + K.shape_str() + " by " + M.shape_str());
    Tensor out = K;
    const std::int64_t block = K.size() / K.dim(0);
    for (int f = 0; f < K.dim(0); ++f) {
      double* p = out.data.data() + f * block;
      for (std::int64_t i = 0; i < block; ++i) p[i] *= M[f];
    }
    return push(Op::ScaleFilters, k, m, std::move(out));
  }

  int mul_elem(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw ShapeError("mul_elem shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push(Op::MulElem, a, b, std::move(out));
  }

  // Elementwise log(1+exp(f)) - y*f against a constant label tensor.
  int logistic_loss(int f, Tensor y) {
    const Tensor& F = val(f);
    if (!F.same_shape(y))
      throw ShapeError("logistic_loss label shape mismatch: " + F.shape_str() + " vs " +
                       y.shape_str());
    Tensor out = F;
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = logistic_loss_value(F[i], y[i]);
    int id = push(Op::LogisticLoss, f, -1, std::move(out));
    nodes_[static_cast<std::size_t>(id)].aux = std::move(y);
    return id;
  }

  // Mean over rows of -sum_k targets[k] * log softmax(logits)[k].
  // Targets must be row-stochastic with nonnegative entries.
  int soft_cross_entropy(int logits, Tensor targets) {
    const Tensor& L = val(logits);
    if (L.rank() != 2 || !L.same_shape(targets))
      throw ShapeError("soft_cross_entropy shape mismatch: " + L.shape_str() + " vs " +
                       targets.shape_str());
    const int n = L.dim(0), c = L.dim(1);
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < c; ++j) {
        const double t = targets[static_cast<std::int64_t>(i) * c + j];
        if (t < 0.0)
          throw ValueError("soft_cross_entropy target has negative entry in row " +
                           std::to_string(i));
        row += t;
      }
      if (std::abs(row - 1.0) > 1e-9)
        throw ValueError("soft_cross_entropy target row " + std::to_string(i) +
                         " sums to " + std::to_string(row) + ", not 1");
    }

    Tensor softmax({n, c});
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* l = L.data.data() + static_cast<std::int64_t>(i) * c;
      double m = l[0];
      for (int j = 1; j < c; ++j) m = std::max(m, l[j]);
      double z = 0.0;
      for (int j = 0; j < c; ++j) z += std::exp(l[j] - m);
      const double lse = m + std::log(z);
      for (int j = 0; j < c; ++j) {
        const double logp = l[j] - lse;
        softmax[static_cast<std::int64_t>(i) * c + j] = std::exp(logp);
        total -= targets[static_cast<std::int64_t>(i) * c + j] * logp;
      }
    }
    int id = push(Op::SoftCrossEntropy, logits, -1, Tensor::scalar(total / n));
    nodes_[static_cast<std::size_t>(id)].aux = std::move(targets);
    nodes_[static_cast<std::size_t>(id)].cache = std::move(softmax);
    return id;
  }

  int mean(int x) {
    const Tensor& X = val(x);
    double s = 0.0;
    for (double v : X.data) s += v;
    return push(Op::Mean, x, -1, Tensor::scalar(s / static_cast<double>(X.size())));
  }

  int sum(int x) {
    const Tensor& X = val(x);
    double s = 0.0;
    for (double v : X.data) s += v;
    return push(Op::Sum, x, -1, Tensor::scalar(s));
  }

  int add(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw ShapeError("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(Op::Add, a, b, std::move(out));
  }

  int scale(int a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    int id = push(Op::Scale, a, -1, std::move(out));
    nodes_[static_cast<std::size_t>(id)].c0 = c;
    return id;
  }

  // sum |ref - x|; subgradient 0 where x == ref.
  int l1_distance(int x, Tensor ref) {
    const Tensor& X = val(x);
    if (!X.same_shape(ref))
      throw ShapeError("l1_distance shape mismatch: " + X.shape_str() + " vs " +
                       ref.shape_str());
    double s = 0.0;
    for (std::int64_t i = 0; i < X.size(); ++i) s += std::abs(ref[i] - X[i]);
    int id = push(Op::L1Distance, x, -1, Tensor::scalar(s));
    nodes_[static_cast<std::size_t>(id)].aux = std::move(ref);
    return id;
  }

  const Tensor& value(int id) const { return val(id); }

  const Tensor& grad(int id) const {
    const Tensor& g = nodes_[static_cast<std::size_t>(id)].adjoint;
    if (g.data.empty()) throw ValueError("grad requested before backward()");
    return g;
  }

  // Populates adjoints for every node by one reverse topological sweep.
  void backward(int root) {
    if (val(root).size() != 1)
      throw ValueError("backward root must be scalar, got shape " + val(root).shape_str());
    for (auto& n : nodes_) {
      n.adjoint = Tensor(n.value.shape, 0.0);
    }
    nodes_[static_cast<std::size_t>(root)].adjoint[0] = 1.0;
    for (int id = root; id >= 0; --id) backprop_node(id);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;

  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  int push(Op op, int a, int b, Tensor v) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void im2col(const Tensor& X, int kh, int kw, int stride, int pad, int Ho,
                     int Wo, Tensor& cols) {
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const int K = C * kh * kw;
    std::int64_t r = 0;
    for (int n = 0; n < N; ++n)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo, ++r) {
          double* dst = cols.data.data() + r * K;
          std::int64_t q = 0;
          for (int c = 0; c < C; ++c) {
            const double* plane =
                X.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int i = 0; i < kh; ++i) {
              const int hi = ho * stride - pad + i;
              for (int j = 0; j < kw; ++j, ++q) {
                const int wi = wo * stride - pad + j;
                dst[q] = (hi >= 0 && hi < H && wi >= 0 && wi < W)
                             ? plane[static_cast<std::int64_t>(hi) * W + wi]
                             : 0.0;
              }
            }
          }
        }
  }

  void backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.adjoint;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::MatMul: {
        const Tensor& A = val(n.a);
        const Tensor& B = val(n.b);
        Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        // dA += g * B^T ; dB += A^T * g
        detail::gemm_nt(A.dim(0), B.dim(1), A.dim(1), g.data.data(), B.data.data(),
                        dA.data.data());
        detail::gemm_tn(A.dim(1), A.dim(0), B.dim(1), A.data.data(), g.data.data(),
                        dB.data.data());
        break;
      }
      case Op::Conv2d: {
        const Tensor& X = val(n.a);
        const Tensor& K = val(n.b);
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dK = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
        const int F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
        const int Ho = n.value.dim(2), Wo = n.value.dim(3);
        const int stride = n.i0, pad = n.i1;
        const int cols_k = C * kh * kw;
        const int rows = N * Ho * Wo;

        Tensor g_mat({rows, F});
        for (int nn = 0; nn < N; ++nn)
          for (int f = 0; f < F; ++f)
            for (int o = 0; o < Ho * Wo; ++o)
              g_mat[(static_cast<std::int64_t>(nn) * Ho * Wo + o) * F + f] =
                  g[((static_cast<std::int64_t>(nn) * F + f) * Ho * Wo) + o];

        // dK += g_mat^T * cols
        detail::gemm_tn(F, rows, cols_k, g_mat.data.data(), n.cache.data.data(),
                        dK.data.data());

        // dCols = g_mat * K_mat, scattered back through im2col
        Tensor dcols({rows, cols_k});
        detail::gemm_nn(rows, F, cols_k, g_mat.data.data(), K.data.data(),
                        dcols.data.data());
        std::int64_t r = 0;
        for (int nn = 0; nn < N; ++nn)
          for (int ho = 0; ho < Ho; ++ho)
            for (int wo = 0; wo < Wo; ++wo, ++r) {
              const double* src = dcols.data.data() + r * cols_k;
              std::int64_t q = 0;
              for (int c = 0; c < C; ++c) {
                double* plane =
                    dX.data.data() + (static_cast<std::int64_t>(nn) * C + c) * H * W;
                for (int i = 0; i < kh; ++i) {
                  const int hi = ho * stride - pad + i;
                  for (int j = 0; j < kw; ++j, ++q) {
                    const int wi = wo * stride - pad + j;
                    if (hi >= 0 && hi < H && wi >= 0 && wi < W)
                      plane[static_cast<std::int64_t>(hi) * W + wi] += src[q];
                  }
                }
              }
            }
        break;
      }
      case Op::AddBiasRows: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        const int rows = n.value.dim(0), k = n.value.dim(1);
        for (std::int64_t i = 0; i < dX.size(); ++i) dX[i] += g[i];
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < k; ++j) dB[j] += g[static_cast<std::int64_t>(i) * k + j];
        break;
      }
      case Op::AddBiasChannels: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        const int N = n.value.dim(0), F = n.value.dim(1);
        const std::int64_t plane =
            static_cast<std::int64_t>(n.value.dim(2)) * n.value.dim(3);
        for (std::int64_t i = 0; i < dX.size(); ++i) dX[i] += g[i];
        for (int nn = 0; nn < N; ++nn)
          for (int f = 0; f < F; ++f) {
            const double* p = g.data.data() + (static_cast<std::int64_t>(nn) * F + f) * plane;
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            dB[f] += s;
          }
        break;
      }
      case Op::Relu: {
        const Tensor& X = val(n.a);
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t i = 0; i < X.size(); ++i)
          if (X[i] > 0.0) dX[i] += g[i];  // subgradient at 0 is 0
        break;
      }
      case Op::MaxPool2: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t o = 0; o < n.value.size(); ++o)
          dX[n.idx[static_cast<std::size_t>(o)]] += g[o];
        break;
      }
      case Op::Flatten: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t i = 0; i < dX.size(); ++i) dX[i] += g[i];
        break;
      }
      case Op::ScaleColumns: {
        const Tensor& W = val(n.a);
        const Tensor& M = val(n.b);
        Tensor& dW = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dM = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        const int in = W.dim(0), outn = W.dim(1);
        for (int i = 0; i < in; ++i)
          for (int j = 0; j < outn; ++j) {
            const std::int64_t at = static_cast<std::int64_t>(i) * outn + j;
            dW[at] += g[at] * M[j];
            dM[j] += g[at] * W[at];
          }
        break;
      }
      case Op::ScaleFilters: {
        const Tensor& K = val(n.a);
        const Tensor& M = val(n.b);
        Tensor& dK = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dM = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        const std::int64_t block = K.size() / K.dim(0);
        for (int f = 0; f < K.dim(0); ++f)
          for (std::int64_t i = 0; i < block; ++i) {
            const std::int64_t at = f * block + i;
            dK[at] += g[at] * M[f];
            dM[f] += g[at] * K[at];
          }
        break;
      }
      case Op::MulElem: {
        const Tensor& A = val(n.a);
        const Tensor& B = val(n.b);
        Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        for (std::int64_t i = 0; i < A.size(); ++i) {
          dA[i] += g[i] * B[i];
          dB[i] += g[i] * A[i];
        }
        break;
      }
      case Op::LogisticLoss: {
        const Tensor& F = val(n.a);
        Tensor& dF = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t i = 0; i < F.size(); ++i)
          dF[i] += g[i] * (detail::logistic(F[i]) - n.aux[i]);
        break;
      }
      case Op::SoftCrossEntropy: {
        Tensor& dL = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        const int rows = n.cache.dim(0);
        const double s = g[0] / rows;
        for (std::int64_t i = 0; i < dL.size(); ++i)
          dL[i] += s * (n.cache[i] - n.aux[i]);
        break;
      }
      case Op::Mean: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        const double s = g[0] / static_cast<double>(dX.size());
        for (double& v : dX.data) v += s;
        break;
      }
      case Op::Sum: {
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (double& v : dX.data) v += g[0];
        break;
      }
      case Op::Add: {
        Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].adjoint;
        for (std::int64_t i = 0; i < dA.size(); ++i) {
          dA[i] += g[i];
          dB[i] += g[i];
        }
        break;
      }
      case Op::Scale: {
        Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t i = 0; i < dA.size(); ++i) dA[i] += g[i] * n.c0;
        break;
      }
      case Op::L1Distance: {
        const Tensor& X = val(n.a);
        Tensor& dX = nodes_[static_cast<std::size_t>(n.a)].adjoint;
        for (std::int64_t i = 0; i < X.size(); ++i) {
          const double d = X[i] - n.aux[i];
          if (d > 0.0)
            dX[i] += g[0];
          else if (d < 0.0)
            dX[i] -= g[0];
        }
        break;
      }
    }
  }
};

}  // namespace nftlab
