#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nftlab/autodiff.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/model.hpp"
#include "nftlab/rng.hpp"
#include "nftlab/train.hpp"

namespace nftlab {

namespace detail {

inline void require_theorem_model(const ModelSpec& spec) {
  if (spec.any_bias())
    throw ValueError("theorem diagnostics need a bias-free model");
  if (spec.classes != 1)
    throw ValueError("theorem diagnostics need a scalar output head");
}

// f(x) and the gradient of f with respect to x for one [C,H,W] sample.
inline std::pair<double, Tensor> scalar_output_and_input_grad(const ModelSpec& spec,
                                                              const Parameters& params,
                                                              const Tensor& x) {
  Tensor batch({1, spec.in_channels, spec.in_height, spec.in_width});
  if (batch.size() != x.size())
    throw ShapeError("input " + x.shape_str() + " does not match model input");
  batch.data = x.data;
  Tape tape;
  const int xin = tape.input(batch);
  const ForwardNodes fn = build_forward(tape, spec, params, nullptr, xin);
  const int f = tape.sum(fn.logits);  // [1,1] -> scalar
  tape.backward(f);
  Tensor g = tape.grad(xin);
  g.shape = x.shape;
  return {tape.value(f)[0], std::move(g)};
}

}  // namespace detail

// |f(x) - <grad f(x), x>| / (|f(x)| + 1e-12). Zero (to rounding) exactly when
// the network is positively homogeneous, i.e. bias-free with relu/max-pool
// nonlinearities only.
inline double euler_residual(const ModelSpec& spec, const Parameters& params,
                             const Tensor& x) {
  detail::require_theorem_model(spec);
  const auto [f, g] = detail::scalar_output_and_input_grad(spec, params, x);
  const double inner = dot(g, x);
  return std::abs(f - inner) / (std::abs(f) + 1e-12);
}

struct EpsilonEstimate {
  std::vector<double> eps;       // per retained sample
  std::vector<int> sample_index; // dataset index per entry of eps
  std::vector<int> excluded;     // zero-gradient samples, reported not used
  double eps_min = 0.0;
  double c_x = 0.0;
  double expected_one_minus_lambda = 0.0;
};

// eps_i = R_i c_x E[1-lambda] sqrt(d) with R_i = cos(grad f(x_i), x_i),
// c_x = min_i |x_i| / sqrt(d), E[1-lambda] = b/(a+b) for Beta(a,b).
inline EpsilonEstimate estimate_epsilon(const ModelSpec& spec, const Parameters& params,
                                        const Dataset& ds, double beta_a, double beta_b) {
  detail::require_theorem_model(spec);
  if (beta_a <= 0.0 || beta_b <= 0.0)
    throw ValueError("beta distribution parameters must be positive");
  if (ds.count() == 0) throw ValueError("estimate_epsilon over empty dataset");

  EpsilonEstimate out;
  out.expected_one_minus_lambda = beta_b / (beta_a + beta_b);
  const double d = static_cast<double>(ds.sample_size());
  const double sqrt_d = std::sqrt(d);

  double cx = -1.0;
  for (int i = 0; i < ds.count(); ++i) {
    const double norm = l2_norm(ds.image(i));
    const double c = norm / sqrt_d;
    if (cx < 0.0 || c < cx) cx = c;
  }
  out.c_x = cx;

  for (int i = 0; i < ds.count(); ++i) {
    const Tensor x = ds.image(i);
    const auto [f, g] = detail::scalar_output_and_input_grad(spec, params, x);
    (void)f;
    const double gn = l2_norm(g);
    const double xn = l2_norm(x);
    if (gn < 1e-12 || xn < 1e-12) {
      out.excluded.push_back(i);
      continue;
    }
    const double r = dot(g, x) / (gn * xn);
    out.eps.push_back(r * cx * out.expected_one_minus_lambda * sqrt_d);
    out.sample_index.push_back(i);
  }
  if (out.eps.empty()) throw ValueError("every sample has a zero gradient");
  out.eps_min = out.eps[0];
  for (double e : out.eps) out.eps_min = std::min(out.eps_min, e);
  return out;
}

enum class PerturbDirection { Gradient, Random };

struct BoundReport {
  double mix_loss_mean = 0.0;
  double mix_loss_stderr = 0.0;
  double ideal_loss = 0.0;          // mean_i loss(y_i, f(x_i + eps_i u_i))
  double ideal_loss_min_eps = 0.0;  // same with the global eps = min eps_i
  double eps_min = 0.0;
  double c_x = 0.0;
  double expected_one_minus_lambda = 0.0;
  int mc_samples = 0;
  int excluded_samples = 0;
  bool inequality_holds = false;
};

// Monte-Carlo check of the mixup upper bound: L_mix estimated over random
// pairings and lambda draws, the perturbed side evaluated at x_i + eps_i u_i
// where u_i is the normalized input gradient (or a random unit direction).
// The verdict allows a 2-stderr guard band since both sides are estimates.
inline BoundReport mixup_bound_check(const ModelSpec& spec, const Parameters& params,
                                     const Dataset& ds, double beta_a, double beta_b,
                                     int mc_samples,
                                     PerturbDirection direction = PerturbDirection::Gradient,
                                     std::uint64_t seed = 0) {
  detail::require_theorem_model(spec);
  if (mc_samples < 100) throw ValueError("mixup_bound_check needs >= 100 mc samples");
  for (int y : ds.labels)
    if (y != 0 && y != 1)
      throw ValueError("mixup_bound_check needs binary labels in {0,1}");

  const EpsilonEstimate eps = estimate_epsilon(spec, params, ds, beta_a, beta_b);
  BoundReport report;
  report.eps_min = eps.eps_min;
  report.c_x = eps.c_x;
  report.expected_one_minus_lambda = eps.expected_one_minus_lambda;
  report.mc_samples = mc_samples;
  report.excluded_samples = static_cast<int>(eps.excluded.size());

  Rng rng(seed);
  const int n = ds.count();
  const std::int64_t row = ds.sample_size();

  // L_mix by Monte Carlo, evaluated in chunks through the batched forward.
  double sum = 0.0, sum_sq = 0.0;
  constexpr int kChunk = 256;
  for (int done = 0; done < mc_samples; done += kChunk) {
    const int m = std::min(kChunk, mc_samples - done);
    Tensor batch({m, ds.channels(), ds.height(), ds.width()});
    std::vector<double> soft_y(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t) {
      const int i = rng.uniform_int(n);
      const int j = rng.uniform_int(n);
      const double lambda = rng.beta(beta_a, beta_b);
      const double* xi = ds.images.data.data() + static_cast<std::int64_t>(i) * row;
      const double* xj = ds.images.data.data() + static_cast<std::int64_t>(j) * row;
      double* dst = batch.data.data() + static_cast<std::int64_t>(t) * row;
      for (std::int64_t k = 0; k < row; ++k)
        dst[k] = lambda * xi[k] + (1.0 - lambda) * xj[k];
      soft_y[static_cast<std::size_t>(t)] =
          lambda * ds.labels[static_cast<std::size_t>(i)] +
          (1.0 - lambda) * ds.labels[static_cast<std::size_t>(j)];
    }
    const Tensor logits = forward(spec, params, nullptr, batch);
    for (int t = 0; t < m; ++t) {
      const double loss = logistic_loss_value(logits[t], soft_y[static_cast<std::size_t>(t)]);
      sum += loss;
      sum_sq += loss * loss;
    }
  }
  report.mix_loss_mean = sum / mc_samples;
  const double var =
      std::max(0.0, sum_sq / mc_samples - report.mix_loss_mean * report.mix_loss_mean);
  report.mix_loss_stderr = std::sqrt(var / mc_samples);

  // Perturbed (ideal-side) losses at eps_i and at the global min eps.
  double ideal_sum = 0.0, ideal_min_sum = 0.0;
  int counted = 0;
  for (std::size_t k = 0; k < eps.eps.size(); ++k) {
    const int i = eps.sample_index[k];
    const Tensor x = ds.image(i);
    Tensor u;
    if (direction == PerturbDirection::Gradient) {
      auto [f, g] = detail::scalar_output_and_input_grad(spec, params, x);
      (void)f;
      const double gn = l2_norm(g);
      u = g;
      for (double& v : u.data) v /= gn;
    } else {
      u = Tensor(x.shape);
      for (double& v : u.data) v = rng.normal();
      const double un = l2_norm(u);
      for (double& v : u.data) v /= un;
    }
    auto eval_at = [&](double e) {
      Tensor xb({1, ds.channels(), ds.height(), ds.width()});
      for (std::int64_t q = 0; q < row; ++q) xb[q] = x[q] + e * u[q];
      const Tensor logits = forward(spec, params, nullptr, xb);
      return logistic_loss_value(logits[0],
                                 static_cast<double>(ds.labels[static_cast<std::size_t>(i)]));
    };
    ideal_sum += eval_at(eps.eps[k]);
    ideal_min_sum += eval_at(eps.eps_min);
    ++counted;
  }
  report.ideal_loss = ideal_sum / counted;
  report.ideal_loss_min_eps = ideal_min_sum / counted;
  report.inequality_holds =
      report.mix_loss_mean >= report.ideal_loss - 2.0 * report.mix_loss_stderr;
  return report;
}

// Plain logistic-loss SGD for the bias-free binary models the diagnostics
// run on; the main train loop is multiclass soft-CE only.
inline void train_binary_logistic(const ModelSpec& spec, Parameters& params,
                                  const Dataset& ds, double lr, double momentum,
                                  int epochs, int batch_size, std::uint64_t seed) {
  detail::require_theorem_model(spec);
  Velocity vel = Velocity::zeros_like(params);
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(ds.count()));
  for (int i = 0; i < ds.count(); ++i) order[static_cast<std::size_t>(i)] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(batch_size));
      const Tensor batch = gather_rows(ds.images, order, at, end);
      Tensor y({static_cast<int>(end - at), 1});
      for (std::size_t k = at; k < end; ++k)
        y[static_cast<std::int64_t>(k - at)] =
            ds.labels[static_cast<std::size_t>(order[k])];
      Tape tape;
      const int x = tape.input(batch);
      const ForwardNodes fn = build_forward(tape, spec, params, nullptr, x);
      const int loss = tape.mean(tape.logistic_loss(fn.logits, y));
      if (!std::isfinite(tape.value(loss)[0]))
        throw DivergenceError("binary training loss became non-finite");
      tape.backward(loss);
      std::vector<Tensor> grads;
      std::size_t pi = 0;
      for (const auto& l : params.layers) {
        grads.push_back(tape.grad(fn.weight_nodes[pi]));
        if (!l.bias.data.empty()) grads.push_back(tape.grad(fn.bias_nodes[pi]));
        ++pi;
      }
      sgd_step(params, grads, vel, lr, momentum, 0.0);
    }
  }
}

}  // namespace nftlab
