#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "nftlab/autodiff.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/model.hpp"
#include "nftlab/rng.hpp"
#include "nftlab/train.hpp"

namespace nftlab {

// Exponential per-layer lower bound on mask values. l is the maskable-layer
// ordinal starting at 1.
struct Schedule {
  double alpha = 0.8;
  double beta = 0.5;

  double mu(int l) const {
    if (l < 1) throw ValueError("schedule index starts at 1");
    return std::min(1.0, alpha * std::exp(-beta * l));
  }
};

inline double mu(int l, const Schedule& s) { return s.mu(l); }

struct NftConfig {
  double mu_alpha = 0.8;
  double mu_beta = 0.5;
  double beta_a = 1.0;   // lambda ~ Beta(beta_a, beta_b)
  double beta_b = 1.0;
  double eta_base = 5e-4;
  double learning_rate = 0.05;
  double momentum = 0.95;
  int epochs = 100;
  int batch_size = 128;
  bool skip_first_layer = true;
  bool mask_bias = false;
  bool exhaustive_pairs = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (mu_alpha <= 0.0 || mu_alpha > 1.0) throw ValueError("mu alpha must be in (0,1]");
    if (mu_beta < 0.0) throw ValueError("mu beta must be >= 0");
    if (beta_a <= 0.0 || beta_b <= 0.0)
      throw ValueError("beta distribution parameters must be positive");
    if (eta_base < 0.0) throw ValueError("eta base must be >= 0");
    if (learning_rate <= 0.0) throw ValueError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must be in [0,1)");
    if (epochs < 0) throw ValueError("epochs must be >= 0");
    if (batch_size < 2) throw ValueError("batch size must be >= 2 for mixup");
  }

  Schedule schedule() const { return {mu_alpha, mu_beta}; }
};

// eta_c = eta_base / n_c with n_c = floor(N_val / c).
inline double eta_c(double eta_base, int n_c) {
  if (n_c < 1) throw ValueError("eta_c needs n_c >= 1");
  return eta_base / static_cast<double>(n_c);
}

struct MixedBatch {
  Tensor images;
  Tensor soft_targets;  // [N,c], row-stochastic
  double lambda = 1.0;
};

// x~ = lambda x_i + (1-lambda) x_perm(i), same convex combination of one-hot
// labels. perm.size() must equal the batch size.
inline MixedBatch mix_with_lambda(const Tensor& images, const std::vector<int>& labels,
                                  int classes, const std::vector<int>& perm,
                                  double lambda) {
  const int n = images.dim(0);
  if (static_cast<int>(perm.size()) != n)
    throw ShapeError("mixup permutation length " + std::to_string(perm.size()) +
                     " does not match batch size " + std::to_string(n));
  MixedBatch out;
  out.lambda = lambda;
  out.images = images;
  const std::int64_t row = images.size() / n;
  for (int i = 0; i < n; ++i) {
    const double* other =
        images.data.data() + static_cast<std::int64_t>(perm[static_cast<std::size_t>(i)]) * row;
    double* dst = out.images.data.data() + static_cast<std::int64_t>(i) * row;
    for (std::int64_t k = 0; k < row; ++k)
      dst[k] = lambda * dst[k] + (1.0 - lambda) * other[k];
  }
  out.soft_targets = Tensor({n, classes});
  for (int i = 0; i < n; ++i) {
    out.soft_targets[static_cast<std::int64_t>(i) * classes +
                     labels[static_cast<std::size_t>(i)]] += lambda;
    out.soft_targets[static_cast<std::int64_t>(i) * classes +
                     labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]] +=
        1.0 - lambda;
  }
  return out;
}

// One lambda ~ Beta(a,b) per batch, pairing by seeded shuffle.
inline MixedBatch mixup_batch(const Tensor& images, const std::vector<int>& labels,
                              int classes, double beta_a, double beta_b, Rng& rng) {
  const int n = images.dim(0);
  if (n < 2) throw ValueError("mixup batch must have >= 2 samples");
  const double lambda = rng.beta(beta_a, beta_b);
  const std::vector<int> perm = rng.permutation(n);
  return mix_with_lambda(images, labels, classes, perm, lambda);
}

// Mixed cross-entropy plus the l1 mask regularizer, as one number.
inline double nft_loss(const ModelSpec& spec, const Parameters& params,
                       const MaskSet& masks, const MaskSet& initial_masks,
                       const MixedBatch& batch, double eta, bool mask_bias = false) {
  Tape tape;
  const int x = tape.input(batch.images);
  const ForwardNodes fn = build_forward(tape, spec, params, &masks, x, mask_bias);
  const int ce = tape.soft_cross_entropy(fn.logits, batch.soft_targets);
  double reg = 0.0;
  for (std::size_t i = 0; i < masks.masks.size(); ++i) {
    if (!masks.maskable[i]) continue;
    for (std::int64_t k = 0; k < masks.masks[i].size(); ++k)
      reg += std::abs(initial_masks.masks[i][k] - masks.masks[i][k]);
  }
  return tape.value(ce)[0] + eta * reg;
}

// min(1, max(mu(l), m)) for every maskable mask entry.
inline void clip_masks(MaskSet& masks, const Schedule& schedule) {
  int l = 0;
  for (std::size_t i = 0; i < masks.masks.size(); ++i) {
    if (!masks.maskable[i]) continue;
    ++l;
    const double lo = schedule.mu(l);
    for (double& m : masks.masks[i].data) m = std::min(1.0, std::max(lo, m));
  }
}

struct PurifyTraceEpoch {
  double mixup_loss = 0.0;  // mean CE term over the epoch
  double reg_term = 0.0;    // eta * l1 at epoch end
  std::vector<std::pair<double, double>> mask_min_max;  // per parametric layer
};

struct PurifyResult {
  MaskSet masks;
  Parameters purified;  // theta (.) M-hat
  std::vector<PurifyTraceEpoch> trace;
};

// Called after every optimizer step with the clipped mask state.
using MaskStepHook = std::function<void(const MaskSet&)>;

namespace detail {

inline std::vector<std::pair<double, double>> mask_min_max(const MaskSet& masks) {
  std::vector<std::pair<double, double>> out;
  for (const auto& m : masks.masks) {
    double lo = m[0], hi = m[0];
    for (double v : m.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out.emplace_back(lo, hi);
  }
  return out;
}

}  // namespace detail

// The mask fine-tuning loop: masks start at 1 and are the only variables
// updated. Every SGD step is followed by a clip to [mu(l), 1]; weights and
// biases of the input model are never written.
inline PurifyResult purify_nft(const ModelSpec& spec, const Parameters& params,
                               const Dataset& validation, const NftConfig& cfg,
                               const MaskStepHook& step_hook = nullptr) {
  cfg.validate();
  if (validation.count() == 0) throw ValueError("validation set is empty");
  const int n_c = validation.count() / validation.classes;
  if (n_c < 1)
    throw ValueError("validation set smaller than class count; eta_c undefined");
  const double eta = eta_c(cfg.eta_base, n_c);
  const Schedule schedule = cfg.schedule();

  PurifyResult result;
  result.masks = MaskSet::ones_for(spec, cfg.skip_first_layer);
  const MaskSet initial = result.masks;
  {
    bool any = false;
    for (bool b : result.masks.maskable) any = any || b;
    if (!any) throw ValueError("model has no maskable layer");
  }

  std::vector<Tensor> velocity;
  for (const auto& m : result.masks.masks) velocity.push_back(Tensor(m.shape, 0.0));

  Rng rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(validation.count()));
  for (int i = 0; i < validation.count(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double ce_sum = 0.0;
    std::int64_t seen = 0;

    auto run_step = [&](const Tensor& batch_images, const std::vector<int>& batch_labels) {
      MixedBatch mixed;
      if (cfg.exhaustive_pairs) {
        // Literal double sum over ordered pairs with one lambda draw.
        const int n = batch_images.dim(0);
        const double lambda = rng.beta(cfg.beta_a, cfg.beta_b);
        const std::int64_t row = batch_images.size() / n;
        std::vector<int> pair_shape = batch_images.shape;
        pair_shape[0] = n * n;
        Tensor all(pair_shape);
        std::vector<int> lhs_labels(static_cast<std::size_t>(n) * n);
        std::vector<int> perm(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const std::int64_t p = static_cast<std::int64_t>(i) * n + j;
            std::copy_n(batch_images.data.begin() + i * row, row,
                        all.data.begin() + p * row);
            lhs_labels[static_cast<std::size_t>(p)] = batch_labels[static_cast<std::size_t>(i)];
            perm[static_cast<std::size_t>(p)] = static_cast<int>(p);
          }
        // Rebuild the partner rows so pair p mixes x_i with x_j.
        Tensor partners(pair_shape);
        std::vector<int> rhs_labels(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const std::int64_t p = static_cast<std::int64_t>(i) * n + j;
            std::copy_n(batch_images.data.begin() + j * row, row,
                        partners.data.begin() + p * row);
            rhs_labels[static_cast<std::size_t>(p)] = batch_labels[static_cast<std::size_t>(j)];
          }
        mixed.lambda = lambda;
        mixed.images = all;
        for (std::int64_t k = 0; k < mixed.images.size(); ++k)
          mixed.images[k] = lambda * all[k] + (1.0 - lambda) * partners[k];
        mixed.soft_targets = Tensor({n * n, validation.classes});
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * n; ++p) {
          mixed.soft_targets[p * validation.classes + lhs_labels[static_cast<std::size_t>(p)]] +=
              lambda;
          mixed.soft_targets[p * validation.classes + rhs_labels[static_cast<std::size_t>(p)]] +=
              1.0 - lambda;
        }
      } else {
        mixed = mixup_batch(batch_images, batch_labels, validation.classes, cfg.beta_a,
                            cfg.beta_b, rng);
      }

      Tape tape;
      const int x = tape.input(mixed.images);
      const ForwardNodes fn =
          build_forward(tape, spec, params, &result.masks, x, cfg.mask_bias);
      int loss = tape.soft_cross_entropy(fn.logits, mixed.soft_targets);
      const double ce_v = tape.value(loss)[0];
      if (eta > 0.0) {
        int reg = -1;
        for (std::size_t i = 0; i < result.masks.masks.size(); ++i) {
          const int mnode = fn.mask_nodes[i];
          if (mnode < 0) continue;
          const int term = tape.l1_distance(mnode, initial.masks[i]);
          reg = reg < 0 ? term : tape.add(reg, term);
        }
        if (reg >= 0) loss = tape.add(loss, tape.scale(reg, eta));
      }
      const double loss_v = tape.value(loss)[0];
      if (!std::isfinite(loss_v))
        throw DivergenceError("purification loss became non-finite at epoch " +
                              std::to_string(epoch));
      ce_sum += ce_v * mixed.images.dim(0);
      seen += mixed.images.dim(0);
      tape.backward(loss);

      for (std::size_t i = 0; i < result.masks.masks.size(); ++i) {
        const int mnode = fn.mask_nodes[i];
        if (mnode < 0) continue;
        sgd_step_tensor(result.masks.masks[i], tape.grad(mnode), velocity[i],
                        cfg.learning_rate, cfg.momentum, 0.0);
      }
      clip_masks(result.masks, schedule);
      if (step_hook) step_hook(result.masks);
    };

    if (cfg.exhaustive_pairs) {
      run_step(validation.images, validation.labels);
    } else {
      rng.shuffle(order);
      for (std::size_t at = 0; at < order.size();
           at += static_cast<std::size_t>(cfg.batch_size)) {
        std::size_t end =
            std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
        if (end - at < 2) break;  // a trailing singleton cannot be mixed
        const Tensor batch = gather_rows(validation.images, order, at, end);
        std::vector<int> batch_labels;
        for (std::size_t k = at; k < end; ++k)
          batch_labels.push_back(validation.labels[static_cast<std::size_t>(order[k])]);
        run_step(batch, batch_labels);
      }
    }

    PurifyTraceEpoch te;
    te.mixup_loss = seen > 0 ? ce_sum / static_cast<double>(seen) : 0.0;
    double l1 = 0.0;
    for (std::size_t i = 0; i < result.masks.masks.size(); ++i) {
      if (!result.masks.maskable[i]) continue;
      for (std::int64_t k = 0; k < result.masks.masks[i].size(); ++k)
        l1 += std::abs(initial.masks[i][k] - result.masks.masks[i][k]);
    }
    te.reg_term = eta * l1;
    te.mask_min_max = detail::mask_min_max(result.masks);
    result.trace.push_back(std::move(te));
  }

  result.purified = apply_masks(params, result.masks);
  if (cfg.mask_bias) {
    // Under the bias-masking ablation the neuron mask also scales the bias.
    for (std::size_t i = 0; i < result.purified.layers.size(); ++i) {
      if (!result.masks.maskable[i]) continue;
      Tensor& b = result.purified.layers[i].bias;
      for (std::int64_t k = 0; k < b.size(); ++k) b[k] *= result.masks.masks[i][k];
    }
  }
  return result;
}

// Overfitting baseline: plain SGD fine-tuning of all weights and biases on
// un-augmented cross-entropy over the validation set.
inline Parameters purify_vanilla_ft(const ModelSpec& spec, const Parameters& params,
                                    const Dataset& validation, const NftConfig& cfg) {
  if (validation.count() == 0) throw ValueError("validation set is empty");
  Parameters out = params;
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.momentum = cfg.momentum;
  tc.weight_decay = 0.0;
  tc.epochs = cfg.epochs;
  tc.batch_size = std::max(1, std::min(cfg.batch_size, validation.count()));
  tc.seed = cfg.seed;
  train(spec, out, validation, tc);
  return out;
}

}  // namespace nftlab
