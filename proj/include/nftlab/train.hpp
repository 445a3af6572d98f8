#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "nftlab/attack.hpp"
#include "nftlab/autodiff.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/model.hpp"
#include "nftlab/rng.hpp"

namespace nftlab {

struct LrStep {
  int every_epochs = 0;  // 0 disables decay
  double factor = 1.0;
};

struct TrainConfig {
  double learning_rate = 5e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 30;
  int batch_size = 128;
  LrStep lr_decay;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0.0) throw ValueError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must be in [0,1)");
    if (batch_size < 1) throw ValueError("batch size must be >= 1");
    if (epochs < 0) throw ValueError("epochs must be >= 0");
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double final_acc = -1.0;
  double final_asr = -1.0;
  double wall_seconds = 0.0;
};

// One velocity tensor per trainable tensor, same shapes.
struct Velocity {
  std::vector<Tensor> v;

  static Velocity zeros_like(const Parameters& p) {
    Velocity vel;
    for (const auto& l : p.layers) {
      vel.v.push_back(Tensor(l.weights.shape, 0.0));
      if (!l.bias.data.empty()) vel.v.push_back(Tensor(l.bias.shape, 0.0));
    }
    return vel;
  }
};

// Classic coupled SGD with momentum:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
inline void sgd_step_tensor(Tensor& param, const Tensor& grad, Tensor& velocity,
                            double lr, double momentum, double weight_decay) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw ShapeError("sgd_step shape mismatch: param " + param.shape_str() + ", grad " +
                     grad.shape_str() + ", velocity " + velocity.shape_str());
  for (std::int64_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

inline void sgd_step(Parameters& params, const std::vector<Tensor>& grads,
                     Velocity& velocity, double lr, double momentum,
                     double weight_decay) {
  std::size_t g = 0;
  for (auto& l : params.layers) {
    sgd_step_tensor(l.weights, grads[g], velocity.v[g], lr, momentum, weight_decay);
    ++g;
    if (!l.bias.data.empty()) {
      sgd_step_tensor(l.bias, grads[g], velocity.v[g], lr, momentum, weight_decay);
      ++g;
    }
  }
}

inline Tensor one_hot(const std::vector<int>& labels, int classes) {
  Tensor t({static_cast<int>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i)
    t[static_cast<std::int64_t>(i) * classes + labels[i]] = 1.0;
  return t;
}

inline Tensor gather_rows(const Tensor& images, const std::vector<int>& order,
                          std::size_t from, std::size_t to) {
  const std::int64_t row = images.size() / images.dim(0);
  std::vector<int> shape = images.shape;
  shape[0] = static_cast<int>(to - from);
  Tensor out(shape);
  for (std::size_t k = from; k < to; ++k)
    std::copy_n(
        images.data.begin() + static_cast<std::ptrdiff_t>(order[k] * row), row,
        out.data.begin() + static_cast<std::ptrdiff_t>((k - from) * row));
  return out;
}

using EpochHook = std::function<void(int epoch, double mean_loss)>;

// Seeded-shuffled minibatch SGD on soft cross-entropy with one-hot targets.
// Deterministic given (params, dataset, config).
inline TrainReport train(const ModelSpec& spec, Parameters& params, const Dataset& ds,
                         const TrainConfig& cfg, const EpochHook& hook = nullptr) {
  cfg.validate();
  if (ds.count() == 0) throw ValueError("train dataset is empty");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  Velocity vel = Velocity::zeros_like(params);
  Rng rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(ds.count()));
  for (int i = 0; i < ds.count(); ++i) order[static_cast<std::size_t>(i)] = i;

  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_decay.every_epochs > 0 && epoch > 0 &&
        epoch % cfg.lr_decay.every_epochs == 0)
      lr *= cfg.lr_decay.factor;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const Tensor batch = gather_rows(ds.images, order, at, end);
      std::vector<int> batch_labels;
      batch_labels.reserve(end - at);
      for (std::size_t k = at; k < end; ++k)
        batch_labels.push_back(ds.labels[static_cast<std::size_t>(order[k])]);

      Tape tape;
      const int x = tape.input(batch);
      const ForwardNodes fn = build_forward(tape, spec, params, nullptr, x);
      const int loss = tape.soft_cross_entropy(fn.logits, one_hot(batch_labels, ds.classes));
      const double loss_v = tape.value(loss)[0];
      if (!std::isfinite(loss_v))
        throw DivergenceError("training loss became non-finite at epoch " +
                              std::to_string(epoch));
      loss_sum += loss_v * static_cast<double>(end - at);
      seen += static_cast<std::int64_t>(end - at);
      tape.backward(loss);

      std::vector<Tensor> grads;
      std::size_t pi = 0;
      for (const auto& l : params.layers) {
        grads.push_back(tape.grad(fn.weight_nodes[pi]));
        if (!l.bias.data.empty()) grads.push_back(tape.grad(fn.bias_nodes[pi]));
        ++pi;
      }
      sgd_step(params, grads, vel, lr, cfg.momentum, cfg.weight_decay);
    }
    const double mean_loss = loss_sum / static_cast<double>(seen);
    report.epoch_loss.push_back(mean_loss);
    if (hook) hook(epoch, mean_loss);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline TrainReport train(const ModelSpec& spec, Parameters& params,
                         const PoisonedDataset& poisoned, const TrainConfig& cfg,
                         const EpochHook& hook = nullptr) {
  return train(spec, params, poisoned.dataset, cfg, hook);
}

}  // namespace nftlab
