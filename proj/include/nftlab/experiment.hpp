#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "nftlab/config.hpp"
#include "nftlab/eval.hpp"

namespace nftlab {

namespace detail {

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

inline std::string fingerprint(const ojson& j) {
  const std::string s = j.dump();
  return hex64(fnv1a64(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline void write_json(const ojson& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace detail

inline ModelSpec make_model_spec(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  const int channels = d.source == DataConfig::Source::Cifar10 ? 3 : 1;
  if (cfg.model.arch == "mlp-small")
    return mlp_small(channels, d.height, d.width, d.classes, cfg.model.bias);
  return cnn_small(channels, d.height, d.width, d.classes, cfg.model.bias);
}

inline Dataset load_train_data(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset ds;
  switch (d.source) {
    case DataConfig::Source::Synthetic:
      ds = synth_generate(d.classes, d.train_per_class, d.height, d.width, d.seed,
                          d.noise_sigma);
      break;
    case DataConfig::Source::Idx:
      ds = load_idx(d.idx_train_images, d.idx_train_labels, d.classes);
      break;
    case DataConfig::Source::Cifar10:
      ds = load_cifar_binary(d.cifar_train);
      break;
  }
  if (d.normalization) ds = normalize(ds, *d.normalization);
  return ds;
}

inline Dataset load_test_data(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset ds;
  switch (d.source) {
    case DataConfig::Source::Synthetic:
      ds = synth_generate(d.classes, d.test_per_class, d.height, d.width, d.test_seed,
                          d.noise_sigma);
      break;
    case DataConfig::Source::Idx:
      ds = load_idx(d.idx_test_images, d.idx_test_labels, d.classes);
      break;
    case DataConfig::Source::Cifar10:
      ds = load_cifar_binary(d.cifar_test);
      break;
  }
  if (d.normalization) ds = normalize(ds, *d.normalization);
  return ds;
}

// Triggering happens in raw pixel space; normalized datasets are inverted,
// stamped, and re-normalized.
inline TriggeredTestSet make_triggered_test(const ExperimentConfig& cfg,
                                            const Dataset& test) {
  const PoisonSpec& p = *cfg.attack;
  if (!test.normalization) return build_poison_test_set(test, p.trigger, p.map);
  const NormalizationSpec spec = *test.normalization;
  TriggeredTestSet tts = build_poison_test_set(denormalize(test), p.trigger, p.map);
  tts.data = normalize(tts.data, spec);
  return tts;
}

inline PoisonedDataset make_poisoned_train(const ExperimentConfig& cfg,
                                           const Dataset& train,
                                           const ModelSpec* pgd_spec = nullptr,
                                           const Parameters* pgd_params = nullptr) {
  const PoisonSpec& p = *cfg.attack;
  if (!train.normalization)
    return poison_train_set(train, p, pgd_spec, pgd_params);
  const NormalizationSpec spec = *train.normalization;
  PoisonedDataset pd = poison_train_set(denormalize(train), p, pgd_spec, pgd_params);
  pd.dataset = normalize(pd.dataset, spec);
  return pd;
}

struct TrainedModel {
  ModelSpec spec;
  Parameters params;
  TrainReport report;
};

// Trains on the training pool (the split remainder, so attacker and defender
// see disjoint data) with or without the configured attack.
inline TrainedModel run_training(const ExperimentConfig& cfg, const Dataset& train_pool,
                                 bool with_attack) {
  TrainedModel out;
  out.spec = make_model_spec(cfg);
  out.params = build_model(out.spec, cfg.seed);
  if (with_attack && cfg.attack) {
    std::optional<TrainedModel> pgd_model;
    if (cfg.attack->clean_label && cfg.attack->pgd) {
      // PGD perturbations for the clean-label recipe come from a surrogate
      // trained on the same pool.
      pgd_model = run_training(cfg, train_pool, false);
    }
    const PoisonedDataset poisoned = make_poisoned_train(
        cfg, train_pool, pgd_model ? &pgd_model->spec : nullptr,
        pgd_model ? &pgd_model->params : nullptr);
    out.report = train(out.spec, out.params, poisoned.dataset, cfg.train);
  } else {
    out.report = train(out.spec, out.params, train_pool, cfg.train);
  }
  return out;
}

inline ojson config_fingerprints(const ExperimentConfig& cfg) {
  ojson f;
  f["config"] = detail::fingerprint(cfg.resolved);
  for (const char* k : {"data", "model", "attack", "train", "purify"})
    f[k] = detail::fingerprint(cfg.resolved.at(k));
  return f;
}

inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const TrainedModel& m,
                                  std::optional<MaskSet> masks = std::nullopt) {
  Checkpoint ckpt;
  ckpt.spec = m.spec;
  ckpt.params = m.params;
  ckpt.masks = std::move(masks);
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.dataset_id = detail::fingerprint(cfg.resolved.at("data"));
  ckpt.meta.poison_spec_id =
      cfg.attack ? detail::fingerprint(cfg.resolved.at("attack")) : "";
  return ckpt;
}

struct PurifyOutcome {
  Parameters purified;
  std::optional<PurifyResult> nft;  // set when method == "nft"
  double wall_seconds = 0.0;
};

inline PurifyOutcome run_purification(const ExperimentConfig& cfg, const ModelSpec& spec,
                                      const Parameters& params, const Dataset& validation,
                                      const MaskStepHook& hook = nullptr) {
  detail::Stopwatch watch;
  PurifyOutcome out;
  if (cfg.purify.method == "vanilla-ft") {
    out.purified = purify_vanilla_ft(spec, params, validation, cfg.purify.nft);
  } else {
    PurifyResult res = purify_nft(spec, params, validation, cfg.purify.nft, hook);
    out.purified = res.purified;
    out.nft = std::move(res);
  }
  out.wall_seconds = watch.seconds();
  return out;
}

inline ojson purify_trace_json(const PurifyResult& res) {
  ojson epochs = ojson::array();
  for (const auto& e : res.trace) {
    ojson ej;
    ej["mixup-loss"] = e.mixup_loss;
    ej["reg-term"] = e.reg_term;
    ojson mm = ojson::array();
    for (const auto& [lo, hi] : e.mask_min_max) mm.push_back(ojson{{"min", lo}, {"max", hi}});
    ej["mask-min-max"] = mm;
    epochs.push_back(ej);
  }
  return ojson{{"epochs", epochs}};
}

struct PipelineResult {
  TrainedModel model;          // as trained (backdoored when an attack is set)
  PurifyOutcome purify;
  ojson report;
};

// The whole experiment: data, split, (attack +) training, purification, and
// ASR/ACC/LCR bookkeeping. Returns the report; when out_dir is non-empty the
// per-stage artifacts are written there as well.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg,
                                   const std::string& out_dir = "",
                                   const MaskStepHook& hook = nullptr) {
  detail::Stopwatch total;
  const Dataset train_all = load_train_data(cfg);
  const Dataset test = load_test_data(cfg);
  const SplitResult split = holdout_split(train_all, cfg.purify.validation);

  detail::Stopwatch train_watch;
  PipelineResult out;
  out.model = run_training(cfg, split.train, cfg.attack.has_value());
  const double train_seconds = train_watch.seconds();

  std::optional<TriggeredTestSet> triggered;
  if (cfg.attack) triggered = make_triggered_test(cfg, test);

  const double acc_before = clean_accuracy(out.model.spec, out.model.params, test);
  const double asr_before =
      triggered ? attack_success_rate(out.model.spec, out.model.params, *triggered) : -1.0;

  out.purify = run_purification(cfg, out.model.spec, out.model.params, split.validation,
                                hook);

  const double acc_after = clean_accuracy(out.model.spec, out.purify.purified, test);
  const double asr_after =
      triggered ? attack_success_rate(out.model.spec, out.purify.purified, *triggered)
                : -1.0;
  const double lcr_after =
      triggered ? label_correction_rate(out.model.spec, out.purify.purified, *triggered)
                : -1.0;

  ojson report;
  report["config"] = cfg.resolved;
  report["seed"] = cfg.seed;
  ojson metrics;
  metrics["asr-before"] = triggered ? ojson(asr_before) : ojson(nullptr);
  metrics["asr-after"] = triggered ? ojson(asr_after) : ojson(nullptr);
  metrics["acc-before"] = acc_before;
  metrics["acc-after"] = acc_after;
  metrics["lcr-after"] = triggered ? ojson(lcr_after) : ojson(nullptr);
  metrics["per-class-accuracy"] =
      per_class_accuracy(out.model.spec, out.purify.purified, test);
  report["metrics"] = metrics;
  report["config-fingerprints"] = config_fingerprints(cfg);
  report["validation-size"] = split.validation.count();
  report["wall-times"] = ojson{{"train-seconds", train_seconds},
                               {"purify-seconds", out.purify.wall_seconds},
                               {"total-seconds", total.seconds()}};
  out.report = report;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(make_checkpoint(cfg, out.model), out_dir + "/model.nftc");
    TrainedModel purified{out.model.spec, out.purify.purified, {}};
    save_checkpoint(make_checkpoint(
                        cfg, purified,
                        out.purify.nft ? std::optional<MaskSet>(out.purify.nft->masks)
                                       : std::nullopt),
                    out_dir + "/purified.nftc");
    if (out.purify.nft)
      detail::write_json(purify_trace_json(*out.purify.nft), out_dir + "/purify-trace.json");
    if (cfg.export_embeddings)
      export_embeddings(out.model.spec, out.purify.purified, test,
                        triggered ? &*triggered : nullptr, out_dir + "/embeddings.csv");
    report["wall-times"]["total-seconds"] = total.seconds();
    out.report = report;
    detail::write_json(out.report, out_dir + "/report.json");
  }
  return out;
}

// Everything except purification: train on the pool and report ACC (and ASR
// against the triggered test set when an attack is configured).
inline ojson run_train_stage(const ExperimentConfig& cfg, bool with_attack,
                             const std::string& out_dir) {
  detail::Stopwatch total;
  const Dataset train_all = load_train_data(cfg);
  const Dataset test = load_test_data(cfg);
  const SplitResult split = holdout_split(train_all, cfg.purify.validation);
  TrainedModel model = run_training(cfg, split.train, with_attack);

  ojson report;
  report["config"] = cfg.resolved;
  report["seed"] = cfg.seed;
  ojson metrics;
  metrics["acc"] = clean_accuracy(model.spec, model.params, test);
  if (with_attack && cfg.attack) {
    const TriggeredTestSet triggered = make_triggered_test(cfg, test);
    metrics["asr"] = attack_success_rate(model.spec, model.params, triggered);
    metrics["lcr"] = label_correction_rate(model.spec, model.params, triggered);
  }
  metrics["epoch-loss"] = model.report.epoch_loss;
  report["metrics"] = metrics;
  report["config-fingerprints"] = config_fingerprints(cfg);
  report["wall-times"] = ojson{{"train-seconds", model.report.wall_seconds},
                               {"total-seconds", total.seconds()}};
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(make_checkpoint(cfg, model), out_dir + "/model.nftc");
    detail::write_json(report, out_dir + "/train-report.json");
  }
  return report;
}

// Purifies a checkpointed model against the config's data/attack sections.
inline ojson run_purify_stage(const ExperimentConfig& cfg, const std::string& model_path,
                              const std::string& out_dir) {
  detail::Stopwatch total;
  const Checkpoint ckpt = load_checkpoint(model_path);
  const Dataset train_all = load_train_data(cfg);
  const Dataset test = load_test_data(cfg);
  const SplitResult split = holdout_split(train_all, cfg.purify.validation);

  std::optional<TriggeredTestSet> triggered;
  if (cfg.attack) triggered = make_triggered_test(cfg, test);

  const double acc_before = clean_accuracy(ckpt.spec, ckpt.params, test);
  const double asr_before =
      triggered ? attack_success_rate(ckpt.spec, ckpt.params, *triggered) : -1.0;

  PurifyOutcome purified =
      run_purification(cfg, ckpt.spec, ckpt.params, split.validation);

  const double acc_after = clean_accuracy(ckpt.spec, purified.purified, test);
  const double asr_after =
      triggered ? attack_success_rate(ckpt.spec, purified.purified, *triggered) : -1.0;
  const double lcr_after =
      triggered ? label_correction_rate(ckpt.spec, purified.purified, *triggered) : -1.0;

  ojson report;
  report["config"] = cfg.resolved;
  report["seed"] = cfg.seed;
  ojson metrics;
  metrics["asr-before"] = triggered ? ojson(asr_before) : ojson(nullptr);
  metrics["asr-after"] = triggered ? ojson(asr_after) : ojson(nullptr);
  metrics["acc-before"] = acc_before;
  metrics["acc-after"] = acc_after;
  metrics["lcr-after"] = triggered ? ojson(lcr_after) : ojson(nullptr);
  metrics["per-class-accuracy"] = per_class_accuracy(ckpt.spec, purified.purified, test);
  report["metrics"] = metrics;
  report["config-fingerprints"] = config_fingerprints(cfg);
  report["validation-size"] = split.validation.count();
  report["wall-times"] = ojson{{"purify-seconds", purified.wall_seconds},
                               {"total-seconds", total.seconds()}};
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    TrainedModel purified_model{ckpt.spec, purified.purified, {}};
    save_checkpoint(make_checkpoint(
                        cfg, purified_model,
                        purified.nft ? std::optional<MaskSet>(purified.nft->masks)
                                     : std::nullopt),
                    out_dir + "/purified.nftc");
    if (purified.nft)
      detail::write_json(purify_trace_json(*purified.nft), out_dir + "/purify-trace.json");
    detail::write_json(report, out_dir + "/purify-report.json");
  }
  return report;
}

inline ojson run_evaluate_stage(const ExperimentConfig& cfg, const std::string& model_path,
                                const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  const Dataset test = load_test_data(cfg);
  ojson report;
  report["config"] = cfg.resolved;
  report["seed"] = cfg.seed;
  ojson metrics;
  metrics["acc"] = clean_accuracy(ckpt.spec, ckpt.params, test);
  metrics["per-class-accuracy"] = per_class_accuracy(ckpt.spec, ckpt.params, test);
  if (cfg.attack) {
    const TriggeredTestSet triggered = make_triggered_test(cfg, test);
    metrics["asr"] = attack_success_rate(ckpt.spec, ckpt.params, triggered);
    metrics["lcr"] = label_correction_rate(ckpt.spec, ckpt.params, triggered);
  }
  report["metrics"] = metrics;
  report["config-fingerprints"] = config_fingerprints(cfg);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    detail::write_json(report, out_dir + "/eval-report.json");
  }
  return report;
}

inline ojson run_gen_data_stage(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.data.source != DataConfig::Source::Synthetic)
    throw ConfigError("/data/source", "gen-data only emits synthetic datasets");
  std::filesystem::create_directories(out_dir);
  const Dataset train = load_train_data(cfg);
  const Dataset test = load_test_data(cfg);
  save_idx(train, out_dir + "/train-images.idx", out_dir + "/train-labels.idx");
  save_idx(test, out_dir + "/test-images.idx", out_dir + "/test-labels.idx");
  ojson report;
  report["config"] = cfg.resolved;
  report["train-count"] = train.count();
  report["test-count"] = test.count();
  detail::write_json(report, out_dir + "/gen-report.json");
  return report;
}

inline ojson run_export_embeddings_stage(const ExperimentConfig& cfg,
                                         const std::string& model_path,
                                         const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(model_path);
  const Dataset test = load_test_data(cfg);
  std::filesystem::create_directories(out_dir);
  std::optional<TriggeredTestSet> triggered;
  if (cfg.attack) triggered = make_triggered_test(cfg, test);
  export_embeddings(ckpt.spec, ckpt.params, test, triggered ? &*triggered : nullptr,
                    out_dir + "/embeddings.csv");
  ojson report;
  report["config"] = cfg.resolved;
  report["rows"] = test.count() + (triggered ? triggered->data.count() : 0);
  detail::write_json(report, out_dir + "/export-report.json");
  return report;
}

struct TheoryOutcome {
  ModelSpec spec;
  Parameters params;
  Dataset eval_data;
  BoundReport bound;
  double euler_max_residual = 0.0;
  ojson report;
};

// Trains a bias-free binary MLP on 2-class synthetic data, then runs the
// homogeneity residual and the mixup bound diagnostics on held-out data.
inline TheoryOutcome run_theory_stage(const ExperimentConfig& cfg,
                                      const std::string& out_dir) {
  if (!cfg.theory)
    throw ConfigError("/theory", "theorem-check needs a theory section");
  const TheoryConfig& t = *cfg.theory;
  TheoryOutcome out;
  out.spec = theorem_mlp(1, t.height, t.width, t.hidden);
  out.params = build_model(out.spec, t.seed);
  const Dataset train_ds =
      synth_generate(2, t.per_class, t.height, t.width, t.seed, t.noise_sigma);
  train_binary_logistic(out.spec, out.params, train_ds, t.train_lr, t.train_momentum,
                        t.train_epochs, t.train_batch, t.seed);
  out.eval_data =
      synth_generate(2, t.per_class, t.height, t.width, t.test_seed, t.noise_sigma);

  for (int i = 0; i < std::min(20, out.eval_data.count()); ++i)
    out.euler_max_residual = std::max(
        out.euler_max_residual, euler_residual(out.spec, out.params, out.eval_data.image(i)));

  out.bound = mixup_bound_check(out.spec, out.params, out.eval_data, t.beta_a, t.beta_b,
                                t.mc_samples, t.direction, t.test_seed);

  ojson report;
  report["config"] = cfg.resolved;
  report["seed"] = cfg.seed;
  ojson b;
  b["mix-loss-mean"] = out.bound.mix_loss_mean;
  b["mix-loss-stderr"] = out.bound.mix_loss_stderr;
  b["ideal-loss"] = out.bound.ideal_loss;
  b["ideal-loss-min-eps"] = out.bound.ideal_loss_min_eps;
  b["eps-min"] = out.bound.eps_min;
  b["c-x"] = out.bound.c_x;
  b["expected-one-minus-lambda"] = out.bound.expected_one_minus_lambda;
  b["mc-samples"] = out.bound.mc_samples;
  b["excluded-samples"] = out.bound.excluded_samples;
  b["inequality-holds"] = out.bound.inequality_holds;
  report["bound"] = b;
  report["euler-max-residual"] = out.euler_max_residual;
  report["config-fingerprints"] = config_fingerprints(cfg);
  out.report = report;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    detail::write_json(report, out_dir + "/bound-report.json");
  }
  return out;
}

}  // namespace nftlab
