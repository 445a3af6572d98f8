#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nftlab/attack.hpp"
#include "nftlab/checkpoint.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/purify.hpp"
#include "nftlab/theory.hpp"
#include "nftlab/train.hpp"

namespace nftlab {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace cfgdetail {

inline void reject_unknown(const json& j, const std::string& ptr,
                           std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError(ptr.empty() ? "/" : ptr, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(ptr + "/" + it.key(), "unknown config key");
  }
}

template <class T>
T get_or(const json& j, const char* key, const T& def, const std::string& ptr) {
  if (!j.contains(key) || j.at(key).is_null()) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ptr + "/" + key, "wrong value type");
  }
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  // splitmix64 step, so per-stage seeds are decorrelated but reproducible
  std::uint64_t z = base + salt * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace cfgdetail

struct DataConfig {
  enum class Source { Synthetic, Idx, Cifar10 };
  Source source = Source::Synthetic;
  int classes = 10;
  int train_per_class = 500;
  int test_per_class = 100;
  int height = 16;
  int width = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::uint64_t test_seed = 0;
  std::optional<NormalizationSpec> normalization;
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  std::vector<std::string> cifar_train, cifar_test;
};

struct ModelConfig {
  std::string arch = "cnn-small";
  bool bias = true;
};

struct PurifyConfig {
  std::string method = "nft";  // or "vanilla-ft"
  NftConfig nft;
  SplitSpec validation;
};

struct TheoryConfig {
  int hidden = 32;
  int per_class = 100;
  int height = 8;
  int width = 8;
  double noise_sigma = 0.1;
  int train_epochs = 40;
  double train_lr = 0.05;
  double train_momentum = 0.9;
  int train_batch = 32;
  int mc_samples = 10000;
  double beta_a = 1.0;
  double beta_b = 1.0;
  PerturbDirection direction = PerturbDirection::Gradient;
  std::uint64_t seed = 0;
  std::uint64_t test_seed = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  std::optional<PoisonSpec> attack;
  TrainConfig train;
  PurifyConfig purify;
  bool export_embeddings = false;
  std::optional<TheoryConfig> theory;
  ojson resolved;  // canonical form with every default filled in
};

namespace cfgdetail {

inline Corner corner_from(const std::string& s, const std::string& ptr) {
  if (s == "top-left") return Corner::TopLeft;
  if (s == "top-right") return Corner::TopRight;
  if (s == "bottom-left") return Corner::BottomLeft;
  if (s == "bottom-right") return Corner::BottomRight;
  throw ConfigError(ptr, "unknown corner '" + s + "'");
}

inline const char* corner_name(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "?";
}

inline TriggerSpec trigger_from_json(const json& j, const std::string& ptr) {
  const std::string kind = get_or<std::string>(j, "kind", "checkerboard", ptr);
  if (kind == "checkerboard") {
    reject_unknown(j, ptr, {"kind", "size", "corner"});
    CheckerboardTrigger t;
    t.size = get_or(j, "size", 3, ptr);
    t.corner = corner_from(get_or<std::string>(j, "corner", "bottom-left", ptr),
                           ptr + "/corner");
    return t;
  }
  if (kind == "four-corner-checkerboard") {
    reject_unknown(j, ptr, {"kind", "size"});
    FourCornerCheckerboardTrigger t;
    t.size = get_or(j, "size", 3, ptr);
    return t;
  }
  if (kind == "patch-from-file") {
    reject_unknown(j, ptr, {"kind", "path", "corner"});
    PatchFromFileTrigger t;
    t.path = get_or<std::string>(j, "path", "", ptr);
    if (t.path.empty()) throw ConfigError(ptr + "/path", "patch path is required");
    t.corner = corner_from(get_or<std::string>(j, "corner", "bottom-left", ptr),
                           ptr + "/corner");
    return t;
  }
  if (kind == "blend") {
    reject_unknown(j, ptr, {"kind", "alpha", "noise-seed"});
    BlendTrigger t;
    t.alpha = get_or(j, "alpha", 0.2, ptr);
    if (t.alpha <= 0.0 || t.alpha >= 1.0)
      throw ConfigError(ptr + "/alpha", "blend alpha must be in (0,1)");
    t.noise_seed = get_or<std::uint64_t>(j, "noise-seed", 0, ptr);
    return t;
  }
  if (kind == "sinusoid") {
    reject_unknown(j, ptr, {"kind", "amplitude", "frequency"});
    SinusoidTrigger t;
    t.amplitude = get_or(j, "amplitude", 0.08, ptr);
    if (t.amplitude <= 0.0 || t.amplitude >= 1.0)
      throw ConfigError(ptr + "/amplitude", "sinusoid amplitude must be in (0,1)");
    t.frequency = get_or(j, "frequency", 6, ptr);
    return t;
  }
  throw ConfigError(ptr + "/kind", "unknown trigger kind '" + kind + "'");
}

inline ojson trigger_to_json(const TriggerSpec& t) {
  ojson j;
  if (const auto* cb = std::get_if<CheckerboardTrigger>(&t)) {
    j["kind"] = "checkerboard";
    j["size"] = cb->size;
    j["corner"] = corner_name(cb->corner);
  } else if (const auto* fc = std::get_if<FourCornerCheckerboardTrigger>(&t)) {
    j["kind"] = "four-corner-checkerboard";
    j["size"] = fc->size;
  } else if (const auto* pf = std::get_if<PatchFromFileTrigger>(&t)) {
    j["kind"] = "patch-from-file";
    j["path"] = pf->path;
    j["corner"] = corner_name(pf->corner);
  } else if (const auto* bl = std::get_if<BlendTrigger>(&t)) {
    j["kind"] = "blend";
    j["alpha"] = bl->alpha;
    j["noise-seed"] = bl->noise_seed;
  } else if (const auto* sg = std::get_if<SinusoidTrigger>(&t)) {
    j["kind"] = "sinusoid";
    j["amplitude"] = sg->amplitude;
    j["frequency"] = sg->frequency;
  }
  return j;
}

}  // namespace cfgdetail

// Parses and validates a raw config document, rejecting unknown keys with a
// JSON pointer, and fills `resolved` with every default made explicit.
// Re-parsing the resolved document yields the identical experiment.
inline ExperimentConfig parse_experiment_config(const json& raw) {
  using namespace cfgdetail;
  reject_unknown(raw, "",
                 {"seed", "data", "model", "attack", "train", "purify", "eval", "theory"});
  ExperimentConfig cfg;
  cfg.seed = get_or<std::uint64_t>(raw, "seed", 0, "");

  // data
  const json data = raw.contains("data") && !raw.at("data").is_null() ? raw.at("data")
                                                                      : json::object();
  reject_unknown(data, "/data",
                 {"source", "classes", "train-per-class", "test-per-class", "height",
                  "width", "noise-sigma", "seed", "test-seed", "normalization", "idx",
                  "cifar"});
  {
    DataConfig& d = cfg.data;
    const std::string src = get_or<std::string>(data, "source", "synthetic", "/data");
    if (src == "synthetic")
      d.source = DataConfig::Source::Synthetic;
    else if (src == "idx")
      d.source = DataConfig::Source::Idx;
    else if (src == "cifar10")
      d.source = DataConfig::Source::Cifar10;
    else
      throw ConfigError("/data/source", "unknown data source '" + src + "'");
    d.classes = get_or(data, "classes", 10, "/data");
    if (d.classes < 2) throw ConfigError("/data/classes", "need >= 2 classes");
    d.train_per_class = get_or(data, "train-per-class", 500, "/data");
    d.test_per_class = get_or(data, "test-per-class", 100, "/data");
    d.height = get_or(data, "height", 16, "/data");
    d.width = get_or(data, "width", 16, "/data");
    d.noise_sigma = get_or(data, "noise-sigma", 0.1, "/data");
    d.seed = get_or<std::uint64_t>(data, "seed", derive_seed(cfg.seed, 6), "/data");
    d.test_seed =
        get_or<std::uint64_t>(data, "test-seed", derive_seed(cfg.seed, 7), "/data");
    if (data.contains("normalization") && !data.at("normalization").is_null()) {
      const json& nj = data.at("normalization");
      reject_unknown(nj, "/data/normalization", {"mean", "std"});
      NormalizationSpec ns;
      ns.mean = get_or<std::vector<double>>(nj, "mean", {}, "/data/normalization");
      ns.std_dev = get_or<std::vector<double>>(nj, "std", {}, "/data/normalization");
      d.normalization = ns;
    }
    if (d.source == DataConfig::Source::Idx) {
      if (!data.contains("idx"))
        throw ConfigError("/data/idx", "idx source needs file paths");
      const json& ij = data.at("idx");
      reject_unknown(ij, "/data/idx",
                     {"train-images", "train-labels", "test-images", "test-labels"});
      d.idx_train_images = get_or<std::string>(ij, "train-images", "", "/data/idx");
      d.idx_train_labels = get_or<std::string>(ij, "train-labels", "", "/data/idx");
      d.idx_test_images = get_or<std::string>(ij, "test-images", "", "/data/idx");
      d.idx_test_labels = get_or<std::string>(ij, "test-labels", "", "/data/idx");
    }
    if (d.source == DataConfig::Source::Cifar10) {
      if (!data.contains("cifar"))
        throw ConfigError("/data/cifar", "cifar10 source needs file paths");
      const json& cj = data.at("cifar");
      reject_unknown(cj, "/data/cifar", {"train", "test"});
      d.cifar_train = get_or<std::vector<std::string>>(cj, "train", {}, "/data/cifar");
      d.cifar_test = get_or<std::vector<std::string>>(cj, "test", {}, "/data/cifar");
      d.classes = 10;
      d.height = d.width = 32;
    }
  }

  // model
  const json model = raw.contains("model") && !raw.at("model").is_null()
                         ? raw.at("model")
                         : json::object();
  reject_unknown(model, "/model", {"arch", "bias"});
  cfg.model.arch = get_or<std::string>(model, "arch", "cnn-small", "/model");
  if (cfg.model.arch != "cnn-small" && cfg.model.arch != "mlp-small")
    throw ConfigError("/model/arch", "unknown architecture '" + cfg.model.arch + "'");
  cfg.model.bias = get_or(model, "bias", true, "/model");

  // attack (optional)
  if (raw.contains("attack") && !raw.at("attack").is_null()) {
    const json& aj = raw.at("attack");
    reject_unknown(aj, "/attack",
                   {"trigger", "label-map", "rate", "clean-label",
                    "target-class-fraction", "pgd", "seed"});
    PoisonSpec p;
    p.trigger = trigger_from_json(
        aj.contains("trigger") ? aj.at("trigger") : json::object(), "/attack/trigger");
    if (aj.contains("label-map") && !aj.at("label-map").is_null()) {
      const json& mj = aj.at("label-map");
      reject_unknown(mj, "/attack/label-map", {"mode", "target"});
      const std::string mode = get_or<std::string>(mj, "mode", "all2one", "/attack/label-map");
      if (mode == "all2one")
        p.map.mode = LabelMap::Mode::All2One;
      else if (mode == "all2all")
        p.map.mode = LabelMap::Mode::All2All;
      else
        throw ConfigError("/attack/label-map/mode", "unknown mode '" + mode + "'");
      p.map.target = get_or(mj, "target", 0, "/attack/label-map");
    }
    p.rate = get_or(aj, "rate", 0.1, "/attack");
    if (p.rate <= 0.0 || p.rate > 1.0)
      throw ConfigError("/attack/rate", "poison rate must be in (0,1]");
    p.clean_label = get_or(aj, "clean-label", false, "/attack");
    p.target_class_fraction = get_or(aj, "target-class-fraction", 0.8, "/attack");
    if (p.clean_label && p.map.mode != LabelMap::Mode::All2One)
      throw ConfigError("/attack/label-map/mode", "clean-label attacks are all2one");
    if (aj.contains("pgd") && !aj.at("pgd").is_null()) {
      const json& pj = aj.at("pgd");
      reject_unknown(pj, "/attack/pgd", {"epsilon", "steps", "step-size"});
      PgdSpec g;
      g.epsilon = get_or(pj, "epsilon", 8.0 / 255.0, "/attack/pgd");
      g.steps = get_or(pj, "steps", 7, "/attack/pgd");
      g.step_size = get_or(pj, "step-size", 2.0 / 255.0, "/attack/pgd");
      p.pgd = g;
    }
    p.seed = get_or<std::uint64_t>(aj, "seed", derive_seed(cfg.seed, 1), "/attack");
    cfg.attack = p;
  }

  // train
  const json train = raw.contains("train") && !raw.at("train").is_null()
                         ? raw.at("train")
                         : json::object();
  reject_unknown(train, "/train",
                 {"learning-rate", "momentum", "weight-decay", "epochs", "batch-size",
                  "lr-decay", "seed"});
  cfg.train.learning_rate = get_or(train, "learning-rate", 5e-2, "/train");
  cfg.train.momentum = get_or(train, "momentum", 0.9, "/train");
  cfg.train.weight_decay = get_or(train, "weight-decay", 5e-4, "/train");
  cfg.train.epochs = get_or(train, "epochs", 30, "/train");
  cfg.train.batch_size = get_or(train, "batch-size", 128, "/train");
  if (train.contains("lr-decay") && !train.at("lr-decay").is_null()) {
    const json& lj = train.at("lr-decay");
    reject_unknown(lj, "/train/lr-decay", {"every", "factor"});
    cfg.train.lr_decay.every_epochs = get_or(lj, "every", 10, "/train/lr-decay");
    cfg.train.lr_decay.factor = get_or(lj, "factor", 0.5, "/train/lr-decay");
  }
  cfg.train.seed = get_or<std::uint64_t>(train, "seed", derive_seed(cfg.seed, 2), "/train");
  try {
    cfg.train.validate();
  } catch (const ValueError& e) {
    throw ConfigError("/train", e.what());
  }

  // purify
  const json purify = raw.contains("purify") && !raw.at("purify").is_null()
                          ? raw.at("purify")
                          : json::object();
  reject_unknown(purify, "/purify",
                 {"method", "mu-alpha", "mu-beta", "beta-a", "beta-b", "eta-base",
                  "learning-rate", "momentum", "epochs", "batch-size",
                  "skip-first-layer", "mask-bias", "exhaustive-pairs", "validation",
                  "split-seed", "seed"});
  cfg.purify.method = get_or<std::string>(purify, "method", "nft", "/purify");
  if (cfg.purify.method != "nft" && cfg.purify.method != "vanilla-ft")
    throw ConfigError("/purify/method", "unknown method '" + cfg.purify.method + "'");
  NftConfig& n = cfg.purify.nft;
  n.mu_alpha = get_or(purify, "mu-alpha", 0.8, "/purify");
  n.mu_beta = get_or(purify, "mu-beta", 0.5, "/purify");
  n.beta_a = get_or(purify, "beta-a", 1.0, "/purify");
  n.beta_b = get_or(purify, "beta-b", 1.0, "/purify");
  n.eta_base = get_or(purify, "eta-base", 5e-4, "/purify");
  n.learning_rate = get_or(purify, "learning-rate", 0.05, "/purify");
  n.momentum = get_or(purify, "momentum", 0.95, "/purify");
  n.epochs = get_or(purify, "epochs", 100, "/purify");
  n.batch_size = get_or(purify, "batch-size", 128, "/purify");
  n.skip_first_layer = get_or(purify, "skip-first-layer", true, "/purify");
  n.mask_bias = get_or(purify, "mask-bias", false, "/purify");
  n.exhaustive_pairs = get_or(purify, "exhaustive-pairs", false, "/purify");
  n.seed = get_or<std::uint64_t>(purify, "seed", derive_seed(cfg.seed, 3), "/purify");
  try {
    n.validate();
  } catch (const ValueError& e) {
    throw ConfigError("/purify", e.what());
  }
  {
    SplitSpec& s = cfg.purify.validation;
    const json vj = purify.contains("validation") && !purify.at("validation").is_null()
                        ? purify.at("validation")
                        : json::object();
    reject_unknown(vj, "/purify/validation", {"mode", "fraction", "count"});
    const std::string mode =
        get_or<std::string>(vj, "mode", "fraction", "/purify/validation");
    if (mode == "fraction") {
      s.mode = SplitSpec::Mode::Fraction;
      s.fraction = get_or(vj, "fraction", 0.01, "/purify/validation");
    } else if (mode == "per-class") {
      s.mode = SplitSpec::Mode::PerClassCount;
      s.per_class = get_or(vj, "count", 1, "/purify/validation");
    } else {
      throw ConfigError("/purify/validation/mode", "unknown mode '" + mode + "'");
    }
    s.seed = get_or<std::uint64_t>(purify, "split-seed", derive_seed(cfg.seed, 4),
                                   "/purify");
  }

  // eval
  const json eval = raw.contains("eval") && !raw.at("eval").is_null() ? raw.at("eval")
                                                                      : json::object();
  reject_unknown(eval, "/eval", {"export-embeddings"});
  cfg.export_embeddings = get_or(eval, "export-embeddings", false, "/eval");

  // theory (optional)
  if (raw.contains("theory") && !raw.at("theory").is_null()) {
    const json& tj = raw.at("theory");
    reject_unknown(tj, "/theory",
                   {"hidden", "per-class", "height", "width", "noise-sigma",
                    "train-epochs", "train-lr", "train-momentum", "train-batch",
                    "mc-samples", "beta-a", "beta-b", "direction", "seed", "test-seed"});
    TheoryConfig t;
    t.hidden = get_or(tj, "hidden", 32, "/theory");
    t.per_class = get_or(tj, "per-class", 100, "/theory");
    t.height = get_or(tj, "height", 8, "/theory");
    t.width = get_or(tj, "width", 8, "/theory");
    t.noise_sigma = get_or(tj, "noise-sigma", 0.1, "/theory");
    t.train_epochs = get_or(tj, "train-epochs", 40, "/theory");
    t.train_lr = get_or(tj, "train-lr", 0.05, "/theory");
    t.train_momentum = get_or(tj, "train-momentum", 0.9, "/theory");
    t.train_batch = get_or(tj, "train-batch", 32, "/theory");
    t.mc_samples = get_or(tj, "mc-samples", 10000, "/theory");
    t.beta_a = get_or(tj, "beta-a", 1.0, "/theory");
    t.beta_b = get_or(tj, "beta-b", 1.0, "/theory");
    const std::string dir = get_or<std::string>(tj, "direction", "gradient", "/theory");
    if (dir == "gradient")
      t.direction = PerturbDirection::Gradient;
    else if (dir == "random")
      t.direction = PerturbDirection::Random;
    else
      throw ConfigError("/theory/direction", "unknown direction '" + dir + "'");
    t.seed = get_or<std::uint64_t>(tj, "seed", derive_seed(cfg.seed, 5), "/theory");
    t.test_seed = get_or<std::uint64_t>(tj, "test-seed", derive_seed(cfg.seed, 8),
                                        "/theory");
    cfg.theory = t;
  }

  // canonical resolved form
  ojson r;
  r["seed"] = cfg.seed;
  {
    ojson d;
    d["source"] = cfg.data.source == DataConfig::Source::Synthetic ? "synthetic"
                  : cfg.data.source == DataConfig::Source::Idx     ? "idx"
                                                                   : "cifar10";
    d["classes"] = cfg.data.classes;
    d["train-per-class"] = cfg.data.train_per_class;
    d["test-per-class"] = cfg.data.test_per_class;
    d["height"] = cfg.data.height;
    d["width"] = cfg.data.width;
    d["noise-sigma"] = cfg.data.noise_sigma;
    d["seed"] = cfg.data.seed;
    d["test-seed"] = cfg.data.test_seed;
    if (cfg.data.normalization) {
      d["normalization"] = {{"mean", cfg.data.normalization->mean},
                            {"std", cfg.data.normalization->std_dev}};
    } else {
      d["normalization"] = nullptr;
    }
    if (cfg.data.source == DataConfig::Source::Idx)
      d["idx"] = {{"train-images", cfg.data.idx_train_images},
                  {"train-labels", cfg.data.idx_train_labels},
                  {"test-images", cfg.data.idx_test_images},
                  {"test-labels", cfg.data.idx_test_labels}};
    if (cfg.data.source == DataConfig::Source::Cifar10)
      d["cifar"] = {{"train", cfg.data.cifar_train}, {"test", cfg.data.cifar_test}};
    r["data"] = d;
  }
  r["model"] = ojson{{"arch", cfg.model.arch}, {"bias", cfg.model.bias}};
  if (cfg.attack) {
    ojson a;
    a["trigger"] = cfgdetail::trigger_to_json(cfg.attack->trigger);
    a["label-map"] =
        cfg.attack->map.mode == LabelMap::Mode::All2One
            ? ojson{{"mode", "all2one"}, {"target", cfg.attack->map.target}}
            : ojson{{"mode", "all2all"}};
    a["rate"] = cfg.attack->rate;
    a["clean-label"] = cfg.attack->clean_label;
    a["target-class-fraction"] = cfg.attack->target_class_fraction;
    if (cfg.attack->pgd)
      a["pgd"] = ojson{{"epsilon", cfg.attack->pgd->epsilon},
                       {"steps", cfg.attack->pgd->steps},
                       {"step-size", cfg.attack->pgd->step_size}};
    else
      a["pgd"] = nullptr;
    a["seed"] = cfg.attack->seed;
    r["attack"] = a;
  } else {
    r["attack"] = nullptr;
  }
  {
    ojson t;
    t["learning-rate"] = cfg.train.learning_rate;
    t["momentum"] = cfg.train.momentum;
    t["weight-decay"] = cfg.train.weight_decay;
    t["epochs"] = cfg.train.epochs;
    t["batch-size"] = cfg.train.batch_size;
    if (cfg.train.lr_decay.every_epochs > 0)
      t["lr-decay"] = ojson{{"every", cfg.train.lr_decay.every_epochs},
                            {"factor", cfg.train.lr_decay.factor}};
    else
      t["lr-decay"] = nullptr;
    t["seed"] = cfg.train.seed;
    r["train"] = t;
  }
  {
    ojson p;
    p["method"] = cfg.purify.method;
    p["mu-alpha"] = n.mu_alpha;
    p["mu-beta"] = n.mu_beta;
    p["beta-a"] = n.beta_a;
    p["beta-b"] = n.beta_b;
    p["eta-base"] = n.eta_base;
    p["learning-rate"] = n.learning_rate;
    p["momentum"] = n.momentum;
    p["epochs"] = n.epochs;
    p["batch-size"] = n.batch_size;
    p["skip-first-layer"] = n.skip_first_layer;
    p["mask-bias"] = n.mask_bias;
    p["exhaustive-pairs"] = n.exhaustive_pairs;
    p["validation"] =
        cfg.purify.validation.mode == SplitSpec::Mode::Fraction
            ? ojson{{"mode", "fraction"}, {"fraction", cfg.purify.validation.fraction}}
            : ojson{{"mode", "per-class"}, {"count", cfg.purify.validation.per_class}};
    p["split-seed"] = cfg.purify.validation.seed;
    p["seed"] = n.seed;
    r["purify"] = p;
  }
  r["eval"] = ojson{{"export-embeddings", cfg.export_embeddings}};
  if (cfg.theory) {
    const TheoryConfig& t = *cfg.theory;
    ojson tj;
    tj["hidden"] = t.hidden;
    tj["per-class"] = t.per_class;
    tj["height"] = t.height;
    tj["width"] = t.width;
    tj["noise-sigma"] = t.noise_sigma;
    tj["train-epochs"] = t.train_epochs;
    tj["train-lr"] = t.train_lr;
    tj["train-momentum"] = t.train_momentum;
    tj["train-batch"] = t.train_batch;
    tj["mc-samples"] = t.mc_samples;
    tj["beta-a"] = t.beta_a;
    tj["beta-b"] = t.beta_b;
    tj["direction"] = t.direction == PerturbDirection::Gradient ? "gradient" : "random";
    tj["seed"] = t.seed;
    tj["test-seed"] = t.test_seed;
    r["theory"] = tj;
  } else {
    r["theory"] = nullptr;
  }
  cfg.resolved = std::move(r);
  return cfg;
}

inline ExperimentConfig parse_experiment_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  json raw;
  try {
    raw = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("/", std::string("config is not valid json: ") + e.what());
  }
  return parse_experiment_config(raw);
}

// Applies a dotted-path override ("purify.epochs=0") to a raw document.
inline void apply_override(json& raw, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("/", "override '" + assignment + "' is not key=value");
  std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  std::string pointer = "/";
  for (char c : path) pointer += (c == '.') ? '/' : c;
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;  // plain string
  }
  raw[json::json_pointer(pointer)] = v;
}

}  // namespace nftlab
