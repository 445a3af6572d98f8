#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nftlab/autodiff.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/model.hpp"
#include "nftlab/rng.hpp"
#include "nftlab/tensor.hpp"

namespace nftlab {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

struct CheckerboardTrigger {
  int size = 3;
  Corner corner = Corner::BottomLeft;
};

struct PatchFromFileTrigger {
  std::string path;
  Corner corner = Corner::BottomLeft;
};

struct BlendTrigger {
  double alpha = 0.2;
  std::uint64_t noise_seed = 0;
};

struct SinusoidTrigger {
  double amplitude = 0.08;
  int frequency = 6;
};

struct FourCornerCheckerboardTrigger {
  int size = 3;
};

using TriggerSpec = std::variant<CheckerboardTrigger, PatchFromFileTrigger,
                                 BlendTrigger, SinusoidTrigger,
                                 FourCornerCheckerboardTrigger>;

struct LabelMap {
  enum class Mode { All2One, All2All };
  Mode mode = Mode::All2One;
  int target = 0;

  int map(int y, int classes) const {
    return mode == Mode::All2One ? target : (y + 1) % classes;
  }
};

struct PgdSpec {
  double epsilon = 8.0 / 255.0;
  int steps = 7;
  double step_size = 2.0 / 255.0;
};

struct PoisonSpec {
  TriggerSpec trigger;
  LabelMap map;
  double rate = 0.1;
  bool clean_label = false;
  double target_class_fraction = 0.8;  // clean-label only
  std::optional<PgdSpec> pgd;
  std::uint64_t seed = 0;
};

struct PoisonedDataset {
  Dataset dataset;
  std::vector<int> poisoned_indices;
  PoisonSpec spec;
};

// Patch file: u16le C,H,W then two zero pad bytes, then C*H*W f64le values.
inline Tensor load_patch_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open patch file '" + path + "'");
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
  if (b.size() < 8) throw FormatError("patch file truncated");
  auto u16 = [&](std::size_t at) {
    return static_cast<int>(b[at]) | (static_cast<int>(b[at + 1]) << 8);
  };
  const int c = u16(0), h = u16(2), w = u16(4);
  if (c < 1 || h < 1 || w < 1) throw FormatError("patch file has empty dims");
  const std::size_t want = 8 + static_cast<std::size_t>(c) * h * w * 8;
  if (b.size() != want)
    throw FormatError("patch file size " + std::to_string(b.size()) + ", expected " +
                      std::to_string(want));
  Tensor t({c, h, w});
  for (std::int64_t i = 0; i < t.size(); ++i) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
      v |= static_cast<std::uint64_t>(b[8 + static_cast<std::size_t>(i) * 8 + k])
           << (8 * k);
    double d;
    std::memcpy(&d, &v, 8);
    t[i] = d;
  }
  return t;
}

// Precomputed per-trigger state, built once per poison spec so the blend
// noise image stays consistent across train and test triggering.
struct TriggerContext {
  TriggerSpec spec;
  Tensor blend_noise;  // [C,H,W], blend triggers only
  Tensor patch;        // [pc,ph,pw], patch-from-file only
};

inline TriggerContext make_trigger_context(const TriggerSpec& spec, int c, int h, int w) {
  TriggerContext ctx;
  ctx.spec = spec;
  if (const auto* blend = std::get_if<BlendTrigger>(&spec)) {
    ctx.blend_noise = Tensor({c, h, w});
    Rng rng(blend->noise_seed);
    for (double& v : ctx.blend_noise.data) v = rng.uniform();
  } else if (const auto* patch = std::get_if<PatchFromFileTrigger>(&spec)) {
    ctx.patch = load_patch_file(patch->path);
  }
  return ctx;
}

namespace detail {

inline std::pair<int, int> corner_origin(Corner corner, int h, int w, int ph, int pw) {
  switch (corner) {
    case Corner::TopLeft: return {0, 0};
    case Corner::TopRight: return {0, w - pw};
    case Corner::BottomLeft: return {h - ph, 0};
    case Corner::BottomRight: return {h - ph, w - pw};
  }
  return {0, 0};
}

inline void stamp_checkerboard(Tensor& img, int size, Corner corner) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (size > h || size > w)
    throw ValueError("checkerboard size " + std::to_string(size) +
                     " does not fit " + std::to_string(h) + "x" + std::to_string(w));
  const auto [r0, c0] = corner_origin(corner, h, w, size, size);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        img[(static_cast<std::int64_t>(ch) * h + r0 + i) * w + c0 + j] =
            ((i + j) % 2 == 0) ? 1.0 : 0.0;
}

}  // namespace detail

// Stamps a trigger on a [C,H,W] image in [0,1] space; output is clamped to
// [0,1]. Patch triggers overwrite, blend/sinusoid triggers blend/add.
inline Tensor apply_trigger(const Tensor& image, const TriggerContext& ctx) {
  if (image.rank() != 3)
    throw ShapeError("apply_trigger wants a [C,H,W] image, got " + image.shape_str());
  Tensor out = image;
  const int c = out.dim(0), h = out.dim(1), w = out.dim(2);

  if (const auto* cb = std::get_if<CheckerboardTrigger>(&ctx.spec)) {
    detail::stamp_checkerboard(out, cb->size, cb->corner);
  } else if (const auto* fc = std::get_if<FourCornerCheckerboardTrigger>(&ctx.spec)) {
    for (Corner corner : {Corner::TopLeft, Corner::TopRight, Corner::BottomLeft,
                          Corner::BottomRight})
      detail::stamp_checkerboard(out, fc->size, corner);
  } else if (const auto* pf = std::get_if<PatchFromFileTrigger>(&ctx.spec)) {
    const Tensor& p = ctx.patch;
    if (p.dim(0) != c || p.dim(1) > h || p.dim(2) > w)
      throw ValueError("patch " + p.shape_str() + " does not fit image " +
                       image.shape_str());
    const auto [r0, c0] = detail::corner_origin(pf->corner, h, w, p.dim(1), p.dim(2));
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < p.dim(1); ++i)
        for (int j = 0; j < p.dim(2); ++j)
          out[(static_cast<std::int64_t>(ch) * h + r0 + i) * w + c0 + j] =
              p[(static_cast<std::int64_t>(ch) * p.dim(1) + i) * p.dim(2) + j];
  } else if (const auto* blend = std::get_if<BlendTrigger>(&ctx.spec)) {
    if (!ctx.blend_noise.same_shape(out))
      throw ShapeError("blend noise " + ctx.blend_noise.shape_str() +
                       " does not match image " + image.shape_str());
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = (1.0 - blend->alpha) * out[i] + blend->alpha * ctx.blend_noise[i];
  } else if (const auto* sig = std::get_if<SinusoidTrigger>(&ctx.spec)) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double delta =
              sig->amplitude *
              std::sin(2.0 * std::numbers::pi * j * sig->frequency / w);
          out[(static_cast<std::int64_t>(ch) * h + i) * w + j] += delta;
        }
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline Tensor apply_trigger(const Tensor& image, const TriggerSpec& spec) {
  return apply_trigger(image, make_trigger_context(spec, image.dim(0), image.dim(1),
                                                   image.dim(2)));
}

// l-inf PGD ascent on soft cross-entropy from the true labels. After each
// step the perturbation is projected to the epsilon ball around the original
// image and clamped to [0,1].
inline Tensor pgd_perturb(const ModelSpec& spec, const Parameters& params,
                          const Tensor& images, const std::vector<int>& labels,
                          double epsilon, int steps, double step_size) {
  if (epsilon <= 0.0) throw ValueError("pgd epsilon must be positive");
  if (images.rank() != 4)
    throw ShapeError("pgd_perturb wants [N,C,H,W] images, got " + images.shape_str());
  const int n = images.dim(0);
  const int classes = spec.classes;
  Tensor targets({n, classes});
  for (int i = 0; i < n; ++i)
    targets[static_cast<std::int64_t>(i) * classes + labels[static_cast<std::size_t>(i)]] =
        1.0;

  Tensor x = images;
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    const int xin = tape.input(x);
    const ForwardNodes fn = build_forward(tape, spec, params, nullptr, xin);
    const int loss = tape.soft_cross_entropy(fn.logits, targets);
    tape.backward(loss);
    const Tensor& g = tape.grad(xin);
    for (std::int64_t i = 0; i < x.size(); ++i) {
      double v = x[i];
      if (g[i] > 0.0)
        v += step_size;
      else if (g[i] < 0.0)
        v -= step_size;
      v = std::clamp(v, images[i] - epsilon, images[i] + epsilon);
      x[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return x;
}

// Poison-label mode: floor(rate*N) uniformly drawn indices (non-target
// classes only under all2one), each triggered and relabeled. Clean-label
// mode: target-class images only, optionally PGD-perturbed, then triggered;
// labels never change.
inline PoisonedDataset poison_train_set(const Dataset& ds, const PoisonSpec& spec,
                                        const ModelSpec* model_spec = nullptr,
                                        const Parameters* model_params = nullptr) {
  if (spec.clean_label && spec.map.mode != LabelMap::Mode::All2One)
    throw ValueError("clean-label poisoning requires an all2one label map");
  if (spec.clean_label && spec.pgd && (!model_spec || !model_params))
    throw ValueError("clean-label poisoning with pgd needs a model");

  PoisonedDataset out;
  out.dataset = ds;
  out.spec = spec;
  const TriggerContext ctx =
      make_trigger_context(spec.trigger, ds.channels(), ds.height(), ds.width());
  Rng rng(spec.seed);

  if (!spec.clean_label) {
    std::vector<int> eligible;
    for (int i = 0; i < ds.count(); ++i) {
      const int y = ds.labels[static_cast<std::size_t>(i)];
      if (spec.map.mode == LabelMap::Mode::All2One && y == spec.map.target) continue;
      eligible.push_back(i);
    }
    const int want = static_cast<int>(spec.rate * ds.count());
    if (want > static_cast<int>(eligible.size()))
      throw ValueError("poison rate " + std::to_string(spec.rate) + " needs " +
                       std::to_string(want) + " samples but only " +
                       std::to_string(eligible.size()) + " are eligible");
    rng.shuffle(eligible);
    out.poisoned_indices.assign(eligible.begin(), eligible.begin() + want);
    std::sort(out.poisoned_indices.begin(), out.poisoned_indices.end());
    for (int i : out.poisoned_indices) {
      out.dataset.set_image(i, apply_trigger(ds.image(i), ctx));
      out.dataset.labels[static_cast<std::size_t>(i)] =
          spec.map.map(ds.labels[static_cast<std::size_t>(i)], ds.classes);
    }
    return out;
  }

  // clean-label
  std::vector<int> target_class;
  for (int i = 0; i < ds.count(); ++i)
    if (ds.labels[static_cast<std::size_t>(i)] == spec.map.target)
      target_class.push_back(i);
  const int want =
      static_cast<int>(spec.target_class_fraction * static_cast<double>(target_class.size()));
  rng.shuffle(target_class);
  out.poisoned_indices.assign(target_class.begin(), target_class.begin() + want);
  std::sort(out.poisoned_indices.begin(), out.poisoned_indices.end());

  Dataset selected = ds.subset(out.poisoned_indices);
  Tensor imgs = selected.images;
  if (spec.pgd)
    imgs = pgd_perturb(*model_spec, *model_params, imgs, selected.labels,
                       spec.pgd->epsilon, spec.pgd->steps, spec.pgd->step_size);
  const std::int64_t sz = ds.sample_size();
  for (std::size_t k = 0; k < out.poisoned_indices.size(); ++k) {
    Tensor img({ds.channels(), ds.height(), ds.width()});
    std::copy_n(imgs.data.begin() + static_cast<std::ptrdiff_t>(k * sz), sz,
                img.data.begin());
    out.dataset.set_image(out.poisoned_indices[k], apply_trigger(img, ctx));
  }
  return out;
}

// Triggered copy of the test set. Original labels ride along for LCR; under
// all2one, samples already labeled with the target are excluded.
struct TriggeredTestSet {
  Dataset data;                    // triggered images, original labels
  std::vector<int> attack_targets; // mapped target per retained sample
};

inline TriggeredTestSet build_poison_test_set(const Dataset& test,
                                              const TriggerSpec& trigger,
                                              const LabelMap& map) {
  const TriggerContext ctx =
      make_trigger_context(trigger, test.channels(), test.height(), test.width());
  std::vector<int> keep;
  for (int i = 0; i < test.count(); ++i) {
    const int y = test.labels[static_cast<std::size_t>(i)];
    if (map.map(y, test.classes) == y) continue;
    keep.push_back(i);
  }
  TriggeredTestSet out;
  out.data = test.subset(keep);
  out.attack_targets.reserve(keep.size());
  for (int i = 0; i < out.data.count(); ++i) {
    out.data.set_image(i, apply_trigger(out.data.image(i), ctx));
    out.attack_targets.push_back(
        map.map(out.data.labels[static_cast<std::size_t>(i)], test.classes));
  }
  return out;
}

}  // namespace nftlab
