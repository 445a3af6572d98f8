#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nftlab/error.hpp"
#include "nftlab/rng.hpp"
#include "nftlab/tensor.hpp"

namespace nftlab {

struct NormalizationSpec {
  std::vector<double> mean;
  std::vector<double> std_dev;

  void validate(int channels) const {
    if (static_cast<int>(mean.size()) != channels ||
        static_cast<int>(std_dev.size()) != channels)
      throw ShapeError("normalization spec has " + std::to_string(mean.size()) +
                       "/" + std::to_string(std_dev.size()) +
                       " channels, dataset has " + std::to_string(channels));
    for (double s : std_dev)
      if (s <= 0.0) throw ValueError("normalization std must be positive");
  }
};

struct Dataset {
  Tensor images;                 // [N,C,H,W]; values in [0,1] until normalized
  std::vector<int> labels;       // in {0..classes-1}
  int classes = 0;
  // The spec that HAS been applied; nullopt means raw pixels.
  std::optional<NormalizationSpec> normalization;

  int count() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  std::int64_t sample_size() const {
    return static_cast<std::int64_t>(channels()) * height() * width();
  }

  Tensor image(int i) const {
    Tensor t({channels(), height(), width()});
    const std::int64_t n = sample_size();
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * n), n,
                t.data.begin());
    return t;
  }

  void set_image(int i, const Tensor& img) {
    const std::int64_t n = sample_size();
    if (img.size() != n)
      throw ShapeError("image size " + img.shape_str() + " does not fit dataset");
    std::copy_n(img.data.begin(), n,
                images.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }

  Dataset subset(const std::vector<int>& indices) const {
    Dataset out;
    out.classes = classes;
    out.normalization = normalization;
    out.images = Tensor({static_cast<int>(indices.size()), channels(), height(), width()});
    out.labels.reserve(indices.size());
    const std::int64_t n = sample_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(indices[k] * n), n,
                  out.images.data.begin() + static_cast<std::ptrdiff_t>(k * n));
      out.labels.push_back(labels[static_cast<std::size_t>(indices[k])]);
    }
    return out;
  }
};

inline Dataset normalize(const Dataset& ds, const NormalizationSpec& spec) {
  if (ds.normalization)
    throw ValueError("dataset is already normalized");
  spec.validate(ds.channels());
  Dataset out = ds;
  const std::int64_t plane = static_cast<std::int64_t>(ds.height()) * ds.width();
  for (int i = 0; i < ds.count(); ++i)
    for (int c = 0; c < ds.channels(); ++c) {
      double* p = out.images.data.data() +
                  (static_cast<std::int64_t>(i) * ds.channels() + c) * plane;
      for (std::int64_t k = 0; k < plane; ++k)
        p[k] = (p[k] - spec.mean[static_cast<std::size_t>(c)]) /
               spec.std_dev[static_cast<std::size_t>(c)];
    }
  out.normalization = spec;
  return out;
}

inline Dataset denormalize(const Dataset& ds) {
  if (!ds.normalization) throw ValueError("dataset is not normalized");
  const NormalizationSpec& spec = *ds.normalization;
  Dataset out = ds;
  const std::int64_t plane = static_cast<std::int64_t>(ds.height()) * ds.width();
  for (int i = 0; i < ds.count(); ++i)
    for (int c = 0; c < ds.channels(); ++c) {
      double* p = out.images.data.data() +
                  (static_cast<std::int64_t>(i) * ds.channels() + c) * plane;
      for (std::int64_t k = 0; k < plane; ++k)
        p[k] = p[k] * spec.std_dev[static_cast<std::size_t>(c)] +
               spec.mean[static_cast<std::size_t>(c)];
    }
  out.normalization.reset();
  return out;
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

inline std::uint32_t u32be(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) throw FormatError("idx file truncated");
  return (static_cast<std::uint32_t>(b[at]) << 24) |
         (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) |
         static_cast<std::uint32_t>(b[at + 3]);
}

}  // namespace detail

// Big-endian IDX container: image magic 2051 with dims N,H,W (C = 1), label
// magic 2049. Pixel bytes scale by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int class_count = 10) {
  const auto ib = detail::read_file_bytes(images_path);
  const auto lb = detail::read_file_bytes(labels_path);

  if (detail::u32be(ib, 0) != 2051)
    throw BadMagicError("'" + images_path + "' is not an idx image file (magic " +
                        std::to_string(detail::u32be(ib, 0)) + ", want 2051)");
  if (detail::u32be(lb, 0) != 2049)
    throw BadMagicError("'" + labels_path + "' is not an idx label file (magic " +
                        std::to_string(detail::u32be(lb, 0)) + ", want 2049)");

  const std::uint32_t n = detail::u32be(ib, 4);
  const std::uint32_t h = detail::u32be(ib, 8);
  const std::uint32_t w = detail::u32be(ib, 12);
  const std::uint32_t ln = detail::u32be(lb, 4);
  if (n != ln)
    throw FormatError("idx count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(ln) + " labels");
  const std::size_t pixels = static_cast<std::size_t>(n) * h * w;
  if (ib.size() != 16 + pixels) throw FormatError("idx image file truncated");
  if (lb.size() != 8 + n) throw FormatError("idx label file truncated");

  Dataset ds;
  ds.classes = class_count;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
  for (std::size_t i = 0; i < pixels; ++i)
    ds.images[static_cast<std::int64_t>(i)] = ib[16 + i] / 255.0;
  ds.labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int y = lb[8 + i];
    if (y >= class_count)
      throw FormatError("idx label " + std::to_string(y) + " out of range for " +
                        std::to_string(class_count) + " classes");
    ds.labels.push_back(y);
  }
  return ds;
}

// Writes a [N,1,H,W] dataset as an IDX pair, quantizing pixels to bytes.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  if (ds.channels() != 1) throw ValueError("idx container only holds 1-channel images");
  if (ds.normalization) throw ValueError("refusing to quantize normalized pixels");
  auto put_u32be = [](std::ofstream& f, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  if (!fi) throw IoError("cannot open '" + images_path + "' for writing");
  put_u32be(fi, 2051);
  put_u32be(fi, static_cast<std::uint32_t>(ds.count()));
  put_u32be(fi, static_cast<std::uint32_t>(ds.height()));
  put_u32be(fi, static_cast<std::uint32_t>(ds.width()));
  for (double v : ds.images.data) {
    const double q = std::clamp(v, 0.0, 1.0) * 255.0;
    const std::uint8_t b = static_cast<std::uint8_t>(std::lround(q));
    fi.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!fi) throw IoError("write failed for '" + images_path + "'");

  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fl) throw IoError("cannot open '" + labels_path + "' for writing");
  put_u32be(fl, 2049);
  put_u32be(fl, static_cast<std::uint32_t>(ds.count()));
  for (int y : ds.labels) {
    const std::uint8_t b = static_cast<std::uint8_t>(y);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!fl) throw IoError("write failed for '" + labels_path + "'");
}

// CIFAR-10 binary batches: 3073-byte records, 1 label byte then 3072 pixel
// bytes (R plane, G plane, B plane, each 32x32 row-major).
inline Dataset load_cifar_binary(const std::vector<std::string>& paths) {
  constexpr int kRecord = 3073;
  constexpr int kSide = 32;
  std::vector<std::vector<std::uint8_t>> files;
  std::size_t total = 0;
  for (const auto& p : paths) {
    files.push_back(detail::read_file_bytes(p));
    if (files.back().size() % kRecord != 0)
      throw FormatError("'" + p + "' length " + std::to_string(files.back().size()) +
                        " is not a multiple of 3073");
    total += files.back().size() / kRecord;
  }
  Dataset ds;
  ds.classes = 10;
  ds.images = Tensor({static_cast<int>(total), 3, kSide, kSide});
  ds.labels.reserve(total);
  std::int64_t at = 0;
  for (const auto& bytes : files) {
    const std::size_t n = bytes.size() / kRecord;
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9)
        throw FormatError("cifar label " + std::to_string(rec[0]) + " out of range");
      ds.labels.push_back(rec[0]);
      for (int k = 0; k < 3072; ++k)
        ds.images[at * 3072 + k] = rec[1 + k] / 255.0;
      ++at;
    }
  }
  return ds;
}

// Deterministic synthetic dataset: class k is an oriented bar pattern at
// angle k*pi/c rendered at two scales: the primary bar through the image
// center with periodic replicas, overlaid with a pixel-scale ripple at the
// same angle, so class signal reaches every pixel at both coarse and fine
// frequencies. Gaussian pixel noise is added and the result clamped to
// [0,1]. Default sigma 0.1; sigma 0 makes within-class images identical.
inline Dataset synth_generate(int classes, int per_class, int h, int w,
                              std::uint64_t seed, double sigma = 0.1) {
  if (classes < 2) throw ValueError("synth_generate needs >= 2 classes");
  if (per_class < 1 || h < 2 || w < 2)
    throw ValueError("synth_generate needs per_class >= 1 and dims >= 2");
  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({classes * per_class, 1, h, w});
  ds.labels.resize(static_cast<std::size_t>(classes) * per_class);
  Rng rng(seed);

  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double side = std::min(h, w);
  const double bar_sd = 0.10 * side;
  const double period = std::max(3.0, 0.33 * side);  // replica spacing
  std::int64_t at = 0;
  for (int k = 0; k < classes; ++k) {
    const double theta = k * std::numbers::pi / classes;
    const double dx = std::cos(theta), dy = std::sin(theta);
    Tensor tmpl({h, w});
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double vx = c - cx, vy = r - cy;
        const double proj = vx * dy - vy * dx;  // signed distance to center bar
        // distance to the nearest bar of the periodic family
        const double m = std::fmod(std::fmod(proj, period) + period, period);
        const double dist = std::min(m, period - m);
        const double coarse = std::exp(-dist * dist / (2.0 * bar_sd * bar_sd));
        // pixel-scale hard ripple at the class angle
        const double ripple = std::cos(std::numbers::pi * proj) > 0.0 ? 1.0 : 0.0;
        tmpl[static_cast<std::int64_t>(r) * w + c] = 0.5 * coarse + 0.5 * ripple;
      }
    for (int s = 0; s < per_class; ++s) {
      ds.labels[static_cast<std::size_t>(k) * per_class + s] = k;
      for (std::int64_t p = 0; p < tmpl.size(); ++p, ++at) {
        const double noise = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
        ds.images[at] = std::clamp(tmpl[p] + noise, 0.0, 1.0);
      }
    }
  }
  return ds;
}

struct SplitSpec {
  enum class Mode { Fraction, PerClassCount };
  Mode mode = Mode::Fraction;
  double fraction = 0.01;
  int per_class = 1;
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset train;
  Dataset validation;
  std::vector<int> train_indices;
  std::vector<int> validation_indices;
};

// Stratified holdout. Fraction mode draws floor(p * N_k) per class k;
// per-class-count mode draws exactly n_c per class. Validation and train are
// disjoint by construction.
inline SplitResult holdout_split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.mode == SplitSpec::Mode::Fraction &&
      (spec.fraction <= 0.0 || spec.fraction >= 1.0))
    throw ValueError("split fraction must be in (0,1)");
  if (spec.mode == SplitSpec::Mode::PerClassCount && spec.per_class < 1)
    throw ValueError("per-class count must be >= 1");

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.classes));
  for (int i = 0; i < ds.count(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]
        .push_back(i);

  Rng rng(spec.seed);
  std::vector<int> val_idx;
  for (int k = 0; k < ds.classes; ++k) {
    auto& pool = by_class[static_cast<std::size_t>(k)];
    const int take =
        spec.mode == SplitSpec::Mode::Fraction
            ? static_cast<int>(spec.fraction * static_cast<double>(pool.size()))
            : spec.per_class;
    if (take > static_cast<int>(pool.size()))
      throw ValueError("class " + std::to_string(k) + " has only " +
                       std::to_string(pool.size()) + " samples, cannot hold out " +
                       std::to_string(take));
    rng.shuffle(pool);
    val_idx.insert(val_idx.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(val_idx.begin(), val_idx.end());

  SplitResult out;
  out.validation_indices = val_idx;
  std::vector<bool> held(static_cast<std::size_t>(ds.count()), false);
  for (int i : val_idx) held[static_cast<std::size_t>(i)] = true;
  for (int i = 0; i < ds.count(); ++i)
    if (!held[static_cast<std::size_t>(i)]) out.train_indices.push_back(i);
  out.train = ds.subset(out.train_indices);
  out.validation = ds.subset(out.validation_indices);
  return out;
}

}  // namespace nftlab
