#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nftlab/attack.hpp"
#include "nftlab/dataset.hpp"
#include "nftlab/error.hpp"
#include "nftlab/model.hpp"

namespace nftlab {

namespace detail {

constexpr int kEvalChunk = 256;

template <class Fn>
void for_each_prediction(const ModelSpec& spec, const Parameters& params,
                         const Dataset& ds, Fn&& fn) {
  for (int at = 0; at < ds.count(); at += kEvalChunk) {
    const int end = std::min(ds.count(), at + kEvalChunk);
    std::vector<int> idx;
    for (int i = at; i < end; ++i) idx.push_back(i);
    const Tensor logits = forward(spec, params, nullptr, ds.subset(idx).images);
    const std::vector<int> pred = predict(logits);
    for (int i = at; i < end; ++i) fn(i, pred[static_cast<std::size_t>(i - at)]);
  }
}

}  // namespace detail

// Fraction of clean samples classified to their true label.
inline double clean_accuracy(const ModelSpec& spec, const Parameters& params,
                             const Dataset& test) {
  if (test.count() == 0) throw ValueError("accuracy over empty dataset");
  std::int64_t hits = 0;
  detail::for_each_prediction(spec, params, test, [&](int i, int pred) {
    if (pred == test.labels[static_cast<std::size_t>(i)]) ++hits;
  });
  return static_cast<double>(hits) / test.count();
}

inline std::vector<double> per_class_accuracy(const ModelSpec& spec,
                                              const Parameters& params,
                                              const Dataset& test) {
  std::vector<std::int64_t> hits(static_cast<std::size_t>(test.classes), 0);
  std::vector<std::int64_t> totals(static_cast<std::size_t>(test.classes), 0);
  detail::for_each_prediction(spec, params, test, [&](int i, int pred) {
    const int y = test.labels[static_cast<std::size_t>(i)];
    ++totals[static_cast<std::size_t>(y)];
    if (pred == y) ++hits[static_cast<std::size_t>(y)];
  });
  std::vector<double> out(static_cast<std::size_t>(test.classes), 0.0);
  for (int k = 0; k < test.classes; ++k)
    if (totals[static_cast<std::size_t>(k)] > 0)
      out[static_cast<std::size_t>(k)] =
          static_cast<double>(hits[static_cast<std::size_t>(k)]) /
          static_cast<double>(totals[static_cast<std::size_t>(k)]);
  return out;
}

// Fraction of triggered samples classified to their attack target.
inline double attack_success_rate(const ModelSpec& spec, const Parameters& params,
                                  const TriggeredTestSet& tts) {
  if (tts.data.count() == 0) throw ValueError("asr over empty triggered set");
  std::int64_t hits = 0;
  detail::for_each_prediction(spec, params, tts.data, [&](int i, int pred) {
    if (pred == tts.attack_targets[static_cast<std::size_t>(i)]) ++hits;
  });
  return static_cast<double>(hits) / tts.data.count();
}

// Fraction of triggered samples classified to their original label.
inline double label_correction_rate(const ModelSpec& spec, const Parameters& params,
                                    const TriggeredTestSet& tts) {
  if (tts.data.count() == 0) throw ValueError("lcr over empty triggered set");
  std::int64_t hits = 0;
  detail::for_each_prediction(spec, params, tts.data, [&](int i, int pred) {
    if (pred == tts.data.labels[static_cast<std::size_t>(i)]) ++hits;
  });
  return static_cast<double>(hits) / tts.data.count();
}

// CSV schema: split,true_label,attack_target,e_0..e_{k-1}. Clean rows carry
// attack_target -1. Deterministic row order and number formatting, so a
// re-export is byte-identical.
inline void export_embeddings(const ModelSpec& spec, const Parameters& params,
                              const Dataset& clean, const TriggeredTestSet* triggered,
                              const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");

  const int width = [&] {
    std::vector<int> one{0};
    const Tensor e = embeddings(spec, params, nullptr, clean.subset(one).images);
    return e.dim(1);
  }();

  f << "split,true_label,attack_target";
  for (int k = 0; k < width; ++k) f << ",e_" << k;
  f << "\n";

  char buf[32];
  auto write_rows = [&](const Dataset& ds, const std::vector<int>* targets,
                        const char* split) {
    for (int at = 0; at < ds.count(); at += detail::kEvalChunk) {
      const int end = std::min(ds.count(), at + detail::kEvalChunk);
      std::vector<int> idx;
      for (int i = at; i < end; ++i) idx.push_back(i);
      const Tensor e = embeddings(spec, params, nullptr, ds.subset(idx).images);
      for (int i = at; i < end; ++i) {
        f << split << ',' << ds.labels[static_cast<std::size_t>(i)] << ','
          << (targets ? (*targets)[static_cast<std::size_t>(i)] : -1);
        for (int k = 0; k < width; ++k) {
          std::snprintf(buf, sizeof buf, "%.17g",
                        e[static_cast<std::int64_t>(i - at) * width + k]);
          f << ',' << buf;
        }
        f << "\n";
      }
    }
  };

  write_rows(clean, nullptr, "clean");
  if (triggered) write_rows(triggered->data, &triggered->attack_targets, "triggered");
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace nftlab
