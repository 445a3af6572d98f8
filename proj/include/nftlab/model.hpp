#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nftlab/autodiff.hpp"
#include "nftlab/error.hpp"
#include "nftlab/rng.hpp"
#include "nftlab/tensor.hpp"

namespace nftlab {

enum class LayerKind { Dense, Conv, Relu, MaxPool2, Flatten };

struct LayerSpec {
  LayerKind kind;
  int in = 0, out = 0;            // Dense: fan-in/fan-out; Conv: inC/outC
  int k = 0, stride = 1, pad = 0; // Conv only
  bool has_bias = true;

  static LayerSpec dense(int in, int out, bool bias = true) {
    return {LayerKind::Dense, in, out, 0, 1, 0, bias};
  }
  static LayerSpec conv(int in_c, int out_c, int k, int stride, int pad,
                        bool bias = true) {
    return {LayerKind::Conv, in_c, out_c, k, stride, pad, bias};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec max_pool2() { return {LayerKind::MaxPool2}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }

  bool parametric() const {
    return kind == LayerKind::Dense || kind == LayerKind::Conv;
  }
};

struct ModelSpec {
  int in_channels = 1, in_height = 1, in_width = 1;
  int classes = 2;
  std::vector<LayerSpec> layers;

  std::vector<int> parametric_layer_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].parametric()) out.push_back(static_cast<int>(i));
    return out;
  }

  bool any_bias() const {
    for (const auto& l : layers)
      if (l.parametric() && l.has_bias) return true;
    return false;
  }

  // Walks the layer stack symbolically; throws ShapeError if layers do not
  // compose or the head is not Dense(out = classes).
  void validate() const {
    int c = in_channels, h = in_height, w = in_width;
    bool flat = false;
    int d = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      const std::string at = "layer " + std::to_string(i);
      switch (l.kind) {
        case LayerKind::Dense: {
          if (!flat) {
            // A Dense layer directly on [C,H,W] input needs a Flatten first.
            throw ShapeError(at + ": dense layer on unflattened input");
          }
          if (d != l.in)
            throw ShapeError(at + ": dense fan-in " + std::to_string(l.in) +
                             " does not match incoming width " + std::to_string(d));
          d = l.out;
          break;
        }
        case LayerKind::Conv: {
          if (flat) throw ShapeError(at + ": conv layer on flattened input");
          if (c != l.in)
            throw ShapeError(at + ": conv in-channels " + std::to_string(l.in) +
                             " does not match incoming channels " + std::to_string(c));
          const int ho = (h + 2 * l.pad - l.k) / l.stride + 1;
          const int wo = (w + 2 * l.pad - l.k) / l.stride + 1;
          if (h + 2 * l.pad < l.k || w + 2 * l.pad < l.k || ho < 1 || wo < 1)
            throw ShapeError(at + ": conv output dimension < 1");
          c = l.out;
          h = ho;
          w = wo;
          break;
        }
        case LayerKind::Relu:
          break;
        case LayerKind::MaxPool2:
          if (flat) throw ShapeError(at + ": max-pool on flattened input");
          if (h % 2 != 0 || w % 2 != 0)
            throw ShapeError(at + ": max-pool needs even dims, got " +
                             std::to_string(h) + "x" + std::to_string(w));
          h /= 2;
          w /= 2;
          break;
        case LayerKind::Flatten:
          if (flat) throw ShapeError(at + ": double flatten");
          flat = true;
          d = c * h * w;
          break;
      }
    }
    if (layers.empty() || layers.back().kind != LayerKind::Dense)
      throw ShapeError("model must end with a dense layer");
    if (layers.back().out != classes)
      throw ShapeError("final dense width " + std::to_string(layers.back().out) +
                       " does not equal class count " + std::to_string(classes));
  }
};

struct LayerParams {
  LayerKind kind = LayerKind::Dense;
  Tensor weights;  // Dense: [in,out] (columns are neurons); Conv: [F,C,kh,kw]
  Tensor bias;     // [out]; empty when the layer has no bias
};

// One entry per parametric layer, in declaration order.
struct Parameters {
  std::vector<LayerParams> layers;

  bool operator==(const Parameters& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].kind != o.layers[i].kind) return false;
      if (layers[i].weights.shape != o.layers[i].weights.shape) return false;
      if (layers[i].weights.data != o.layers[i].weights.data) return false;
      if (layers[i].bias.data != o.layers[i].bias.data) return false;
    }
    return true;
  }
};

// Per-neuron (dense) / per-filter (conv) scalar masks, one vector per
// parametric layer. Non-maskable layers keep their vector pinned at 1.
struct MaskSet {
  std::vector<Tensor> masks;
  std::vector<bool> maskable;

  static MaskSet ones_for(const ModelSpec& spec, bool skip_first_layer = true) {
    MaskSet m;
    bool first = true;
    for (const auto& l : spec.layers) {
      if (!l.parametric()) continue;
      m.masks.push_back(Tensor({l.out}, 1.0));
      m.maskable.push_back(!(first && skip_first_layer));
      first = false;
    }
    return m;
  }

  bool operator==(const MaskSet& o) const {
    if (maskable != o.maskable || masks.size() != o.masks.size()) return false;
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i].data != o.masks[i].data) return false;
    return true;
  }
};

// He initialization: weights ~ Normal(0, 2/fan_in), biases zero. The draw
// order is fixed (layers in order, weights row-major), so a seed pins every
// bit of the result.
inline Parameters build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Parameters p;
  for (const auto& l : spec.layers) {
    if (!l.parametric()) continue;
    LayerParams lp;
    lp.kind = l.kind;
    if (l.kind == LayerKind::Dense) {
      const double sd = std::sqrt(2.0 / l.in);
      lp.weights = Tensor({l.in, l.out});
      for (double& v : lp.weights.data) v = rng.normal(0.0, sd);
    } else {
      const int fan_in = l.in * l.k * l.k;
      const double sd = std::sqrt(2.0 / fan_in);
      lp.weights = Tensor({l.out, l.in, l.k, l.k});
      for (double& v : lp.weights.data) v = rng.normal(0.0, sd);
    }
    if (l.has_bias) lp.bias = Tensor({l.out}, 0.0);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

// theta (.) M: dense columns / conv filters scaled by their neuron mask.
// Biases are never touched.
inline Parameters apply_masks(const Parameters& params, const MaskSet& masks) {
  if (params.layers.size() != masks.masks.size())
    throw ShapeError("mask set has " + std::to_string(masks.masks.size()) +
                     " layers, parameters have " + std::to_string(params.layers.size()));
  Parameters out = params;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerParams& lp = out.layers[i];
    const Tensor& m = masks.masks[i];
    if (lp.kind == LayerKind::Dense) {
      if (m.size() != lp.weights.dim(1))
        throw ShapeError("mask length " + std::to_string(m.size()) +
                         " does not match neuron count " +
                         std::to_string(lp.weights.dim(1)) + " in layer " +
                         std::to_string(i));
      const int in = lp.weights.dim(0), outn = lp.weights.dim(1);
      for (int r = 0; r < in; ++r)
        for (int c = 0; c < outn; ++c)
          lp.weights[static_cast<std::int64_t>(r) * outn + c] *= m[c];
    } else {
      if (m.size() != lp.weights.dim(0))
        throw ShapeError("mask length " + std::to_string(m.size()) +
                         " does not match filter count " +
                         std::to_string(lp.weights.dim(0)) + " in layer " +
                         std::to_string(i));
      const std::int64_t block = lp.weights.size() / lp.weights.dim(0);
      for (int f = 0; f < lp.weights.dim(0); ++f)
        for (std::int64_t j = 0; j < block; ++j) lp.weights[f * block + j] *= m[f];
    }
  }
  return out;
}

// Node handles of one forward construction on a tape.
struct ForwardNodes {
  int input = -1;
  int logits = -1;
  int embeddings = -1;  // activations entering the final dense layer
  std::vector<int> weight_nodes;
  std::vector<int> bias_nodes;  // -1 where the layer has no bias
  std::vector<int> mask_nodes;  // -1 where the layer is unmasked
};

// Builds the full forward graph. When `masks` is given, maskable layers run
// through scale_columns/scale_filters; with mask_bias the same neuron mask
// also scales the bias vector.
inline ForwardNodes build_forward(Tape& tape, const ModelSpec& spec,
                                  const Parameters& params, const MaskSet* masks,
                                  int input_node, bool mask_bias = false) {
  if (masks && masks->masks.size() != params.layers.size())
    throw ShapeError("mask set has " + std::to_string(masks->masks.size()) +
                     " layers, parameters have " + std::to_string(params.layers.size()));
  ForwardNodes out;
  out.input = input_node;
  int cur = input_node;
  std::size_t pi = 0;
  const std::size_t n_param = params.layers.size();
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Dense: {
        const LayerParams& lp = params.layers[pi];
        if (pi + 1 == n_param) out.embeddings = cur;
        int w = tape.input(lp.weights);
        out.weight_nodes.push_back(w);
        int mnode = -1;
        if (masks && masks->maskable[pi]) {
          mnode = tape.input(masks->masks[pi]);
          w = tape.scale_columns(w, mnode);
        }
        out.mask_nodes.push_back(mnode);
        cur = tape.matmul(cur, w);
        if (l.has_bias) {
          int b = tape.input(lp.bias);
          out.bias_nodes.push_back(b);
          if (mnode >= 0 && mask_bias) b = tape.mul_elem(b, mnode);
          cur = tape.add_bias_rows(cur, b);
        } else {
          out.bias_nodes.push_back(-1);
        }
        ++pi;
        break;
      }
      case LayerKind::Conv: {
        const LayerParams& lp = params.layers[pi];
        if (pi + 1 == n_param) out.embeddings = cur;
        int w = tape.input(lp.weights);
        out.weight_nodes.push_back(w);
        int mnode = -1;
        if (masks && masks->maskable[pi]) {
          mnode = tape.input(masks->masks[pi]);
          w = tape.scale_filters(w, mnode);
        }
        out.mask_nodes.push_back(mnode);
        cur = tape.conv2d(cur, w, l.stride, l.pad);
        if (l.has_bias) {
          int b = tape.input(lp.bias);
          out.bias_nodes.push_back(b);
          if (mnode >= 0 && mask_bias) b = tape.mul_elem(b, mnode);
          cur = tape.add_bias_channels(cur, b);
        } else {
          out.bias_nodes.push_back(-1);
        }
        ++pi;
        break;
      }
      case LayerKind::Relu:
        cur = tape.relu(cur);
        break;
      case LayerKind::MaxPool2:
        cur = tape.max_pool2(cur);
        break;
      case LayerKind::Flatten:
        cur = tape.flatten(cur);
        break;
    }
  }
  out.logits = cur;
  return out;
}

// Inference-only forward; masks == nullptr means implicit all-ones masks.
inline Tensor forward(const ModelSpec& spec, const Parameters& params,
                      const MaskSet* masks, const Tensor& batch) {
  Tape tape;
  const int x = tape.input(batch);
  const ForwardNodes fn = build_forward(tape, spec, params, masks, x);
  return tape.value(fn.logits);
}

// Per-row argmax; ties resolved to the lowest class index.
inline std::vector<int> predict(const Tensor& logits) {
  if (logits.rank() != 2)
    throw ShapeError("predict wants [N,c] logits, got " + logits.shape_str());
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = logits.data.data() + static_cast<std::int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

// Activations entering the final dense layer.
inline Tensor embeddings(const ModelSpec& spec, const Parameters& params,
                         const MaskSet* masks, const Tensor& batch) {
  if (params.layers.size() < 2)
    throw ValueError("embeddings need a model with >= 2 parametric layers");
  Tape tape;
  const int x = tape.input(batch);
  const ForwardNodes fn = build_forward(tape, spec, params, masks, x);
  return tape.value(fn.embeddings);
}

// Reference architectures. The hidden widths are fixed; only input geometry,
// class count and bias usage vary.
inline ModelSpec mlp_small(int c, int h, int w, int classes, bool bias = true) {
  ModelSpec spec;
  spec.in_channels = c;
  spec.in_height = h;
  spec.in_width = w;
  spec.classes = classes;
  const int d = c * h * w;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(d, 256, bias),
                 LayerSpec::relu(), LayerSpec::dense(256, classes, bias)};
  spec.validate();
  return spec;
}

inline ModelSpec cnn_small(int c, int h, int w, int classes, bool bias = true) {
  ModelSpec spec;
  spec.in_channels = c;
  spec.in_height = h;
  spec.in_width = w;
  spec.classes = classes;
  const int d = 32 * (h / 4) * (w / 4);
  spec.layers = {LayerSpec::conv(c, 16, 3, 1, 1, bias),
                 LayerSpec::relu(),
                 LayerSpec::max_pool2(),
                 LayerSpec::conv(16, 32, 3, 1, 1, bias),
                 LayerSpec::relu(),
                 LayerSpec::max_pool2(),
                 LayerSpec::flatten(),
                 LayerSpec::dense(d, 128, bias),
                 LayerSpec::relu(),
                 LayerSpec::dense(128, classes, bias)};
  spec.validate();
  return spec;
}

// Bias-free scalar-head MLP for the homogeneity-based diagnostics.
inline ModelSpec theorem_mlp(int c, int h, int w, int hidden = 32) {
  ModelSpec spec;
  spec.in_channels = c;
  spec.in_height = h;
  spec.in_width = w;
  spec.classes = 1;
  const int d = c * h * w;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(d, hidden, false),
                 LayerSpec::relu(), LayerSpec::dense(hidden, 1, false)};
  spec.validate();
  return spec;
}

}  // namespace nftlab
