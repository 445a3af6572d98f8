#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nftlab/error.hpp"
#include "nftlab/model.hpp"

namespace nftlab {

inline std::uint64_t fnv1a64(const std::uint8_t* p, std::size_t n,
                             std::uint64_t h = 14695981039346656037ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string dataset_id;
  std::string poison_spec_id;
};

struct Checkpoint {
  ModelSpec spec;
  Parameters params;
  std::optional<MaskSet> masks;
  CheckpointMeta meta;
};

namespace detail {

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv") return LayerKind::Conv;
  if (s == "relu") return LayerKind::Relu;
  if (s == "maxpool2") return LayerKind::MaxPool2;
  if (s == "flatten") return LayerKind::Flatten;
  throw FormatError("unknown layer kind '" + s + "'");
}

}  // namespace detail

inline nlohmann::ordered_json model_spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["input"] = {spec.in_channels, spec.in_height, spec.in_width};
  j["classes"] = spec.classes;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : spec.layers) {
    nlohmann::ordered_json lj;
    lj["kind"] = detail::layer_kind_name(l.kind);
    if (l.kind == LayerKind::Dense) {
      lj["in"] = l.in;
      lj["out"] = l.out;
      lj["bias"] = l.has_bias;
    } else if (l.kind == LayerKind::Conv) {
      lj["in"] = l.in;
      lj["out"] = l.out;
      lj["k"] = l.k;
      lj["stride"] = l.stride;
      lj["pad"] = l.pad;
      lj["bias"] = l.has_bias;
    }
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.in_channels = j.at("input").at(0).get<int>();
  spec.in_height = j.at("input").at(1).get<int>();
  spec.in_width = j.at("input").at(2).get<int>();
  spec.classes = j.at("classes").get<int>();
  for (const auto& lj : j.at("layers")) {
    const LayerKind kind = detail::layer_kind_from(lj.at("kind").get<std::string>());
    LayerSpec l;
    l.kind = kind;
    if (kind == LayerKind::Dense) {
      l.in = lj.at("in").get<int>();
      l.out = lj.at("out").get<int>();
      l.has_bias = lj.at("bias").get<bool>();
    } else if (kind == LayerKind::Conv) {
      l.in = lj.at("in").get<int>();
      l.out = lj.at("out").get<int>();
      l.k = lj.at("k").get<int>();
      l.stride = lj.at("stride").get<int>();
      l.pad = lj.at("pad").get<int>();
      l.has_bias = lj.at("bias").get<bool>();
    }
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
  put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t at = 0;

  void need(std::size_t k) const {
    if (at + k > n) throw FormatError("checkpoint file truncated");
  }
  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[at + i]) << (8 * i);
    at += 8;
    return v;
  }
  double f64le() { return std::bit_cast<double>(u64le()); }
};

}  // namespace detail

// Binary layout: "NFTC" | u32le version | u64le json length | json |
// per parametric layer (declaration order): weights, bias (if present),
// mask (if the checkpoint carries masks) as f64le | u64le FNV-1a of all
// preceding bytes.
inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.push_back('N');
  out.push_back('F');
  out.push_back('T');
  out.push_back('C');
  detail::put_u32le(out, detail::kCheckpointVersion);

  nlohmann::ordered_json j;
  j["model"] = model_spec_to_json(ckpt.spec);
  j["metadata"] = {{"seed", ckpt.meta.seed},
                   {"dataset-id", ckpt.meta.dataset_id},
                   {"poison-spec-id", ckpt.meta.poison_spec_id}};
  j["has-masks"] = ckpt.masks.has_value();
  if (ckpt.masks) {
    auto flags = nlohmann::ordered_json::array();
    for (bool b : ckpt.masks->maskable) flags.push_back(b);
    j["maskable"] = flags;
  }
  const std::string blob = j.dump();
  detail::put_u64le(out, blob.size());
  out.insert(out.end(), blob.begin(), blob.end());

  for (std::size_t i = 0; i < ckpt.params.layers.size(); ++i) {
    const LayerParams& lp = ckpt.params.layers[i];
    for (double v : lp.weights.data) detail::put_f64le(out, v);
    for (double v : lp.bias.data) detail::put_f64le(out, v);
    if (ckpt.masks)
      for (double v : ckpt.masks->masks[i].data) detail::put_f64le(out, v);
  }

  detail::put_u64le(out, fnv1a64(out.data(), out.size()));
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r{bytes.data(), bytes.size()};
  r.need(4);
  if (std::memcmp(bytes.data(), "NFTC", 4) != 0)
    throw BadMagicError("bad checkpoint magic");
  r.at = 4;
  const std::uint32_t version = r.u32le();
  if (version != detail::kCheckpointVersion)
    throw VersionMismatchError("unsupported checkpoint version " +
                               std::to_string(version));
  const std::uint64_t json_len = r.u64le();
  r.need(json_len);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(r.at),
                              bytes.begin() + static_cast<std::ptrdiff_t>(r.at + json_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header json: ") + e.what());
  }
  r.at += json_len;

  Checkpoint ckpt;
  ckpt.spec = model_spec_from_json(j.at("model"));
  ckpt.meta.seed = j.at("metadata").at("seed").get<std::uint64_t>();
  ckpt.meta.dataset_id = j.at("metadata").at("dataset-id").get<std::string>();
  ckpt.meta.poison_spec_id = j.at("metadata").at("poison-spec-id").get<std::string>();
  const bool has_masks = j.at("has-masks").get<bool>();

  MaskSet masks;
  for (const auto& l : ckpt.spec.layers) {
    if (!l.parametric()) continue;
    LayerParams lp;
    lp.kind = l.kind;
    if (l.kind == LayerKind::Dense)
      lp.weights = Tensor({l.in, l.out});
    else
      lp.weights = Tensor({l.out, l.in, l.k, l.k});
    for (double& v : lp.weights.data) v = r.f64le();
    if (l.has_bias) {
      lp.bias = Tensor({l.out});
      for (double& v : lp.bias.data) v = r.f64le();
    }
    if (has_masks) {
      Tensor m({l.out});
      for (double& v : m.data) v = r.f64le();
      masks.masks.push_back(std::move(m));
    }
    ckpt.params.layers.push_back(std::move(lp));
  }
  if (has_masks) {
    for (const auto& b : j.at("maskable")) masks.maskable.push_back(b.get<bool>());
    if (masks.maskable.size() != masks.masks.size())
      throw FormatError("maskable flag count does not match layer count");
    ckpt.masks = std::move(masks);
  }

  const std::uint64_t stored = r.u64le();
  if (r.at != bytes.size()) throw FormatError("trailing bytes after checksum");
  const std::uint64_t computed = fnv1a64(bytes.data(), bytes.size() - 8);
  if (stored != computed) throw FormatError("checkpoint checksum mismatch");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace nftlab
