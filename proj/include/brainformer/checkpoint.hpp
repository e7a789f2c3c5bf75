#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "brainformer/adam.hpp"
#include "brainformer/config.hpp"
#include "brainformer/model.hpp"
#include "brainformer/volume_io.hpp"

namespace brainformer {

// BRCK layout, little-endian:
//   "BRCK", u16 version, u8 dtype (1 = f32, 2 = f64), u8 reserved,
//   u64 model hash, u64 step,
//   u32 length + RNG state text, u32 length + config text (key=value lines),
//   u32 tensor count, then per tensor:
//     u32 length + name, u32 rank, u32 extents[rank],
//     values, Adam first moments, Adam second moments (numel each, in dtype).
inline constexpr char kCheckpointMagic[4] = {'B', 'R', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <Scalar T>
struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<T> values, m, v;
};

template <Scalar T>
struct Checkpoint {
  std::uint64_t model_hash = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  std::string config;
  std::vector<CheckpointTensor<T>> tensors;
};

template <Scalar T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

inline void put_string(ByteWriter& w, const std::string& s) {
  w.put(static_cast<std::uint32_t>(s.size()));
  w.put_bytes(s.data(), s.size());
}

inline std::string get_string(ByteReader& r) {
  const auto n = r.get<std::uint32_t>();
  r.need(n);
  std::string s(n, '\0');
  r.get_bytes(s.data(), n);
  return s;
}

}  // namespace detail

template <Scalar T>
std::vector<unsigned char> encode_checkpoint(const Checkpoint<T>& c) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(dtype_of<T>()));
  w.put(std::uint8_t{0});
  w.put(c.model_hash);
  w.put(c.step);
  detail::put_string(w, c.rng_state);
  detail::put_string(w, c.config);
  w.put(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    detail::put_string(w, t.name);
    w.put(static_cast<std::uint32_t>(t.shape.size()));
    for (const auto e : t.shape) w.put(static_cast<std::uint32_t>(e));
    for (const auto* buf : {&t.values, &t.m, &t.v}) {
      if (buf->size() != shape_numel(t.shape)) throw UsageError("checkpoint tensor " + t.name + ": size mismatch");
      for (const T x : *buf) w.put(x);
    }
  }
  return w.bytes();
}

/// Reads the header far enough to learn the stored precision.
inline DType checkpoint_dtype(const std::vector<unsigned char>& bytes, const std::string& source) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw IoError(source + ": not a BRCK checkpoint");
  }
  const auto version = std::uint16_t(bytes[4] | (bytes[5] << 8));
  if (version != kCheckpointVersion) throw IoError(source + ": unsupported checkpoint version " + std::to_string(version));
  if (bytes[6] != 1 && bytes[6] != 2) throw IoError(source + ": unknown checkpoint dtype");
  return static_cast<DType>(bytes[6]);
}

template <Scalar T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source = "checkpoint") {
  if (checkpoint_dtype(bytes, source) != dtype_of<T>()) {
    throw ConfigError(source + ": checkpoint precision differs from the requested precision");
  }
  detail::ByteReader r(bytes, source);
  char magic[4];
  r.get_bytes(magic, 4);
  r.get<std::uint16_t>();
  r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  Checkpoint<T> c;
  c.model_hash = r.get<std::uint64_t>();
  c.step = r.get<std::uint64_t>();
  c.rng_state = detail::get_string(r);
  c.config = detail::get_string(r);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor<T> t;
    t.name = detail::get_string(r);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw IoError(source + ": implausible tensor rank");
    for (std::uint32_t a = 0; a < rank; ++a) t.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_numel(t.shape);
    r.need(3 * n * sizeof(T));
    for (auto* buf : {&t.values, &t.m, &t.v}) {
      buf->resize(n);
      for (auto& x : *buf) x = r.get<T>();
    }
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw IoError(source + ": trailing bytes after checkpoint payload");
  return c;
}

template <Scalar T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& c) {
  detail::write_file_bytes(path, encode_checkpoint(c));
}

template <Scalar T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(detail::read_file_bytes(path), path);
}

inline DType read_checkpoint_dtype(const std::string& path) {
  return checkpoint_dtype(detail::read_file_bytes(path), path);
}

/// Training configuration stored in a checkpoint.
template <Scalar T>
TrainConfig checkpoint_config(const Checkpoint<T>& c) {
  TrainConfig cfg;
  apply_config_text(cfg, c.config);
  if (model_hash(cfg.model) != c.model_hash) throw IoError("checkpoint config does not match its model hash");
  return cfg;
}

template <Scalar T>
Checkpoint<T> capture_checkpoint(const Brainformer<T>& model, const Adam<T>& adam, const TrainConfig& cfg,
                                 std::string rng_state) {
  Checkpoint<T> c;
  c.model_hash = model_hash(model.config());
  c.step = adam.steps();
  c.rng_state = std::move(rng_state);
  c.config = config_text(cfg);
  const auto& items = model.parameters().items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& p = items[k];
    c.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()},
                         adam.first_moments()[k], adam.second_moments()[k]});
  }
  return c;
}

/// Copies parameters and optimizer state into an already-constructed model.
template <Scalar T>
void restore_checkpoint(const Checkpoint<T>& c, Brainformer<T>& model, std::type_identity_t<Adam<T>>* adam = nullptr) {
  if (c.model_hash != model_hash(model.config())) {
    throw ConfigError("checkpoint was written for a different model configuration");
  }
  auto& items = model.parameters().items();
  if (items.size() != c.tensors.size()) throw ConfigError("checkpoint parameter count differs from the model");
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& t = c.tensors[k];
    if (t.name != items[k].name || t.shape != items[k].tensor.shape()) {
      throw ConfigError("checkpoint tensor " + t.name + " " + shape_string(t.shape) + " does not match parameter " +
                        items[k].name + " " + shape_string(items[k].tensor.shape()));
    }
    std::copy(t.values.begin(), t.values.end(), items[k].tensor.mutable_data().begin());
    if (adam != nullptr) {
      adam->first_moments()[k] = t.m;
      adam->second_moments()[k] = t.v;
    }
  }
  if (adam != nullptr) adam->set_steps(c.step);
}

}  // namespace brainformer
