#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "brainformer/volume.hpp"

namespace brainformer {

// BRNF layout, little-endian:
//   0  "BRNF"
//   4  u16 version (1)
//   6  u8  dtype (1 = f32, 2 = f64)
//   7  u8  flags (bit 0: labels present)
//   8  u32 channels (0 for a label-only file)
//   12 u32 H, 16 u32 W, 20 u32 D
//   24 intensities C×H×W×D, then labels H×W×D as u8
inline constexpr char kVolumeMagic[4] = {'B', 'R', 'N', 'F'};
inline constexpr std::uint16_t kVolumeVersion = 1;
inline constexpr std::size_t kVolumeHeaderSize = 24;

namespace detail {

class ByteWriter {
 public:
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class U>
  void put(U value) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    const auto bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class U>
  U get() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= Bits(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw IoError(source_ + ": truncated payload");
  }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::vector<unsigned char> encode_volume(const VolumeBlock& block) {
  for (const auto e : block.extents) {
    if (e == 0) throw IoError("cannot encode a volume with an empty extent");
  }
  if (block.intensities.size() != block.channels * block.voxels()) {
    throw DimensionError("volume intensities do not match channels × extents");
  }
  if (block.has_labels()) {
    if (block.labels.size() != block.voxels()) throw DimensionError("label count does not match extents");
    validate_labels(block.labels);
  }
  detail::ByteWriter w;
  w.put_bytes(kVolumeMagic, 4);
  w.put(kVolumeVersion);
  w.put(static_cast<std::uint8_t>(block.dtype));
  w.put(static_cast<std::uint8_t>(block.has_labels() ? 1 : 0));
  w.put(static_cast<std::uint32_t>(block.channels));
  for (const auto e : block.extents) w.put(static_cast<std::uint32_t>(e));
  for (const double v : block.intensities) {
    if (block.dtype == DType::f32) {
      w.put(static_cast<float>(v));
    } else {
      w.put(v);
    }
  }
  w.put_bytes(block.labels.data(), block.labels.size());
  return w.bytes();
}

inline VolumeBlock decode_volume(const std::vector<unsigned char>& bytes, const std::string& source = "volume") {
  detail::ByteReader r(bytes, source);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kVolumeMagic, 4) != 0) throw IoError(source + ": bad magic (not a BRNF file)");
  const auto version = r.get<std::uint16_t>();
  if (version != kVolumeVersion) {
    throw IoError(source + ": unsupported version " + std::to_string(version));
  }
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != 1 && dtype != 2) throw IoError(source + ": unknown dtype code " + std::to_string(dtype));
  const auto flags = r.get<std::uint8_t>();
  if (flags > 1) throw IoError(source + ": unknown flag bits");
  VolumeBlock block;
  block.dtype = static_cast<DType>(dtype);
  block.channels = r.get<std::uint32_t>();
  for (auto& e : block.extents) {
    e = r.get<std::uint32_t>();
    if (e == 0) throw IoError(source + ": empty extent");
  }
  const bool labels = flags & 1;
  if (block.channels == 0 && !labels) throw IoError(source + ": file holds neither intensities nor labels");
  const std::size_t elem = block.dtype == DType::f32 ? 4 : 8;
  const std::size_t expect = block.channels * block.voxels() * elem + (labels ? block.voxels() : 0);
  if (r.remaining() != expect) {
    throw IoError(source + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                  std::to_string(expect));
  }
  block.intensities.resize(block.channels * block.voxels());
  for (auto& v : block.intensities) {
    v = block.dtype == DType::f32 ? double(r.get<float>()) : r.get<double>();
  }
  if (labels) {
    block.labels.resize(block.voxels());
    r.get_bytes(block.labels.data(), block.labels.size());
    validate_labels(block.labels);
  }
  return block;
}

inline void write_volume(const std::string& path, const VolumeBlock& block) {
  detail::write_file_bytes(path, encode_volume(block));
}

inline VolumeBlock read_volume(const std::string& path) { return decode_volume(detail::read_file_bytes(path), path); }

/// Label-only volume (channels = 0).
inline VolumeBlock label_volume(const Extents& extents, std::vector<std::uint8_t> labels) {
  VolumeBlock block;
  block.extents = extents;
  block.labels = std::move(labels);
  return block;
}

}  // namespace brainformer
