#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "brainformer/errors.hpp"
#include "brainformer/tensor.hpp"

namespace brainformer {

using Extents = std::array<std::size_t, 3>;

inline std::size_t extents_volume(const Extents& e) { return e[0] * e[1] * e[2]; }

inline std::string extents_string(const Extents& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

/// On-disk element type of intensities.
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

/// Number of segmentation classes after remapping {0,1,2,4} -> {0,1,2,3}.
inline constexpr std::size_t kNumClasses = 4;

/// C×H×W×D multimodal intensities with an optional H×W×D label volume.
struct VolumeBlock {
  std::size_t channels = 0;
  Extents extents{};
  std::vector<double> intensities;   // row-major C×H×W×D
  std::vector<std::uint8_t> labels;  // empty, or row-major H×W×D with values in {0,1,2,3}
  DType dtype = DType::f64;

  std::size_t voxels() const { return extents_volume(extents); }
  bool has_labels() const { return !labels.empty(); }

  double& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return intensities[((c * extents[0] + x) * extents[1] + y) * extents[2] + z];
  }
  double at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return intensities[((c * extents[0] + x) * extents[1] + y) * extents[2] + z];
  }
};

inline void validate_labels(std::span<const std::uint8_t> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) {
      throw DataError("label value " + std::to_string(labels[i]) + " at voxel " + std::to_string(i) +
                      " outside {0,1,2,3}");
    }
  }
}

/// Maps raw challenge labels {0,1,2,4} to the contiguous class ids {0,1,2,3}.
inline std::uint8_t remap_raw_label(int raw) {
  switch (raw) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
    default: throw DataError("raw label " + std::to_string(raw) + " not in {0,1,2,4}");
  }
}

template <Scalar T>
Tensor<T> intensities_tensor(const VolumeBlock& block) {
  std::vector<T> data(block.intensities.begin(), block.intensities.end());
  return Tensor<T>({block.channels, block.extents[0], block.extents[1], block.extents[2]}, std::move(data));
}

}  // namespace brainformer
