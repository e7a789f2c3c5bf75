#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "brainformer/ops.hpp"
#include "brainformer/volume.hpp"

namespace brainformer {

inline constexpr double kDiceEpsilon = 1e-5;

/// One-hot encoding of labels as a [classes × V] tensor.
template <Scalar T>
Tensor<T> one_hot(std::span<const std::uint8_t> labels, std::size_t classes = kNumClasses) {
  std::vector<T> data(classes * labels.size(), T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at voxel " + std::to_string(i) + " out of range");
    }
    data[labels[i] * labels.size() + i] = T(1);
  }
  return Tensor<T>({classes, labels.size()}, std::move(data));
}

/// 1 − mean over foreground classes c ∈ {1,2,3} of (2Σp_c·g_c + ε)/(Σp_c + Σg_c + ε),
/// with p the class-axis softmax of the logits.
template <Scalar T>
Tensor<T> softmax_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  if (logits.rank() != 4 || logits.extent(0) != kNumClasses) {
    throw DimensionError("dice loss: logits must be 4×H×W×D, got " + shape_string(logits.shape()));
  }
  const std::size_t voxels = logits.numel() / kNumClasses;
  if (labels.size() != voxels) {
    throw DimensionError("dice loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(voxels) +
                         " voxels");
  }
  const auto p = softmax(reshape(logits, {kNumClasses, voxels}), 0);
  const auto g = one_hot<T>(labels);
  const T eps = static_cast<T>(kDiceEpsilon);
  const auto numer = affine(sum_last(mul(p, g)), T(2), eps);
  const auto denom = affine(add(sum_last(p), sum_last(g)), T(1), eps);
  const auto per_class = div(numer, denom);
  return affine(mean(slice(per_class, 0, 1, kNumClasses)), T(-1), T(1));
}

}  // namespace brainformer
