#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "brainformer/ops.hpp"
#include "brainformer/volume.hpp"

namespace brainformer {

/// Token grid (H/p, W/p, D/p) of a block partitioned into cubic patches.
inline Extents patch_grid(const Extents& extents, std::size_t patch) {
  if (patch == 0) throw ConfigError("patch size must be positive");
  Extents grid{};
  for (int a = 0; a < 3; ++a) {
    if (extents[a] % patch != 0) {
      throw ConfigError("extent " + std::to_string(extents[a]) + " not divisible by patch size " +
                        std::to_string(patch));
    }
    grid[a] = extents[a] / patch;
  }
  return grid;
}

template <Scalar T>
struct TokenSequence {
  Tensor<T> tokens;  // N×k
  std::size_t patch_size = 1;
  Extents grid{};

  std::size_t count() const { return extents_volume(grid); }
};

/// F_X projection and the learned 1D positional embeddings.
template <Scalar T>
struct EmbeddingParams {
  Tensor<T> projection;  // (C·p³)×k
  Tensor<T> positions;   // N×k
};

/// Splits a C×H×W×D block into N non-overlapping p³ patches, ordered
/// lexicographically by grid (h, w, d). Each row is one patch flattened as
/// (channel, ph, pw, pd).
template <Scalar T>
Tensor<T> partition(const Tensor<T>& block, std::size_t patch) {
  if (block.rank() != 4) throw DimensionError("partition: expected C×H×W×D, got " + shape_string(block.shape()));
  const std::size_t c = block.extent(0);
  const Extents g = patch_grid({block.extent(1), block.extent(2), block.extent(3)}, patch);
  const auto split = reshape(block, {c, g[0], patch, g[1], patch, g[2], patch});
  const auto ordered = permute(split, {1, 3, 5, 0, 2, 4, 6});
  return reshape(ordered, {g[0] * g[1] * g[2], c * patch * patch * patch});
}

inline Tensor<double> partition(const VolumeBlock& block, std::size_t patch) {
  return partition(intensities_tensor<double>(block), patch);
}

/// Exact inverse of partition.
template <Scalar T>
Tensor<T> departition(const Tensor<T>& patches, const Extents& grid, std::size_t patch, std::size_t channels) {
  const std::size_t n = extents_volume(grid);
  if (patches.rank() != 2 || patches.extent(0) != n || patches.extent(1) != channels * patch * patch * patch) {
    throw DimensionError("departition: " + shape_string(patches.shape()) + " does not hold " + std::to_string(n) +
                         " patches of " + std::to_string(channels) + "x" + std::to_string(patch) + "^3");
  }
  const auto split = reshape(patches, {grid[0], grid[1], grid[2], channels, patch, patch, patch});
  const auto ordered = permute(split, {3, 0, 4, 1, 5, 2, 6});
  return reshape(ordered, {channels, grid[0] * patch, grid[1] * patch, grid[2] * patch});
}

/// S_0 = patches·F_X + positions.
template <Scalar T>
TokenSequence<T> embed(const Tensor<T>& patches, const EmbeddingParams<T>& params, std::size_t patch,
                       const Extents& grid) {
  if (patches.rank() != 2 || patches.extent(1) != params.projection.extent(0)) {
    throw DimensionError("embed: patch length " + shape_string(patches.shape()) + " vs projection " +
                         shape_string(params.projection.shape()));
  }
  if (patches.extent(0) != extents_volume(grid) || params.positions.extent(0) != patches.extent(0)) {
    throw DimensionError("embed: token count does not match the grid");
  }
  return TokenSequence<T>{add(matmul(patches, params.projection), params.positions), patch, grid};
}

/// Token row i goes to its grid coordinate; the embedding axis becomes channels.
template <Scalar T>
Tensor<T> tokens_to_block(const TokenSequence<T>& seq) {
  const auto& g = seq.grid;
  if (seq.tokens.rank() != 2 || seq.tokens.extent(0) != extents_volume(g)) {
    throw DimensionError("tokens_to_block: " + shape_string(seq.tokens.shape()) + " vs grid " + extents_string(g));
  }
  const std::size_t k = seq.tokens.extent(1);
  return reshape(transpose(seq.tokens), {k, g[0], g[1], g[2]});
}

/// Inverse of tokens_to_block.
template <Scalar T>
TokenSequence<T> block_to_tokens(const Tensor<T>& block, std::size_t patch) {
  if (block.rank() != 4) throw DimensionError("block_to_tokens: expected k×h×w×d");
  const Extents g{block.extent(1), block.extent(2), block.extent(3)};
  const std::size_t k = block.extent(0);
  return TokenSequence<T>{transpose(reshape(block, {k, extents_volume(g)})), patch, g};
}

}  // namespace brainformer
