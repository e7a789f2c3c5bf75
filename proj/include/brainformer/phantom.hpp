#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "brainformer/volume.hpp"

namespace brainformer {

inline constexpr std::size_t kPhantomModalities = 4;  // T1, T1ce, T2, FLAIR

struct RadiusRange {
  double lo = 1.0, hi = 1.0;
};

/// Mean intensity per class (rows: background, NCR/NET, ED, ET) and modality.
using ContrastProfile = std::array<std::array<double, kPhantomModalities>, kNumClasses>;

inline ContrastProfile default_contrast() {
  return {{{1.0, 1.0, 1.0, 1.0},
           {0.6, 0.7, 1.6, 1.1},
           {0.8, 1.0, 1.8, 2.0},
           {0.9, 2.2, 1.4, 1.5}}};
}

/// Parameters of a synthetic tumor volume: nested ellipsoids (core inside an
/// enhancing shell inside an edema halo) over a noisy background.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Extents extents{32, 32, 32};
  std::size_t tumors = 1;
  RadiusRange core{2.0, 3.0};   // NCR/NET, class 1
  RadiusRange shell{3.5, 4.5};  // ET, class 3
  RadiusRange halo{5.5, 7.5};   // ED, class 2
  ContrastProfile contrast = default_contrast();
  double noise = 0.1;
  bool centered = false;  // place every tumor at the volume center

  void validate() const {
    for (const auto e : extents) {
      if (e < 16) throw ConfigError("phantom extents must be at least 16, got " + extents_string(extents));
    }
    for (const auto* r : {&core, &shell, &halo}) {
      if (!(r->lo > 0.0) || r->hi < r->lo) throw ConfigError("phantom radius range must satisfy 0 < lo <= hi");
    }
    if (!(core.hi < shell.lo) || !(shell.hi < halo.lo)) {
      throw ConfigError("phantom radii must be strictly nested: core < shell < halo");
    }
    const auto min_extent = double(*std::min_element(extents.begin(), extents.end()));
    if (2.0 * halo.hi + 1.0 > min_extent) {
      throw ConfigError("phantom halo radius " + std::to_string(halo.hi) + " does not fit extents " +
                        extents_string(extents));
    }
    if (!(noise >= 0.0)) throw ConfigError("phantom noise must be non-negative");
  }
};

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};

  bool contains(std::size_t x, std::size_t y, std::size_t z) const {
    const std::array<double, 3> p{double(x), double(y), double(z)};
    double s = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = (p[a] - center[a]) / radii[a];
      s += d * d;
    }
    return s <= 1.0;
  }
};

struct TumorGeometry {
  Ellipsoid core, shell, halo;
};

struct Phantom {
  VolumeBlock volume;
  std::vector<TumorGeometry> tumors;
};

/// Label precedence when regions overlap: core > enhancing > edema > background.
inline int label_priority(std::uint8_t label) {
  static constexpr std::array<int, kNumClasses> rank{0, 3, 1, 2};
  return rank[label];
}

inline std::uint8_t tumor_label_at(const TumorGeometry& t, std::size_t x, std::size_t y, std::size_t z) {
  if (t.core.contains(x, y, z)) return 1;
  if (t.shell.contains(x, y, z)) return 3;
  if (t.halo.contains(x, y, z)) return 2;
  return 0;
}

/// Deterministic in `spec`: identical specs give bit-identical volumes.
inline Phantom generate_phantom_with_geometry(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Phantom out;
  for (std::size_t t = 0; t < spec.tumors; ++t) {
    TumorGeometry g;
    for (int a = 0; a < 3; ++a) {
      g.core.radii[a] = uniform(spec.core.lo, spec.core.hi);
      g.shell.radii[a] = uniform(spec.shell.lo, spec.shell.hi);
      g.halo.radii[a] = uniform(spec.halo.lo, spec.halo.hi);
    }
    for (int a = 0; a < 3; ++a) {
      const double last = double(spec.extents[a] - 1);
      const double c = spec.centered ? last / 2.0 : uniform(g.halo.radii[a], last - g.halo.radii[a]);
      g.core.center[a] = g.shell.center[a] = g.halo.center[a] = c;
    }
    out.tumors.push_back(g);
  }

  auto& v = out.volume;
  v.channels = kPhantomModalities;
  v.extents = spec.extents;
  v.labels.assign(extents_volume(spec.extents), 0);
  const auto [h, w, d] = spec.extents;
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t z = 0; z < d; ++z) {
        auto& label = v.labels[(x * w + y) * d + z];
        for (const auto& t : out.tumors) {
          const auto l = tumor_label_at(t, x, y, z);
          if (label_priority(l) > label_priority(label)) label = l;
        }
      }

  std::normal_distribution<double> noise(0.0, spec.noise);
  v.intensities.resize(kPhantomModalities * v.voxels());
  for (std::size_t m = 0; m < kPhantomModalities; ++m)
    for (std::size_t i = 0; i < v.voxels(); ++i) {
      const double eps = spec.noise > 0.0 ? noise(rng) : 0.0;
      v.intensities[m * v.voxels() + i] = spec.contrast[v.labels[i]][m] + eps;
    }
  return out;
}

inline VolumeBlock generate_phantom(const PhantomSpec& spec) { return generate_phantom_with_geometry(spec).volume; }

/// Number of blocks tiling the volume, Π ceil(m_a / B_a); equals m_h·m_w·m_d / (H·W·D) when divisible.
inline std::size_t block_count(const Extents& volume, const Extents& block) {
  std::size_t g = 1;
  for (int a = 0; a < 3; ++a) {
    if (block[a] == 0) throw ConfigError("block extents must be positive");
    g *= (volume[a] + block[a] - 1) / block[a];
  }
  return g;
}

/// Copies the sub-block at `offset`.
inline VolumeBlock extract_block(const VolumeBlock& v, const Extents& offset, const Extents& block) {
  for (int a = 0; a < 3; ++a) {
    if (offset[a] + block[a] > v.extents[a]) {
      throw ConfigError("block " + extents_string(block) + " at offset " + extents_string(offset) +
                        " exceeds volume " + extents_string(v.extents));
    }
  }
  VolumeBlock out;
  out.channels = v.channels;
  out.extents = block;
  out.dtype = v.dtype;
  out.intensities.resize(v.channels * extents_volume(block));
  if (v.has_labels()) out.labels.resize(extents_volume(block));
  const auto [bh, bw, bd] = block;
  const auto [vh, vw, vd] = v.extents;
  for (std::size_t x = 0; x < bh; ++x)
    for (std::size_t y = 0; y < bw; ++y) {
      const std::size_t src = ((offset[0] + x) * vw + offset[1] + y) * vd + offset[2];
      const std::size_t dst = (x * bw + y) * bd;
      for (std::size_t c = 0; c < v.channels; ++c) {
        std::copy_n(v.intensities.begin() + c * vh * vw * vd + src, bd,
                    out.intensities.begin() + c * bh * bw * bd + dst);
      }
      if (v.has_labels()) std::copy_n(v.labels.begin() + src, bd, out.labels.begin() + dst);
    }
  return out;
}

/// Random axis-aligned crop. With probability `foreground_prob` (when the
/// volume has tumor voxels) the crop is placed to contain a uniformly chosen
/// tumor voxel; otherwise the offset is uniform.
inline VolumeBlock crop_block(const VolumeBlock& v, const Extents& block, std::uint64_t seed,
                              double foreground_prob = 0.6) {
  for (int a = 0; a < 3; ++a) {
    if (block[a] == 0 || block[a] > v.extents[a]) {
      throw ConfigError("crop " + extents_string(block) + " does not fit volume " + extents_string(v.extents));
    }
  }
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  std::vector<std::size_t> tumor;
  if (v.has_labels()) {
    for (std::size_t i = 0; i < v.labels.size(); ++i)
      if (v.labels[i] != 0) tumor.push_back(i);
  }
  Extents offset{};
  const bool biased = !tumor.empty() && std::bernoulli_distribution(foreground_prob)(rng);
  if (biased) {
    const std::size_t i = tumor[pick(0, tumor.size() - 1)];
    const Extents p{i / (v.extents[1] * v.extents[2]), (i / v.extents[2]) % v.extents[1], i % v.extents[2]};
    for (int a = 0; a < 3; ++a) {
      const std::size_t lo = p[a] + 1 >= block[a] ? p[a] + 1 - block[a] : 0;
      const std::size_t hi = std::min(p[a], v.extents[a] - block[a]);
      offset[a] = pick(lo, hi);
    }
  } else {
    for (int a = 0; a < 3; ++a) offset[a] = pick(0, v.extents[a] - block[a]);
  }
  return extract_block(v, offset, block);
}

/// Per channel: (x − mean)/max(std, 1e-6) over the nonzero voxels; zeros stay zero.
inline VolumeBlock normalize(VolumeBlock v) {
  const std::size_t n = v.voxels();
  for (std::size_t c = 0; c < v.channels; ++c) {
    double* data = v.intensities.data() + c * n;
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (data[i] != 0.0) {
        sum += data[i];
        ++count;
      }
    }
    if (count == 0) continue;
    const double mean = sum / double(count);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (data[i] != 0.0) var += (data[i] - mean) * (data[i] - mean);
    }
    const double stddev = std::max(std::sqrt(var / double(count)), 1e-6);
    for (std::size_t i = 0; i < n; ++i) {
      if (data[i] != 0.0) data[i] = (data[i] - mean) / stddev;
    }
  }
  return v;
}

}  // namespace brainformer
