#pragma once

// Straightforward loop implementations used as references by the acceptance
// checks. They share nothing with the library beyond reading parameter values.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "brainformer/fhsa.hpp"
#include "brainformer/volume.hpp"

namespace brainformer::oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor<double>& t) {
  Matrix m(t.extent(0), std::vector<double>(t.extent(1)));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t.data()[i * m[i].size() + j];
  return m;
}

inline Matrix mat_mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline Matrix layer_norm(const Matrix& x, const std::vector<double>& g, const std::vector<double>& b) {
  Matrix y = x;
  for (auto& row : y) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= double(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= double(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return y;
}

/// Standard multi-head self-attention: per-head scaled dot product, softmax, concat, output projection.
inline Matrix mhsa(const Matrix& s, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo,
                   std::size_t heads) {
  const auto q = mat_mul(s, wq), k = mat_mul(s, wk), v = mat_mul(s, wv);
  const std::size_t n = s.size(), width = q[0].size(), kh = width / heads;
  Matrix concat(n, std::vector<double>(width, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> e(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < kh; ++c) acc += q[i][h * kh + c] * k[j][h * kh + c];
        e[j] = acc / std::sqrt(double(kh));
        mx = std::max(mx, e[j]);
      }
      double z = 0;
      for (auto& x : e) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < kh; ++c) concat[i][h * kh + c] += e[j] / z * v[j][h * kh + c];
    }
  }
  return mat_mul(concat, wo);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Pre-norm transformer layer: x + MHSA(LN(x)), then + MLP(LN(·)) with GELU.
inline Matrix transformer_layer(const Matrix& s, const FusionLayerParams<double>& p) {
  const auto& a = p.attention;
  const auto attn = mhsa(layer_norm(s, vec(p.ln1.gamma), vec(p.ln1.beta)), to_matrix(a.w_q), to_matrix(a.w_k),
                         to_matrix(a.w_v), to_matrix(a.w_out), a.heads);
  Matrix mid = s;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[0].size(); ++j) mid[i][j] += attn[i][j];
  auto hidden = mat_mul(layer_norm(mid, vec(p.ln2.gamma), vec(p.ln2.beta)), to_matrix(p.mlp.w1));
  const auto b1 = vec(p.mlp.b1), b2 = vec(p.mlp.b2);
  for (auto& row : hidden)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu(row[j] + b1[j]);
  const auto out = mat_mul(hidden, to_matrix(p.mlp.w2));
  Matrix y = mid;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += out[i][j] + b2[j];
  return y;
}

/// Dense self-attention over the λ voxels of a C×h×w×d block with identity
/// projections: E[i][j] = Σ_c x[c,i]·x[c,j], softmax over j, out[c,i] = Σ_j A[i][j]·x[c,j].
inline std::vector<double> dense_voxel_attention(const Tensor<double>& x) {
  const std::size_t c = x.extent(0), lambda = x.numel() / c;
  const auto d = x.data();
  std::vector<double> out(c * lambda, 0.0);
  for (std::size_t i = 0; i < lambda; ++i) {
    std::vector<double> a(lambda);
    double z = 0;
    for (std::size_t j = 0; j < lambda; ++j) {
      double e = 0;
      for (std::size_t ch = 0; ch < c; ++ch) e += d[ch * lambda + i] * d[ch * lambda + j];
      z += a[j] = std::exp(e);
    }
    for (std::size_t j = 0; j < lambda; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * lambda + i] += a[j] / z * d[ch * lambda + j];
  }
  return out;
}

using Voxel = std::array<long, 3>;
using VoxelSet = std::set<Voxel>;

inline VoxelSet voxel_set(const std::vector<std::uint8_t>& mask, const Extents& e) {
  VoxelSet s;
  for (std::size_t x = 0; x < e[0]; ++x)
    for (std::size_t y = 0; y < e[1]; ++y)
      for (std::size_t z = 0; z < e[2]; ++z)
        if (mask[(x * e[1] + y) * e[2] + z]) s.insert({long(x), long(y), long(z)});
  return s;
}

inline std::size_t intersection_size(const VoxelSet& a, const VoxelSet& b) {
  std::vector<Voxel> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return both.size();
}

struct SetMetrics {
  double dice, sensitivity, ppv;
};

inline SetMetrics set_metrics(const VoxelSet& p, const VoxelSet& g) {
  const std::size_t i = intersection_size(p, g);
  SetMetrics m;
  m.dice = p.empty() && g.empty() ? 1.0 : 2.0 * double(i) / double(p.size() + g.size());
  m.sensitivity = g.empty() ? (p.empty() ? 1.0 : 0.0) : double(i) / double(g.size());
  m.ppv = p.empty() ? (g.empty() ? 1.0 : 0.0) : double(i) / double(p.size());
  return m;
}

/// Members with a face neighbour that is outside the set or outside the grid.
inline std::vector<Voxel> boundary(const VoxelSet& s, const Extents& e) {
  std::vector<Voxel> out;
  const long lim[3] = {long(e[0]), long(e[1]), long(e[2])};
  for (const auto& v : s) {
    bool edge = false;
    for (int a = 0; a < 3 && !edge; ++a)
      for (const long step : {-1L, 1L}) {
        Voxel n = v;
        n[a] += step;
        if (n[a] < 0 || n[a] >= lim[a] || !s.count(n)) {
          edge = true;
          break;
        }
      }
    if (edge) out.push_back(v);
  }
  return out;
}

/// All-pairs symmetric 95th-percentile (nearest rank) surface distance.
inline std::optional<double> hd95(const VoxelSet& p, const VoxelSet& g, const Extents& e) {
  const auto bp = boundary(p, e), bg = boundary(g, e);
  if (bp.empty() || bg.empty()) return std::nullopt;
  auto directed = [](const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
    std::vector<double> d;
    for (const auto& a : from) {
      long best = -1;
      for (const auto& b : to) {
        const long dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        const long sq = dx * dx + dy * dy + dz * dz;
        if (best < 0 || sq < best) best = sq;
      }
      d.push_back(std::sqrt(double(best)));
    }
    std::sort(d.begin(), d.end());
    return d[static_cast<std::size_t>(std::ceil(0.95 * double(d.size()))) - 1];
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

}  // namespace brainformer::oracle
