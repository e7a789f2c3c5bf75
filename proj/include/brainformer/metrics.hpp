#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "brainformer/volume.hpp"

namespace brainformer {

/// Binary volume; voxels are 0 or 1 in row-major H×W×D order.
struct Mask {
  Extents extents{};
  std::vector<std::uint8_t> voxels;

  std::size_t count() const { return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), 1)); }
  bool empty() const { return count() == 0; }
};

enum class Region { wt, tc, et };
inline constexpr std::array<Region, 3> kRegions{Region::wt, Region::tc, Region::et};

inline std::string to_string(Region r) {
  switch (r) {
    case Region::wt: return "WT";
    case Region::tc: return "TC";
    case Region::et: return "ET";
  }
  return "?";
}

inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
    case Region::wt: return label >= 1 && label <= 3;
    case Region::tc: return label == 1 || label == 3;
    case Region::et: return label == 3;
  }
  return false;
}

inline Mask region_mask(std::span<const std::uint8_t> labels, const Extents& extents, Region r) {
  if (labels.size() != extents_volume(extents)) throw DimensionError("region mask: label count does not match extents");
  validate_labels(labels);
  Mask m{extents, std::vector<std::uint8_t>(labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) m.voxels[i] = in_region(labels[i], r) ? 1 : 0;
  return m;
}

/// WT, TC and ET masks, in that order.
inline std::array<Mask, 3> region_masks(std::span<const std::uint8_t> labels, const Extents& extents) {
  return {region_mask(labels, extents, Region::wt), region_mask(labels, extents, Region::tc),
          region_mask(labels, extents, Region::et)};
}

namespace detail {

struct Overlap {
  std::size_t pred = 0, truth = 0, both = 0;
};

inline Overlap overlap(const Mask& pred, const Mask& truth) {
  if (pred.extents != truth.extents) {
    throw DimensionError("mask extents " + extents_string(pred.extents) + " vs " + extents_string(truth.extents));
  }
  Overlap o;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    o.pred += pred.voxels[i];
    o.truth += truth.voxels[i];
    o.both += pred.voxels[i] & truth.voxels[i];
  }
  return o;
}

/// num/den with both-empty → 1 and one-empty → 0.
inline double ratio(std::size_t num, std::size_t den, bool other_empty) {
  if (den == 0) return other_empty ? 1.0 : 0.0;
  return double(num) / double(den);
}

}  // namespace detail

inline double dice(const Mask& pred, const Mask& truth) {
  const auto o = detail::overlap(pred, truth);
  if (o.pred + o.truth == 0) return 1.0;
  return 2.0 * double(o.both) / double(o.pred + o.truth);
}

inline double sensitivity(const Mask& pred, const Mask& truth) {
  const auto o = detail::overlap(pred, truth);
  return detail::ratio(o.both, o.truth, o.pred == 0);
}

inline double ppv(const Mask& pred, const Mask& truth) {
  const auto o = detail::overlap(pred, truth);
  return detail::ratio(o.both, o.pred, o.truth == 0);
}

/// Voxels of the mask with a 6-neighbour outside the mask or outside the volume.
inline std::vector<std::size_t> surface_voxels(const Mask& m) {
  const auto [h, w, d] = m.extents;
  std::vector<std::size_t> out;
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t z = 0; z < d; ++z) {
        const std::size_t i = (x * w + y) * d + z;
        if (!m.voxels[i]) continue;
        const bool border = x == 0 || y == 0 || z == 0 || x + 1 == h || y + 1 == w || z + 1 == d;
        if (border || !m.voxels[i - w * d] || !m.voxels[i + w * d] || !m.voxels[i - d] || !m.voxels[i + d] ||
            !m.voxels[i - 1] || !m.voxels[i + 1]) {
          out.push_back(i);
        }
      }
  return out;
}

namespace detail {

/// Exact 1D squared distance transform (lower envelope of parabolas), in place
/// over `n` values spaced by `stride` starting at `f`.
inline void edt_1d(double* f, std::size_t n, std::size_t stride, std::vector<double>& tmp, std::vector<int>& v,
                   std::vector<double>& z) {
  const double inf = std::numeric_limits<double>::infinity();
  tmp.resize(n);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f[i * stride];
  int k = -1;
  for (int q = 0; q < int(n); ++q) {
    if (tmp[q] == inf) continue;
    double s = 0;
    while (k >= 0) {
      const int p = v[k];
      s = ((tmp[q] + double(q) * q) - (tmp[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -inf : s;
    z[k + 1] = inf;
  }
  if (k < 0) return;  // no sites on this line
  int j = 0;
  for (int q = 0; q < int(n); ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = double(q - v[j]);
    f[q * stride] = dq * dq + tmp[v[j]];
  }
}

}  // namespace detail

/// Squared Euclidean distance from every voxel to the nearest listed site.
inline std::vector<double> squared_distance_to(const std::vector<std::size_t>& sites, const Extents& e) {
  std::vector<double> f(extents_volume(e), std::numeric_limits<double>::infinity());
  for (const auto s : sites) f[s] = 0.0;
  std::vector<double> tmp, z;
  std::vector<int> v;
  const std::size_t h = e[0], w = e[1], d = e[2];
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y) detail::edt_1d(&f[(x * w + y) * d], d, 1, tmp, v, z);
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t z0 = 0; z0 < d; ++z0) detail::edt_1d(&f[x * w * d + z0], w, d, tmp, v, z);
  for (std::size_t y = 0; y < w; ++y)
    for (std::size_t z0 = 0; z0 < d; ++z0) detail::edt_1d(&f[y * d + z0], h, w * d, tmp, v, z);
  return f;
}

/// Nearest-rank percentile: the value at sorted index ceil(q·n) − 1.
inline double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UsageError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * double(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

/// Symmetric 95th-percentile surface distance in voxels; nullopt when either mask is empty.
inline std::optional<double> hd95(const Mask& pred, const Mask& truth) {
  if (pred.extents != truth.extents) throw DimensionError("hd95: mask extents differ");
  const auto sp = surface_voxels(pred), st = surface_voxels(truth);
  if (sp.empty() || st.empty()) return std::nullopt;
  auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
    const auto dt = squared_distance_to(to, pred.extents);
    std::vector<double> dist;
    dist.reserve(from.size());
    for (const auto i : from) dist.push_back(std::sqrt(dt[i]));
    return nearest_rank_percentile(std::move(dist), 0.95);
  };
  return std::max(directed(sp, st), directed(st, sp));
}

struct RegionMetrics {
  double dice = 0, sensitivity = 0, ppv = 0;
  std::optional<double> hd95;
};

/// Metrics for WT, TC and ET (in that order).
struct MetricReport {
  std::array<RegionMetrics, 3> regions{};

  const RegionMetrics& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }
  RegionMetrics& operator[](Region r) { return regions[static_cast<std::size_t>(r)]; }
};

inline MetricReport evaluate_labels(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                    const Extents& extents) {
  const auto pm = region_masks(pred, extents);
  const auto tm = region_masks(truth, extents);
  MetricReport report;
  for (std::size_t r = 0; r < 3; ++r) {
    report.regions[r] = {dice(pm[r], tm[r]), sensitivity(pm[r], tm[r]), ppv(pm[r], tm[r]), hd95(pm[r], tm[r])};
  }
  return report;
}

/// Mean over subjects; hd95 averages only the subjects where it is defined.
inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport out;
  if (reports.empty()) return out;
  for (std::size_t r = 0; r < 3; ++r) {
    double hd_sum = 0;
    std::size_t hd_n = 0;
    for (const auto& rep : reports) {
      out.regions[r].dice += rep.regions[r].dice;
      out.regions[r].sensitivity += rep.regions[r].sensitivity;
      out.regions[r].ppv += rep.regions[r].ppv;
      if (rep.regions[r].hd95) {
        hd_sum += *rep.regions[r].hd95;
        ++hd_n;
      }
    }
    const double n = double(reports.size());
    out.regions[r].dice /= n;
    out.regions[r].sensitivity /= n;
    out.regions[r].ppv /= n;
    if (hd_n > 0) out.regions[r].hd95 = hd_sum / double(hd_n);
  }
  return out;
}

/// Fixed-width table, one row per region; an undefined hd95 prints as "n/a".
inline std::string to_text(const MetricReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "region" << std::setw(10) << "dice" << std::setw(13) << "sensitivity"
      << std::setw(10) << "ppv" << "hd95\n";
  out << std::fixed << std::setprecision(4);
  for (const auto r : kRegions) {
    const auto& m = report[r];
    out << std::setw(8) << to_string(r) << std::setw(10) << m.dice << std::setw(13) << m.sensitivity << std::setw(10)
        << m.ppv;
    if (m.hd95) {
      out << *m.hd95;
    } else {
      out << "n/a";
    }
    out << '\n';
  }
  return out.str();
}

/// Flat object keyed "region.metric" (e.g. "WT.dice"); an undefined hd95 is null.
inline nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto r : kRegions) {
    const auto& m = report[r];
    const std::string k = to_string(r);
    j[k + ".dice"] = m.dice;
    j[k + ".sensitivity"] = m.sensitivity;
    j[k + ".ppv"] = m.ppv;
    j[k + ".hd95"] = m.hd95 ? nlohmann::json(*m.hd95) : nlohmann::json(nullptr);
  }
  return j;
}

}  // namespace brainformer
