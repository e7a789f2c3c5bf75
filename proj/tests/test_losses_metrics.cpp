#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "brainformer/gradcheck.hpp"
#include "brainformer/losses.hpp"
#include "brainformer/metrics.hpp"
#include "test_util.hpp"

namespace bf = brainformer;
using bf::testing::random_tensor;

namespace {

std::vector<std::uint8_t> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, 3);
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = static_cast<std::uint8_t>(dist(rng));
  return out;
}

bf::Mask random_mask(const bf::Extents& e, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(density);
  bf::Mask m{e, std::vector<std::uint8_t>(bf::extents_volume(e))};
  for (auto& v : m.voxels) v = coin(rng) ? 1 : 0;
  return m;
}

bf::Mask box(const bf::Extents& e, bf::Extents lo, bf::Extents hi) {
  bf::Mask m{e, std::vector<std::uint8_t>(bf::extents_volume(e))};
  for (std::size_t x = lo[0]; x < hi[0]; ++x)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t z = lo[2]; z < hi[2]; ++z) m.voxels[(x * e[1] + y) * e[2] + z] = 1;
  return m;
}

/// All-pairs directed surface distances, nearest-rank 95th percentile, symmetric max.
std::optional<double> hd95_oracle(const bf::Mask& a, const bf::Mask& b) {
  const auto sa = bf::surface_voxels(a), sb = bf::surface_voxels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;
  const auto e = a.extents;
  auto coord = [&](std::size_t i) {
    return std::array<double, 3>{double(i / (e[1] * e[2])), double((i / e[2]) % e[1]), double(i % e[2])};
  };
  auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
    std::vector<double> d;
    for (auto i : from) {
      const auto p = coord(i);
      double best = 1e300;
      for (auto j : to) {
        const auto q = coord(j);
        best = std::min(best, std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                        (p[2] - q[2]) * (p[2] - q[2])));
      }
      d.push_back(best);
    }
    std::sort(d.begin(), d.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * double(d.size())));
    return d[rank - 1];
  };
  return std::max(directed(sa, sb), directed(sb, sa));
}

}  // namespace

TEST(RegionMasks, AllBackground) {
  const std::vector<std::uint8_t> labels(27, 0);
  for (const auto& m : bf::region_masks(labels, {3, 3, 3})) EXPECT_TRUE(m.empty());
}

TEST(RegionMasks, SingleEnhancingVoxelInAll) {
  std::vector<std::uint8_t> labels(27, 0);
  labels[13] = 3;
  for (const auto& m : bf::region_masks(labels, {3, 3, 3})) {
    EXPECT_EQ(m.count(), 1u);
    EXPECT_EQ(m.voxels[13], 1);
  }
}

TEST(RegionMasks, NestingAndHistogram) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto labels = random_labels(125, rng);
    std::array<std::size_t, 4> hist{};
    for (auto l : labels) ++hist[l];
    const auto m = bf::region_masks(labels, {5, 5, 5});
    EXPECT_EQ(m[0].count(), hist[1] + hist[2] + hist[3]);
    EXPECT_EQ(m[1].count(), hist[1] + hist[3]);
    EXPECT_EQ(m[2].count(), hist[3]);
    for (std::size_t i = 0; i < 125; ++i) {
      EXPECT_LE(m[2].voxels[i], m[1].voxels[i]);
      EXPECT_LE(m[1].voxels[i], m[0].voxels[i]);
    }
  }
}

TEST(RegionMasks, IllegalLabelIsDataError) {
  std::vector<std::uint8_t> labels(8, 0);
  labels[2] = 4;
  EXPECT_THROW(bf::region_masks(labels, {2, 2, 2}), bf::DataError);
}

TEST(DiceLoss, PeakedLogitsNearZero) {
  std::mt19937_64 rng(2);
  const auto labels = random_labels(64, rng);
  bf::Tensor<double> logits({4, 4, 4, 4}, -20.0);
  for (std::size_t i = 0; i < 64; ++i) logits.mutable_data()[labels[i] * 64 + i] = 20.0;
  EXPECT_LT(bf::softmax_dice_loss(logits, labels).item(), 0.01);
}

TEST(DiceLoss, UniformLogitsHandCalculation) {
  // Half foreground: 4 voxels each of classes 1, 2 and 3 plus 12 background in a 24-voxel block.
  std::vector<std::uint8_t> labels(24, 0);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<std::uint8_t>(1 + i % 3);
  const bf::Tensor<double> logits({4, 2, 3, 4}, 0.0);
  // p = 1/4 everywhere: Σp·g = 4·0.25 = 1, Σp = 6, Σg = 4 per foreground class.
  const double per_class = (2.0 * 1.0 + 1e-5) / (6.0 + 4.0 + 1e-5);
  EXPECT_NEAR(bf::softmax_dice_loss(logits, labels).item(), 1.0 - per_class, 1e-14);
}

TEST(DiceLoss, Gradcheck) {
  std::mt19937_64 rng(3);
  const auto labels = random_labels(8, rng);
  const auto logits = random_tensor({4, 2, 2, 2}, rng, -2, 2);
  const double err = bf::finite_diff_check<double>(
      [&](const bf::Tensor<double>& x) { return bf::softmax_dice_loss(x, labels); }, logits, 1e-6);
  EXPECT_LT(err, 1e-5);
}

TEST(DiceLoss, MonotoneTowardTarget) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto labels = random_labels(27, rng);
    const auto start = random_tensor({4, 3, 3, 3}, rng, -2, 2);
    bf::Tensor<double> target({4, 3, 3, 3}, 0.0);
    for (std::size_t i = 0; i < 27; ++i) target.mutable_data()[labels[i] * 27 + i] = 10.0;
    double previous = 2.0;
    for (double t = 0.0; t <= 1.0; t += 0.1) {
      const auto x = bf::add(bf::scale(start, 1.0 - t), bf::scale(target, t));
      const double loss = bf::softmax_dice_loss(x, labels).item();
      EXPECT_LT(loss, previous) << "t=" << t;
      previous = loss;
    }
  }
}

TEST(DiceLoss, ShapeErrors) {
  const std::vector<std::uint8_t> labels(8, 0);
  EXPECT_THROW(bf::softmax_dice_loss(bf::Tensor<double>({3, 2, 2, 2}), labels), bf::DimensionError);
  EXPECT_THROW(bf::softmax_dice_loss(bf::Tensor<double>({4, 2, 2, 3}), labels), bf::DimensionError);
}

TEST(Overlap, DiceCases) {
  const bf::Extents e{4, 4, 4};
  const auto a = box(e, {0, 0, 0}, {2, 2, 2});
  EXPECT_DOUBLE_EQ(bf::dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(bf::dice(a, box(e, {2, 2, 2}, {4, 4, 4})), 0.0);
  const auto p = box(e, {0, 0, 0}, {1, 1, 2});  // voxels (0,0,0), (0,0,1)
  const auto g = box(e, {0, 0, 1}, {1, 1, 3});  // voxels (0,0,1), (0,0,2)
  EXPECT_DOUBLE_EQ(bf::dice(p, g), 0.5);
  const bf::Mask empty{e, std::vector<std::uint8_t>(64)};
  EXPECT_DOUBLE_EQ(bf::dice(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(bf::dice(empty, a), 0.0);
}

TEST(Overlap, SensitivityPpv) {
  const bf::Extents e{4, 4, 4};
  const auto g = box(e, {0, 0, 0}, {2, 2, 1});
  const auto p = box(e, {0, 0, 0}, {2, 2, 2});  // superset, twice as large
  EXPECT_DOUBLE_EQ(bf::sensitivity(g, g), 1.0);
  EXPECT_DOUBLE_EQ(bf::ppv(g, g), 1.0);
  EXPECT_DOUBLE_EQ(bf::sensitivity(p, g), 1.0);
  EXPECT_DOUBLE_EQ(bf::ppv(p, g), 0.5);
  const bf::Mask empty{e, std::vector<std::uint8_t>(64)};
  EXPECT_DOUBLE_EQ(bf::sensitivity(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(bf::ppv(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(bf::sensitivity(empty, g), 0.0);
  EXPECT_DOUBLE_EQ(bf::ppv(g, empty), 0.0);
}

TEST(Overlap, Symmetries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_mask({4, 5, 3}, 0.3, rng), b = random_mask({4, 5, 3}, 0.3, rng);
    EXPECT_DOUBLE_EQ(bf::dice(a, b), bf::dice(b, a));
    EXPECT_DOUBLE_EQ(bf::sensitivity(a, b), bf::ppv(b, a));
  }
}

TEST(Overlap, ExtentMismatchThrows) {
  EXPECT_THROW(bf::dice(box({2, 2, 2}, {0, 0, 0}, {1, 1, 1}), box({2, 2, 3}, {0, 0, 0}, {1, 1, 1})),
               bf::DimensionError);
}

TEST(Hd95, IdenticalIsZero) {
  std::mt19937_64 rng(6);
  const auto a = random_mask({6, 6, 6}, 0.4, rng);
  EXPECT_EQ(bf::hd95(a, a).value(), 0.0);
}

TEST(Hd95, OffsetUnitCubes) {
  const bf::Extents e{5, 5, 5};
  EXPECT_DOUBLE_EQ(bf::hd95(box(e, {1, 1, 1}, {2, 2, 2}), box(e, {2, 1, 1}, {3, 2, 2})).value(), 1.0);
  EXPECT_DOUBLE_EQ(bf::hd95(box(e, {0, 0, 0}, {3, 3, 3}), box(e, {1, 0, 0}, {4, 3, 3})).value(), 1.0);
}

TEST(Hd95, EmptyIsUndefined) {
  const bf::Extents e{3, 3, 3};
  const bf::Mask empty{e, std::vector<std::uint8_t>(27)};
  EXPECT_FALSE(bf::hd95(empty, box(e, {0, 0, 0}, {1, 1, 1})).has_value());
  EXPECT_FALSE(bf::hd95(empty, empty).has_value());
}

TEST(Hd95, MatchesBruteForceOracle) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> ext(3, 7);
  std::uniform_real_distribution<double> density(0.02, 0.5);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const bf::Extents e{ext(rng), ext(rng), ext(rng)};
    const auto a = random_mask(e, density(rng), rng), b = random_mask(e, density(rng), rng);
    if (a.count() > 100 || b.count() > 100) continue;
    const auto got = bf::hd95(a, b), want = hd95_oracle(a, b);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      EXPECT_EQ(*got, *want) << "trial " << trial;
    }
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Hd95, DistanceTransformMatchesBruteForce) {
  std::mt19937_64 rng(8);
  const bf::Extents e{5, 6, 7};
  const auto m = random_mask(e, 0.05, rng);
  std::vector<std::size_t> sites;
  for (std::size_t i = 0; i < m.voxels.size(); ++i)
    if (m.voxels[i]) sites.push_back(i);
  const auto dt = bf::squared_distance_to(sites, e);
  for (std::size_t i = 0; i < dt.size(); ++i) {
    double best = 1e300;
    const long x = long(i / 42), y = long((i / 7) % 6), z = long(i % 7);
    for (auto s : sites) {
      const long sx = long(s / 42), sy = long((s / 7) % 6), sz = long(s % 7);
      best = std::min(best, double((x - sx) * (x - sx) + (y - sy) * (y - sy) + (z - sz) * (z - sz)));
    }
    EXPECT_EQ(dt[i], best);
  }
}

TEST(Percentile, NearestRank) {
  std::vector<double> v(20);
  for (int i = 0; i < 20; ++i) v[i] = double(20 - i);
  EXPECT_EQ(bf::nearest_rank_percentile(v, 0.95), 19.0);  // ceil(19) = 19th value
  EXPECT_EQ(bf::nearest_rank_percentile({3.0}, 0.95), 3.0);
  EXPECT_THROW(bf::nearest_rank_percentile({}, 0.95), bf::UsageError);
}

TEST(Report, PerfectPredictionAndSerialization) {
  std::mt19937_64 rng(9);
  const auto labels = random_labels(64, rng);
  const auto report = bf::evaluate_labels(labels, labels, {4, 4, 4});
  for (auto r : bf::kRegions) {
    EXPECT_EQ(report[r].dice, 1.0);
    EXPECT_EQ(report[r].sensitivity, 1.0);
    EXPECT_EQ(report[r].ppv, 1.0);
    EXPECT_EQ(report[r].hd95.value(), 0.0);
  }
  const auto j = bf::to_json(report);
  EXPECT_EQ(j.at("WT.dice").get<double>(), 1.0);
  EXPECT_TRUE(j.contains("ET.hd95"));
  EXPECT_NE(bf::to_text(report).find("TC"), std::string::npos);
}

TEST(Report, UndefinedHd95IsNull) {
  const std::vector<std::uint8_t> truth(8, 0);
  std::vector<std::uint8_t> pred(8, 0);
  pred[0] = 2;
  const auto report = bf::evaluate_labels(pred, truth, {2, 2, 2});
  EXPECT_FALSE(report[bf::Region::wt].hd95.has_value());
  EXPECT_TRUE(bf::to_json(report).at("WT.hd95").is_null());
  EXPECT_EQ(report[bf::Region::et].dice, 1.0);  // both empty
  EXPECT_NE(bf::to_text(report).find("n/a"), std::string::npos);
}

TEST(Report, MeanSkipsUndefinedHd95) {
  bf::MetricReport a, b;
  a[bf::Region::wt] = {1.0, 1.0, 1.0, 2.0};
  b[bf::Region::wt] = {0.5, 0.0, 0.5, std::nullopt};
  const auto m = bf::mean_report({a, b});
  EXPECT_DOUBLE_EQ(m[bf::Region::wt].dice, 0.75);
  EXPECT_DOUBLE_EQ(m[bf::Region::wt].hd95.value(), 2.0);
}
