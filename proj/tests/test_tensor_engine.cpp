#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "brainformer/conv.hpp"
#include "brainformer/gradcheck.hpp"
#include "brainformer/ops.hpp"
#include "test_util.hpp"

namespace bf = brainformer;
using bf::Tensor;
using bf::testing::random_tensor;
using bf::testing::tracked;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndMismatchedBuffer) {
  EXPECT_THROW(Tensor<double>({2, 0}), bf::DimensionError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), bf::DimensionError);
}

TEST(Matmul, IdentityAndHandExample) {
  std::mt19937_64 rng(1);
  const auto b = random_tensor({3, 4}, rng);
  const auto out = bf::matmul(Tensor<double>::identity(3), b);
  for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], b[i]);

  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const Tensor<double> c({2, 1}, {0, 1});
  const auto r = bf::matmul(a, c);
  EXPECT_EQ(r.shape(), (bf::Shape{2, 1}));
  EXPECT_DOUBLE_EQ(r[0], 2);
  EXPECT_DOUBLE_EQ(r[1], 4);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(bf::matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), bf::DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const auto report = bf::gradcheck_tensors<double>([&] { return bf::sum(bf::matmul(a, b)); },
                                                    {{"a", a}, {"b", b}}, {.step = 1e-5});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-6) << e.name;
}

TEST(Conv3d, IdentityKernelAndSummationKernel) {
  const Tensor<double> ones({1, 2, 2, 2}, 1.0);
  const Tensor<double> unit({1, 1, 1, 1, 1}, 1.0);
  const auto same = bf::conv3d(ones, unit);
  EXPECT_EQ(same.shape(), ones.shape());
  for (std::size_t i = 0; i < same.numel(); ++i) EXPECT_EQ(same[i], 1.0);

  std::mt19937_64 rng(3);
  const auto x = random_tensor({1, 3, 3, 3}, rng);
  const auto total = bf::conv3d(x, Tensor<double>({1, 1, 3, 3, 3}, 1.0));
  ASSERT_EQ(total.numel(), 1u);
  double expected = 0;
  for (double v : x.data()) expected += v;
  EXPECT_NEAR(total[0], expected, 1e-12);
}

TEST(Conv3d, OutputExtentLaw) {
  const auto out = bf::conv3d(Tensor<double>({2, 7, 6, 5}), Tensor<double>({3, 2, 3, 2, 1}), 2, 1);
  // floor((h + 2·pad − k)/stride) + 1
  EXPECT_EQ(out.shape(), (bf::Shape{3, 4, 4, 4}));
}

TEST(Conv3d, KernelLargerThanPaddedInputIsRejected) {
  EXPECT_THROW(bf::conv3d(Tensor<double>({1, 2, 2, 2}), Tensor<double>({1, 1, 3, 3, 3})), bf::DimensionError);
  EXPECT_THROW(bf::conv3d(Tensor<double>({2, 2, 2, 2}), Tensor<double>({1, 1, 1, 1, 1})), bf::DimensionError);
}

TEST(Conv3d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 4, 4, 4}, rng);
  auto k = random_tensor({3, 2, 3, 3, 3}, rng);
  auto w = random_tensor({3, 4, 4, 4}, rng);  // projection keeps the loss non-trivial
  const auto report = bf::gradcheck_tensors<double>([&] { return bf::sum(bf::mul(bf::conv3d(x, k, 1, 1), w)); },
                                                    {{"input", x}, {"kernel", k}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Conv3d, StridedGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 5, 4, 6}, rng);
  auto k = random_tensor({2, 2, 3, 2, 3}, rng);
  const auto report = bf::gradcheck_tensors<double>(
      [&] { return bf::sum(bf::mul(bf::conv3d(x, k, 2, 1), bf::conv3d(x, k, 2, 1))); }, {{"input", x}, {"kernel", k}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Conv3dTranspose, ShapeLawAndZeroInput) {
  const auto out = bf::conv3d_transpose(Tensor<double>({1, 2, 2, 2}, 1.0), Tensor<double>({1, 1, 2, 2, 2}, 1.0), 2);
  EXPECT_EQ(out.shape(), (bf::Shape{1, 4, 4, 4}));
  std::mt19937_64 rng(6);
  const auto zero = bf::conv3d_transpose(Tensor<double>({3, 2, 3, 2}), random_tensor({3, 2, 2, 2, 2}, rng), 2);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3dTranspose, IsTheAdjointOfConv3d) {
  std::mt19937_64 rng(7);
  struct Case {
    bf::Shape x;
    bf::Shape k;
    std::size_t stride, pad;
  };
  const Case cases[] = {{{2, 4, 4, 4}, {3, 2, 2, 2, 2}, 2, 0},
                        {{2, 5, 5, 5}, {3, 2, 3, 3, 3}, 2, 1},
                        {{1, 4, 6, 5}, {2, 1, 3, 3, 3}, 1, 1},
                        {{3, 6, 6, 6}, {1, 3, 4, 4, 4}, 2, 1}};
  for (const auto& c : cases) {
    const auto x = random_tensor(c.x, rng);
    const auto k = random_tensor(c.k, rng);
    const auto y = random_tensor(bf::conv3d(x, k, c.stride, c.pad).shape(), rng);
    const auto lhs = dot(bf::conv3d(x, k, c.stride, c.pad), y);
    const auto back = bf::conv3d_transpose(y, k, c.stride, c.pad);
    ASSERT_EQ(back.shape(), x.shape());
    EXPECT_NEAR(lhs, dot(x, back), 1e-10);
  }
}

TEST(Conv3dTranspose, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 2, 3, 2}, rng);
  auto k = random_tensor({2, 3, 2, 2, 2}, rng);
  auto w = random_tensor({3, 4, 6, 4}, rng);
  const auto report = bf::gradcheck_tensors<double>(
      [&] { return bf::sum(bf::mul(bf::conv3d_transpose(x, k, 2), w)); }, {{"input", x}, {"kernel", k}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Layernorm, ConstantRowMapsToZero) {
  const Tensor<double> x({1, 5}, 3.25);
  const auto y = bf::layernorm(x, Tensor<double>({5}, 1.0), Tensor<double>({5}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Layernorm, AlreadyNormalizedRowIsKept) {
  const Tensor<double> x({1, 2}, {1.0, -1.0});
  const auto y = bf::layernorm(x, Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0), 1e-14);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], -1.0, 1e-12);
}

TEST(Layernorm, RowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor({4, 8}, rng, -3, 5);
  const auto y = bf::layernorm(x, Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mu += y[r * 8 + j];
    mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (y[r * 8 + j] - mu) * (y[r * 8 + j] - mu);
    var /= 8;
    EXPECT_LT(std::abs(mu), 1e-7);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(Layernorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto x = random_tensor({3, 6}, rng);
  auto g = random_tensor({6}, rng);
  auto b = random_tensor({6}, rng);
  auto w = random_tensor({3, 6}, rng);
  const auto report = bf::gradcheck_tensors<double>([&] { return bf::sum(bf::mul(bf::layernorm(x, g, b), w)); },
                                                    {{"x", x}, {"gamma", g}, {"beta", b}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(InstanceNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({3, 2, 3, 2}, rng);
  auto g = random_tensor({3}, rng);
  auto b = random_tensor({3}, rng);
  auto w = random_tensor({3, 2, 3, 2}, rng);
  const auto report = bf::gradcheck_tensors<double>([&] { return bf::sum(bf::mul(bf::instance_norm(x, g, b), w)); },
                                                    {{"x", x}, {"gamma", g}, {"beta", b}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Softmax, UniformAndAnalyticCases) {
  const auto u = bf::softmax(Tensor<double>({1, 4}, 2.0), 1);
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto a = bf::softmax(Tensor<double>({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(a[0], 0.25, 1e-15);
  EXPECT_NEAR(a[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalizationProperty) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 5);
    const bf::Shape shape{ext(rng), ext(rng), ext(rng)};
    const std::size_t axis = trial % 3;
    const auto x = random_tensor(shape, rng, -10, 10);
    const auto y = bf::softmax(x, axis);
    const auto shifted = bf::softmax(bf::affine(x, 1.0, 7.5), axis);
    EXPECT_LT(bf::testing::max_abs_diff(y.data(), shifted.data()), 1e-12);
    // slices along axis sum to 1
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= shape[i];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        double total = 0;
        for (std::size_t j = 0; j < shape[axis]; ++j) {
          const double v = y[(o * shape[axis] + j) * inner + in];
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({3, 4, 2}, rng, -2, 2);
  auto w = random_tensor({3, 4, 2}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto report =
        bf::gradcheck_tensors<double>([&] { return bf::sum(bf::mul(bf::softmax(x, axis), w)); }, {{"x", x}});
    EXPECT_LT(report[0].max_relative_error, 1e-5) << "axis " << axis;
  }
}

TEST(Backward, SumGivesOnesAndSquareGivesTwoX) {
  auto x = tracked(Tensor<double>({2, 3}, 0.5));
  {
    bf::Tape<double> tape;
    tape.backward(bf::sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  auto s = tracked(Tensor<double>::scalar(3.0));
  {
    bf::Tape<double> tape;
    bf::backward(bf::mul(s, s));
  }
  EXPECT_DOUBLE_EQ(s.grad()[0], 6.0);
}

TEST(Backward, NonScalarAndConsumedTapeAreUsageErrors) {
  auto x = tracked(Tensor<double>({2}, 1.0));
  bf::Tape<double> tape;
  const auto y = bf::mul(x, x);
  EXPECT_THROW(tape.backward(y), bf::UsageError);
  const auto loss = bf::sum(y);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), bf::UsageError);
  EXPECT_THROW(bf::sum(x), bf::UsageError);  // recording into a consumed tape
}

TEST(Backward, AdjointsReplayInReverseOrderAndAccumulate) {
  // y = x·x + x reuses x twice; gradient accumulates to 2x + 1.
  auto x = tracked(Tensor<double>({3}, {1.0, -2.0, 0.5}));
  bf::Tape<double> tape;
  tape.backward(bf::sum(bf::add(bf::mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Backward, IsDeterministic) {
  std::mt19937_64 rng(14);
  auto x = tracked(random_tensor({2, 3, 3, 3}, rng));
  auto k = tracked(random_tensor({2, 2, 3, 3, 3}, rng));
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    x.zero_grad();
    k.zero_grad();
    bf::Tape<double> tape;
    tape.backward(bf::sum(bf::gelu(bf::conv3d(x, k, 1, 1))));
    std::vector<double> g(k.grad().begin(), k.grad().end());
    if (run == 0) first = g;
    else EXPECT_EQ(first, g);
  }
}

TEST(FiniteDiffCheck, QuadraticAndLinearFunctions) {
  std::mt19937_64 rng(15);
  const auto x = random_tensor({5, 3}, rng);
  const double quad = bf::finite_diff_check<double>([](const Tensor<double>& t) { return bf::sum(bf::mul(t, t)); },
                                                    x, 1e-4);
  EXPECT_LT(quad, 1e-8);
  const auto w = random_tensor({5, 3}, rng);
  for (double step : {1e-1, 1e-3, 1e-6}) {
    const double lin = bf::finite_diff_check<double>([&](const Tensor<double>& t) { return bf::sum(bf::mul(t, w)); },
                                                     x, step);
    EXPECT_LT(lin, 1e-8) << step;
  }
}

TEST(FiniteDiffCheck, FloorTurnsTinyGradientsIntoAbsoluteComparisons) {
  EXPECT_NEAR(bf::relative_gradient_error(4e-8, 4e-8 + 4e-12), 1e-4, 1e-7);
  EXPECT_NEAR(bf::relative_gradient_error(4e-8, 4e-8 + 4e-12, 1e-6), 4e-6, 1e-12);
  EXPECT_NEAR(bf::relative_gradient_error(2.0, 1.0, 1e-6), 0.5, 1e-15);
}

TEST(FiniteDiffCheck, ReportsWorstCoordinate) {
  // Central differences of x³ are off by exactly step² everywhere, so the
  // smallest gradient 3x² has the largest relative error.
  const Tensor<double> x({3}, {0.1, 2.0, -0.5});
  bf::GradcheckOptions o;
  o.step = 1e-2;
  const auto r = bf::gradcheck_tensors<double>([&] { return bf::sum(bf::mul(bf::mul(x, x), x)); }, {{"x", x}}, o);
  EXPECT_EQ(r[0].worst_index, 0u);
  EXPECT_NEAR(r[0].worst_analytic, 0.03, 1e-12);
  EXPECT_NEAR(r[0].worst_numeric, 0.0301, 1e-9);
  EXPECT_NEAR(r[0].max_relative_error, 1e-4 / 0.0301, 1e-9);
}

TEST(FiniteDiffCheck, NonFiniteValuesAreFlagged) {
  // 1/x crosses a pole inside the finite-difference stencil.
  const Tensor<double> x({1}, {0.0});
  EXPECT_THROW(bf::finite_diff_check<double>(
                   [](const Tensor<double>& t) { return bf::sum(bf::div(Tensor<double>({1}, 1.0), t)); }, x, 1e-3),
               bf::NumericError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4}, rng, 0.5, 1.5);
  auto c = random_tensor({3, 1}, rng);
  auto w = random_tensor({3, 4}, rng);
  const auto report = bf::gradcheck_tensors<double>(
      [&] {
        const auto t = bf::div(bf::mul(bf::sub(bf::add(a, c), b), a), b);
        return bf::add(bf::mean(bf::mul(bf::gelu(t), w)), bf::sum(bf::sum_last(bf::relu(bf::affine(t, 2.0, 0.1)))));
      },
      {{"a", a}, {"b", b}, {"c", c}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Structural, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  auto x = random_tensor({2, 3, 4}, rng);
  auto y = random_tensor({2, 4, 3}, rng);
  auto z = random_tensor({2, 1, 4}, rng);
  auto w = random_tensor({4, 3, 2}, rng);
  const auto report = bf::gradcheck_tensors<double>(
      [&] {
        const auto cat = bf::concat<double>({x, z}, 1);                     // 2×4×4
        const auto p = bf::permute(bf::bmm(cat, y), {1, 2, 0});            // 4×3×2
        const auto r = bf::reshape(bf::slice(p, 0, 1, 3), {2, 6});          // 2×6
        return bf::add(bf::sum(bf::mul(p, w)), bf::sum(bf::mul(r, r)));
      },
      {{"x", x}, {"y", y}, {"z", z}});
  for (const auto& e : report) EXPECT_LT(e.max_relative_error, 1e-5) << e.name;
}

TEST(Structural, ReshapeAndPermuteRoundTripsAreExact) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 4);
    const bf::Shape shape{ext(rng), ext(rng), ext(rng), ext(rng)};
    const auto x = random_tensor(shape, rng);
    std::vector<std::size_t> axes{0, 1, 2, 3};
    std::shuffle(axes.begin(), axes.end(), rng);
    std::vector<std::size_t> inverse(4);
    for (std::size_t i = 0; i < 4; ++i) inverse[axes[i]] = i;
    const auto back = bf::permute(bf::permute(x, axes), inverse);
    EXPECT_EQ(back.shape(), shape);
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), back.data().begin()));
    const auto flat = bf::reshape(bf::reshape(x, {x.numel()}), shape);
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), flat.data().begin()));
  }
}

TEST(Broadcast, BiasAlongLeadingChannelAxis) {
  const Tensor<double> x({2, 2, 1, 1}, {1, 2, 3, 4});
  const Tensor<double> bias({2, 1, 1, 1}, {10, 20});
  const auto y = bf::broadcast_add(x, bias);
  EXPECT_EQ(y[0], 11);
  EXPECT_EQ(y[1], 12);
  EXPECT_EQ(y[2], 23);
  EXPECT_EQ(y[3], 24);
  EXPECT_THROW(bf::add(Tensor<double>({2, 3}), Tensor<double>({2})), bf::DimensionError);
}

TEST(Numeric, NonFiniteResultsRaise) {
  EXPECT_THROW(bf::div(Tensor<double>({1}, 1.0), Tensor<double>({1}, 0.0)), bf::NumericError);
  const double huge = std::numeric_limits<double>::max();
  EXPECT_THROW(bf::mul(Tensor<double>({1}, huge), Tensor<double>({1}, huge)), bf::NumericError);
}

TEST(Precision, FloatTensorsRunTheSameOps) {
  const Tensor<float> a({2, 2}, {1, 2, 3, 4});
  const auto y = bf::softmax(bf::matmul(a, Tensor<float>::identity(2)), 1);
  EXPECT_NEAR(y[0] + y[1], 1.0f, 1e-6f);
}
