#include <gtest/gtest.h>

#include <cmath>

#include "gman/gradcheck.hpp"
#include "gman/nn.hpp"
#include "gman/tensor.hpp"
#include "test_util.hpp"

using namespace gman;
using gman::testing::bit_identical;
using gman::testing::max_abs_diff;
using gman::testing::op_gradient_error;
using gman::testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST(Tensor, FromRejectsWrongElementCount) {
  EXPECT_THROW(Tensor::from({2, 3}, {1.0, 2.0}), DimensionError);
}

TEST(Tensor, AtUsesRowMajorOrder) {
  Tensor t = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.extent(-1), 3u);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
}

TEST(Tensor, MatmulMatchesLoopProduct) {
  const auto a = gman::testing::random_values(3 * 4, 1);
  const auto b = gman::testing::random_values(4 * 5, 2);
  Tensor c = matmul(Tensor::from({3, 4}, a), Tensor::from({4, 5}, b));
  EXPECT_EQ(c.shape(), (Shape{3, 5}));
  EXPECT_LT(max_abs_diff(c.data(), naive_matmul(a, b, 3, 4, 5)), 1e-12);
}

TEST(Tensor, BatchedMatmulSharedAndPerSlice) {
  const auto a = gman::testing::random_values(2 * 3 * 4, 3);
  const auto b = gman::testing::random_values(2 * 4 * 2, 4);
  Tensor shared = matmul(Tensor::from({2, 3, 4}, a), Tensor::from({4, 2}, {b.begin(), b.begin() + 8}));
  Tensor sliced = matmul(Tensor::from({2, 3, 4}, a), Tensor::from({2, 4, 2}, b));
  for (std::size_t s = 0; s < 2; ++s) {
    const std::vector<double> as(a.begin() + s * 12, a.begin() + (s + 1) * 12);
    const std::vector<double> bs(b.begin() + s * 8, b.begin() + (s + 1) * 8);
    const auto expect_shared = naive_matmul(as, {b.begin(), b.begin() + 8}, 3, 4, 2);
    const auto expect_sliced = naive_matmul(as, bs, 3, 4, 2);
    EXPECT_LT(max_abs_diff(shared.data().subspan(s * 6, 6), expect_shared), 1e-12);
    EXPECT_LT(max_abs_diff(sliced.data().subspan(s * 6, 6), expect_sliced), 1e-12);
  }
}

TEST(Tensor, MatmulTransposedEqualsExplicitTranspose) {
  const auto a = gman::testing::random_values(3 * 4, 5);
  const auto b = gman::testing::random_values(5 * 4, 6);
  std::vector<double> bt(4 * 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt[j * 5 + i] = b[i * 4 + j];
  Tensor c = matmul_transposed(Tensor::from({3, 4}, a), Tensor::from({5, 4}, b));
  EXPECT_LT(max_abs_diff(c.data(), naive_matmul(a, bt, 3, 4, 5)), 1e-12);
}

TEST(Tensor, MatmulRejectsMismatchedInnerDimension) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 2})), DimensionError);
}

TEST(Tensor, SoftmaxOfOneTwoThree) {
  Tensor p = softmax_lastdim(Tensor::from({3}, {1.0, 2.0, 3.0}));
  EXPECT_NEAR(p.data()[0], 0.09003057, 1e-8);
  EXPECT_NEAR(p.data()[1], 0.24472847, 1e-8);
  EXPECT_NEAR(p.data()[2], 0.66524096, 1e-8);
}

TEST(Tensor, SoftmaxIsShiftInvariantAndStable) {
  Tensor a = softmax_lastdim(Tensor::from({3}, {1.0, 2.0, 3.0}));
  Tensor b = softmax_lastdim(Tensor::from({3}, {1001.0, 1002.0, 1003.0}));
  EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-15);
  for (double v : b.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  Tensor p = softmax_lastdim(random_tensor({7, 5, 9}, 11, false, 10.0));
  for (std::size_t r = 0; r < 35; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_GE(p.data()[r * 9 + j], 0.0);
      total += p.data()[r * 9 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Tensor, MaskedSoftmaxGivesExactZeros) {
  Mask mask{{2, 3}, {1, 0, 1, 0, 1, 1}};
  Tensor p = softmax_lastdim(random_tensor({4, 2, 3}, 12), &mask);
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(p.data()[b * 6 + 1], 0.0);
    EXPECT_EQ(p.data()[b * 6 + 3], 0.0);
    EXPECT_NEAR(p.data()[b * 6 + 0] + p.data()[b * 6 + 2], 1.0, 1e-15);
  }
}

TEST(Tensor, FullyMaskedRowIsANumericError) {
  Mask mask{{3}, {0, 0, 0}};
  EXPECT_THROW(softmax_lastdim(Tensor::zeros({2, 3}), &mask), NumericError);
}

TEST(Tensor, BroadcastAddOverLeadingAndTrailingDimensions) {
  Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor row = add(x, Tensor::from({3}, {10, 20, 30}));
  EXPECT_EQ(row.at({1, 2}), 35.0);
  Tensor col = add(x, Tensor::from({2, 1}, {100, 200}));
  EXPECT_EQ(col.at({0, 2}), 102.0);
  EXPECT_EQ(col.at({1, 0}), 203.0);
  EXPECT_THROW(add(x, Tensor::zeros({2})), DimensionError);
}

TEST(Tensor, ElementwiseGradients) {
  auto a = random_tensor({3, 4}, 21, true);
  auto b = random_tensor({4}, 22, true);
  auto c = random_tensor({3, 1}, 23, true);
  EXPECT_LT(op_gradient_error([](const auto& x) { return add(x[0], x[1]); }, {a, b}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return sub(x[0], x[1]); }, {a, c}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return mul(x[0], x[1]); }, {a, b}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return mul(x[1], x[0]); }, {c, a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return sigmoid(x[0]); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return affine(x[0], -2.5, 0.5); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return relu(x[0]); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return abs(x[0]); }, {a}), 1e-7);
}

TEST(Tensor, MatmulGradients) {
  EXPECT_LT(op_gradient_error([](const auto& x) { return matmul(x[0], x[1]); },
                              {random_tensor({2, 3, 4}, 31, true), random_tensor({4, 5}, 32, true)}),
            1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return matmul(x[0], x[1]); },
                              {random_tensor({2, 3, 4}, 33, true), random_tensor({2, 4, 2}, 34, true)}),
            1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return matmul_transposed(x[0], x[1]); },
                              {random_tensor({2, 3, 4}, 35, true), random_tensor({2, 5, 4}, 36, true)}),
            1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return matmul_transposed(x[0], x[1]); },
                              {random_tensor({6, 4}, 37, true), random_tensor({3, 4}, 38, true)}),
            1e-7);
}

TEST(Tensor, SoftmaxGradientWithMask) {
  Mask mask{{3, 3}, {1, 0, 0, 1, 1, 0, 1, 1, 1}};
  EXPECT_LT(op_gradient_error([&](const auto& x) { return softmax_lastdim(x[0], &mask); },
                              {random_tensor({2, 3, 3}, 41, true)}),
            1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return softmax_lastdim(x[0]); }, {random_tensor({4, 6}, 42, true)}),
            1e-7);
}

TEST(Tensor, ShapeOperationGradients) {
  auto a = random_tensor({2, 3, 4}, 51, true);
  auto b = random_tensor({2, 3, 2}, 52, true);
  EXPECT_LT(op_gradient_error([](const auto& x) { return concat_lastdim({x[0], x[1]}); }, {a, b}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return slice_lastdim(x[0], 1, 2); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return reshape(x[0], {6, 4}); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return permute(x[0], {2, 0, 1}); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return expand(x[0], 1, 3); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return gather(x[0], 1, {2, -1, 0, 2}); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return max_axis(x[0], 1); }, {a}), 1e-7);
  EXPECT_LT(op_gradient_error([](const auto& x) { return mean(x[0]); }, {a}), 1e-7);
}

TEST(Tensor, PermuteMovesAxes) {
  Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor y = permute(x, {1, 0});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(y.at({2, 1}), 5.0);
  EXPECT_EQ(y.at({1, 0}), 1.0);
  EXPECT_THROW(permute(x, {0, 0}), DimensionError);
}

TEST(Tensor, GatherMinusOneYieldsZeroSlice) {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = gather(x, 0, {2, -1});
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  EXPECT_EQ(y.at({0, 1}), 6.0);
  EXPECT_EQ(y.at({1, 0}), 0.0);
  EXPECT_THROW(gather(x, 0, {3}), DimensionError);
}

TEST(Tensor, ExpandRepeatsAlongNewAxis) {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor y = expand(x, 1, 3);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(y.at({1, 2, 0}), 3.0);
  EXPECT_EQ(y.at({0, 1, 1}), 2.0);
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x = random_tensor({2}, 61, true);
  EXPECT_THROW(backward(affine(x, 2.0)), ConfigError);
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
  backward(sum(affine(x, 3.0)));
  backward(sum(affine(x, 3.0)));
  EXPECT_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(x.grad()[1], 6.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, SharedSubexpressionGradient) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor x = random_tensor({3}, 62, true);
  {
    NoGradGuard guard;
    Tensor y = relu(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(relu(x).requires_grad());
}

TEST(Tensor, AbsSubgradientIsZeroAtZero) {
  Tensor x = Tensor::from({3}, {0.0, 2.0, -1.0}, true);
  backward(sum(abs(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], -1.0);
}

TEST(Tensor, ForwardIsDeterministic) {
  auto run = [] {
    Tensor a = random_tensor({4, 5}, 71);
    Tensor b = random_tensor({5, 3}, 72);
    return softmax_lastdim(matmul(a, b));
  };
  EXPECT_TRUE(bit_identical(run().data(), run().data()));
}

TEST(ParameterRegistry, RejectsDuplicateNames) {
  ParameterRegistry reg(1);
  reg.weight("w", 2, 3);
  EXPECT_THROW(reg.weight("w", 2, 3), ConfigError);
  EXPECT_EQ(reg.scalar_count(), 6u);
}

TEST(ParameterRegistry, GlorotBoundsAndZeroBias) {
  ParameterRegistry reg(2);
  Tensor w = reg.weight("w", 10, 6);
  Tensor b = reg.bias("b", 6);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double v : w.data()) EXPECT_LE(std::fabs(v), bound);
  for (double v : b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Dense, ComputesAffineMapWithOptionalRelu) {
  ParameterRegistry reg(3);
  Dense layer(reg, "fc", 2, 2, true);
  auto w = reg.parameters()[0].tensor.mutable_data();
  const double values[] = {1.0, -1.0, 2.0, 0.5};
  std::copy(values, values + 4, w.begin());
  Tensor y = layer(Tensor::from({1, 2}, {1.0, 1.0}));
  EXPECT_DOUBLE_EQ(y.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.0);
}

TEST(Relu, PropagatesNaN) {
  const Tensor y = relu(Tensor::from({3}, {-1.0, NAN, 2.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_TRUE(std::isnan(y.data()[1]));
  EXPECT_EQ(y.data()[2], 2.0);
}

TEST(GradCheck, AcceptsCorrectGradientsAndCountsPerParameter) {
  std::vector<Parameter> params{{"a", random_tensor({3, 4}, 1, true)}, {"b", random_tensor({5}, 2, true)}};
  auto loss = [&] { return add(sum(mul(params[0].tensor, params[0].tensor)), sum(sigmoid(params[1].tensor))); };
  const auto r = finite_difference_check(loss, params, 1e-5, 17, 4);
  EXPECT_EQ(r.coordinates, 17u);
  EXPECT_LT(r.max_relative_error, 1e-8);
  // Round robin: b runs out after five coordinates, a supplies the rest.
  EXPECT_EQ(r.checked.at("b"), 5u);
  EXPECT_EQ(r.checked.at("a"), 12u);
}

TEST(GradCheck, FlagsAGradientTheGraphDoesNotSee) {
  std::vector<Parameter> params{{"x", random_tensor({6}, 3, true)}};
  auto loss = [&] {
    // x² enters the loss as a constant, so the analytic gradient misses 2x.
    std::vector<double> squares;
    for (double v : params[0].tensor.data()) squares.push_back(v * v);
    return add(sum(params[0].tensor), sum(Tensor::from({6}, squares)));
  };
  const auto r = finite_difference_check(loss, params, 1e-5, 6, 5);
  EXPECT_GT(r.max_relative_error, 0.05);
  EXPECT_EQ(r.worst_parameter, "x");
  EXPECT_NEAR(r.worst_analytic, 1.0, 1e-12);
  EXPECT_NEAR(r.worst_numeric, 1.0 + 2.0 * params[0].tensor.data()[r.worst_index], 1e-6);
}

TEST(GradCheck, CoordinatesBelowTheFloorAreSkippedAndReportedByAbsoluteError) {
  std::vector<Parameter> params{{"live", random_tensor({4}, 6, true)}, {"dead", random_tensor({4}, 7, true)}};
  auto loss = [&] { return add(sum(params[0].tensor), affine(sum(params[1].tensor), 0.0, 0.0)); };
  const auto r = finite_difference_check(loss, params, 1e-5, 4, 8, 1e-7);
  EXPECT_EQ(r.coordinates, 4u);
  EXPECT_EQ(r.skipped, 3u);  // dead is visited between live coordinates until live has four
  EXPECT_EQ(r.checked.count("dead"), 0u);
  EXPECT_LT(r.max_skipped_abs_error, 1e-12);
  EXPECT_THROW(finite_difference_check(loss, params, 0.0, 4), ConfigError);
}
