#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "docnmt/errors.hpp"
#include "docnmt/gradcheck.hpp"
#include "docnmt/ops.hpp"
#include "test_util.hpp"

using namespace docnmt;
using docnmt::testing::away_from_zero;
using docnmt::testing::kind_of;
using docnmt::testing::primitive_gradient_cases;
using docnmt::testing::probe;
using docnmt::testing::random_tensor;

TEST(Tensor, ShapeAndDataAgree) {
  const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(kind_of([] { Tensor::from({2, 2}, {1, 2, 3}); }), ErrorKind::kDimension);
  EXPECT_EQ(kind_of([] { Tensor::zeros({2, 0}); }), ErrorKind::kDimension);
}

TEST(Tensor, GradHasDataShape) {
  Rng rng(1);
  auto x = random_tensor({3, 4}, rng);
  backward(probe(relu(x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.size());
}

TEST(Tape, RecordsInTopologicalOrder) {
  Rng rng(2);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({3, 2}, rng);
  auto y = sum(relu(matmul(a, b)) + softmax(matmul(a, b), 1));
  const auto tape = Tape::record(y);
  EXPECT_TRUE(tape.topologically_ordered());
  std::vector<std::uint64_t> seen;
  for (const auto& r : tape.records()) {
    for (auto p : r.parents) {
      const bool leaf = p == a.node_id() || p == b.node_id();
      EXPECT_TRUE(leaf || std::find(seen.begin(), seen.end(), p) != seen.end());
    }
    seen.push_back(r.node_id);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Rng rng(3);
  auto x = random_tensor({2, 2}, rng);
  EXPECT_EQ(kind_of([&] { backward(relu(x)); }), ErrorKind::kContract);
}

TEST(Backward, RejectsLossWithoutHistory) {
  Rng rng(3);
  auto x = sum(random_tensor({2, 2}, rng, -1, 1, false));
  EXPECT_EQ(kind_of([&] { backward(x); }), ErrorKind::kContract);
}

TEST(Backward, AccumulatesAcrossUses) {
  Rng rng(4);
  auto x = random_tensor({3, 3}, rng);
  backward(probe(mul(x, x) + tanh(x), 7));
  const std::vector<double> twice(x.grad().begin(), x.grad().end());

  auto x1 = x.detach().set_requires_grad(true);
  auto x2 = x.detach().set_requires_grad(true);
  auto x3 = x.detach().set_requires_grad(true);
  backward(probe(mul(x1, x2) + tanh(x3), 7));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(twice[i], x1.grad()[i] + x2.grad()[i] + x3.grad()[i], 1e-14);
  }
}

TEST(NoGrad, BuildsNoGraph) {
  Rng rng(5);
  auto x = random_tensor({2, 2}, rng);
  NoGradGuard guard;
  const auto y = relu(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Matmul, Examples) {
  const auto id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  const auto p = matmul(id, m);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(matmul(x, b)); }, a), 1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return probe(matmul(a, x)); }, b), 1e-6);
}

TEST(Softmax, Examples) {
  const auto u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto s = softmax(Tensor::from({2}, {1000, 0}), 0);
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_TRUE(std::isfinite(s[0]));
}

TEST(Softmax, RejectsNaN) {
  EXPECT_EQ(kind_of([] { softmax(Tensor::from({2}, {std::nan(""), 0}), 0); }), ErrorKind::kNumeric);
}

TEST(Softmax, RowsSumToOneAndArePermutationEquivariant) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor({4, 6}, rng, -8, 8, false);
    const auto y = softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        EXPECT_GE(y[r * 6 + c], 0.0);
        s += y[r * 6 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(trial));
    std::vector<double> px(24);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) px[r * 6 + c] = x[r * 6 + perm[c]];
    }
    const auto py = softmax(Tensor::from({4, 6}, px), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(py[r * 6 + c], y[r * 6 + perm[c]], 1e-15);
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  auto x = random_tensor({2, 5}, rng, -2, 2);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return probe(softmax(t, 1)); }, x), 1e-6);
  auto y = random_tensor({3, 2}, rng, -2, 2);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return probe(softmax(t, 0)); }, y), 1e-6);
}

TEST(LayerNorm, Examples) {
  const auto gain = Tensor::full({4}, 1.0);
  const auto bias = Tensor::zeros({4});
  const auto flat = layer_norm(Tensor::from({4}, {1, 1, 1, 1}), gain, bias, 1e-6);
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
  const auto two = layer_norm(Tensor::from({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(two[0], -1.0, 1e-10);
  EXPECT_NEAR(two[1], 1.0, 1e-10);
}

TEST(LayerNorm, NormalizesEachSlice) {
  Rng rng(9);
  const auto x = random_tensor({5, 8}, rng, -3, 3, false);
  const auto y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mu += y[r * 8 + c] / 8.0;
    for (std::size_t c = 0; c < 8; ++c) var += (y[r * 8 + c] - mu) * (y[r * 8 + c] - mu) / 8.0;
    EXPECT_NEAR(mu, 0.0, 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  auto x = random_tensor({4, 8}, rng, -2, 2);
  auto g = random_tensor({8}, rng, 0.5, 1.5);
  auto b = random_tensor({8}, rng);
  auto f = [&] { return probe(layer_norm(x, g, b, 1e-6)); };
  EXPECT_LT(finite_diff_check(f, x), 1e-5);
  EXPECT_LT(finite_diff_check(f, g), 1e-5);
  EXPECT_LT(finite_diff_check(f, b), 1e-5);
}

TEST(Dropout, IdentityWhenDisabled) {
  Rng rng(11);
  const auto x = random_tensor({3, 3}, rng);
  Rng drop(1);
  EXPECT_EQ(dropout(x, 0.5, false, drop).node_id(), x.node_id());
  EXPECT_EQ(dropout(x, 0.0, true, drop).node_id(), x.node_id());
  EXPECT_EQ(dropout(x, 0.0, false, drop).node_id(), x.node_id());
}

TEST(Dropout, ScalesKeptUnits) {
  Rng rng(12);
  const auto x = Tensor::full({1000}, 1.0);
  const auto y = dropout(x, 0.25, true, rng);
  std::size_t kept = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
}

// Every differentiable primitive on inputs no larger than 6x6.
TEST(Primitives, GradientsMatchFiniteDifferences) {
  for (auto& c : primitive_gradient_cases()) {
    EXPECT_LT(finite_diff_check(c.f, c.leaf), 1e-5) << c.name;
  }
}

TEST(MaskedFill, BlocksDisallowedPositions) {
  const std::vector<std::size_t> lengths{2};
  const auto scores = Tensor::zeros({1, 1, 2, 3});
  const auto y = softmax(masked_fill(scores, AttentionMask::padding(lengths, 2, 3)), 3);
  EXPECT_EQ(y[2], 0.0);
  EXPECT_EQ(y[5], 0.0);
  EXPECT_NEAR(y[0], 0.5, 1e-15);
}

TEST(MaskedFill, FullyMaskedRowIsNumericError) {
  const std::vector<std::size_t> lengths{0};
  const auto scores = Tensor::zeros({1, 1, 1, 2});
  EXPECT_EQ(kind_of([&] { softmax(masked_fill(scores, AttentionMask::padding(lengths, 1, 2)), 3); }),
            ErrorKind::kNumeric);
}

TEST(CausalMask, AllowsOnlyEarlierKeys) {
  const std::vector<std::size_t> lengths{3};
  const auto m = AttentionMask::causal(lengths, 4);
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t k = 0; k < 4; ++k) {
      const bool expected = k <= q && (k < 3 || k == q);
      EXPECT_EQ(m.allowed(0, q, k), expected) << q << "," << k;
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  const std::size_t v = 7;
  const std::vector<int> targets{1, 4, 6};
  const auto loss = cross_entropy_label_smoothed(Tensor::zeros({3, v}), targets, 0.1, -1);
  EXPECT_NEAR(loss.item(), std::log(7.0), 1e-12);
}

TEST(CrossEntropy, MatchesHandComputedValue) {
  // logits [2, 0, -1], target 0, eps 0.2 over V = 3
  const auto logits = Tensor::from({1, 3}, {2, 0, -1});
  const std::vector<int> targets{0};
  const double lse = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0));
  const double lp[3] = {2 - lse, 0 - lse, -1 - lse};
  const double q0 = 0.8 + 0.2 / 3, q = 0.2 / 3;
  const double expected = -(q0 * lp[0] + q * lp[1] + q * lp[2]);
  EXPECT_NEAR(cross_entropy_label_smoothed(logits, targets, 0.2, -1).item(), expected, 1e-14);
}

TEST(CrossEntropy, IgnoresPadRows) {
  Rng rng(14);
  const auto logits = random_tensor({3, 4}, rng, -1, 1, false);
  const std::vector<int> with_pad{2, 0, 3};
  const std::vector<int> first{2};
  const std::vector<int> last{3};
  const double a = cross_entropy_label_smoothed(slice(logits, 0, 0, 1), first, 0.1, 0).item();
  const double b = cross_entropy_label_smoothed(slice(logits, 0, 2, 1), last, 0.1, 0).item();
  EXPECT_NEAR(cross_entropy_label_smoothed(logits, with_pad, 0.1, 0).item(), (a + b) / 2, 1e-14);
  const std::vector<int> all_pad{0, 0, 0};
  EXPECT_EQ(kind_of([&] { cross_entropy_label_smoothed(logits, all_pad, 0.1, 0); }), ErrorKind::kContract);
}

TEST(FiniteDiff, RestoresPerturbedValues) {
  Rng rng(15);
  auto x = random_tensor({3}, rng);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return sum(mul(t, t)); }, x), 1e-8);
  // Values are restored after probing.
  const std::vector<double> before(x.data().begin(), x.data().end());
  finite_diff_check([](const Tensor& t) { return sum(tanh(t)); }, x);
  EXPECT_EQ(before, std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(FiniteDiff, KinkWithinStepAndZeroGradients) {
  // relu input 3e-6 away from its kink: a 1e-5 central difference straddles
  // it, a 1e-6 one does not.
  auto x = Tensor::from({2}, {3e-6, -0.5}, true);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return sum(relu(t)); }, x), 1e-6);
  // A constant shift under softmax has zero gradient.
  auto shift = Tensor::from({1}, {0.3}, true);
  const auto logits = Tensor::from({1, 3}, {0.2, -1.0, 0.7});
  const std::vector<int> target{2};
  const auto ones = Tensor::full({1, 3}, 1.0);
  const auto shifted = [&](const Tensor& s) {
    return cross_entropy_label_smoothed(add(logits, matmul(reshape(s, {1, 1}), ones)), target, 0.0, -1);
  };
  EXPECT_LT(finite_diff_check(shifted, shift), 1e-4);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  // x * stop(x) has gradient x under autograd but 2x numerically.
  auto x = Tensor::from({2}, {0.8, -1.3}, true);
  const auto f = [](const Tensor& t) { return sum(mul(t, Tensor::from(t.shape(), {t[0], t[1]}))); };
  EXPECT_GT(finite_diff_check(f, x), 0.1);
}
