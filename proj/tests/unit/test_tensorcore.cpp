// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ppt/adam.hpp"
#include "ppt/gradcheck.hpp"
#include "ppt/ops.hpp"
#include "test_util.hpp"

namespace ppt {
namespace {

using testing::random_tensor;
using testing::to_vector;

TEST(Tensor, LeafShapeAndData) {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(-1), 3u);
  EXPECT_FLOAT_EQ(t.at({1, 2}), 6.0f);
  EXPECT_TRUE(t.is_leaf());
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(Ops, MatmulIdentity) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(to_vector(matmul(a, eye)), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Ops, MatmulMatchesNaiveLoop) {
  Rng rng(3);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {5, 7, 3}, {17, 33, 40}, {9, 64, 65}}) {
    const Tensor a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    const Tensor b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    const Tensor c = matmul(a, b);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double ref = 0.0;
        for (int p = 0; p < k; ++p) ref += double(a.data()[i * k + p]) * b.data()[p * n + j];
        EXPECT_NEAR(c.data()[i * n + j], ref, 1e-4) << m << "x" << k << "x" << n;
      }
    }
  }
}

TEST(Ops, ShapeMismatchNamesPrimitiveAndShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, Tensor::zeros({2})), std::invalid_argument);
}

TEST(Ops, SoftmaxUniform) {
  const Tensor s = softmax_last(Tensor::zeros({3}));
  for (float v : s.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
}

TEST(Ops, SoftmaxSumsToOneUnderMasks) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const Tensor x = random_tensor({4, n}, rng, false, -20.0, 20.0);
    std::vector<float> mask(n, 0.0f);
    for (std::size_t i = 1; i < n; ++i) {
      if (rng.uniform() < 0.5) mask[i] = kMaskedLogit;
    }
    const Tensor s = softmax_last(x, Tensor::from({n}, mask));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += s.data()[r * n + i];
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Ops, LayerNormHandCase) {
  const Tensor y = layernorm_last(Tensor::from({2}, {1, 3}), Tensor::full({2}, 1.0f),
                                  Tensor::zeros({2}));
  EXPECT_NEAR(y.data()[0], -1.0, 1e-4);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-4);
}

TEST(Ops, LayerNormStatistics) {
  Rng rng(5);
  const Tensor x = random_tensor({20, 128}, rng, false, -5.0, 5.0);
  const Tensor y = layernorm_last(x, Tensor::full({128}, 1.0f), Tensor::zeros({128}));
  for (std::size_t r = 0; r < 20; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 128; ++i) m += y.data()[r * 128 + i];
    m /= 128;
    for (std::size_t i = 0; i < 128; ++i) v += std::pow(y.data()[r * 128 + i] - m, 2);
    v /= 128;
    EXPECT_LT(std::abs(m), 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Ops, LayerNormRejectsEmptyAxis) {
  EXPECT_THROW(layernorm_last(Tensor::zeros({3, 0}), Tensor::zeros({0}), Tensor::zeros({0})),
               std::invalid_argument);
}

TEST(Ops, SqrtRejectsNegative) {
  EXPECT_THROW(sqrt(Tensor::from({1}, {-1.0f})), std::invalid_argument);
}

TEST(Ops, ForwardIsBitwiseDeterministic) {
  Rng rng(9);
  const Tensor a = random_tensor({6, 40}, rng);
  const Tensor b = random_tensor({40, 33}, rng);
  const Tensor g = random_tensor({33}, rng);
  const auto run = [&] {
    return to_vector(softmax_last(layernorm_last(matmul(a, b), g, g)));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumOfSquares) {
  const Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  const Gradients g = backward(sum(square(x)));
  EXPECT_EQ(g.of(x), (std::vector<float>{2, 4, 6}));
}

TEST(Backward, ConstantLeafHasNoGradient) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor c = Tensor::from({2}, {3, 4});
  const Gradients g = backward(sum(mul(x, c)));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(c));
}

TEST(Backward, RejectsNonScalar) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(square(x)), std::invalid_argument);
}

TEST(Backward, SecondCallRecomputesIdentically) {
  Rng rng(2);
  Tensor a = random_tensor({3, 3}, rng, true);
  Tensor b = random_tensor({3, 3}, rng, true);
  const Tensor loss = sum(matmul(a, b));
  const Gradients g1 = backward(loss);
  const Gradients g2 = backward(loss);
  EXPECT_EQ(g1.of(a), g2.of(a));
  EXPECT_EQ(g1.of(b), g2.of(b));
}

TEST(Backward, SharedInputAccumulates) {
  const Tensor x = Tensor::from({2}, {3, -1}, true);
  const Gradients g = backward(sum(mul(x, x)));
  EXPECT_EQ(g.of(x), (std::vector<float>{6, -2}));
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(1);
  Tensor x = random_tensor({10}, rng, true);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return sum(t); }, x, 1e-3), 1e-4);
}

TEST(GradCheck, MatmulMatchesCentralDifferences) {
  Rng rng(4);
  Tensor a = random_tensor({3, 3}, rng, true);
  const Tensor b = random_tensor({3, 3}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& t) { return sum(matmul(t, b)); }, a, 1e-3), 1e-3);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  float drift = 0.0f;
  const auto f = [&](const Tensor& t) {
    drift += 1.0f;
    return add(sum(t), Tensor::scalar(drift));
  };
  EXPECT_THROW(finite_diff_check(f, x, 1e-3), std::runtime_error);
}

TEST(GradCheck, SmoothVariantSkipsReluKinks) {
  Tensor x = Tensor::from({3}, {0.0005f, 1.0f, -2.0f}, true);
  const auto f = [](const Tensor& t) { return sum(relu(t)); };
  const auto r = finite_diff_check_smooth(f, x, 1e-3);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_error, 1e-4);
  EXPECT_GT(finite_diff_check(f, x, 1e-3), 0.1);
}

TEST(BranchTrace, DigestTracksReluSigns) {
  const auto digest = [](std::vector<float> v) {
    ScopedBranchTrace trace;
    relu(Tensor::from({v.size()}, v));
    return trace.digest();
  };
  EXPECT_EQ(digest({1, -1, 2}), digest({3, -5, 0.5}));
  EXPECT_NE(digest({1, -1, 2}), digest({1, 1, 2}));
}

TEST(Adam, FirstStepClosedForm) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0f}, true)};
  Gradients g;
  g.insert(params[0].id(), {1.0f});
  AdamState state;
  adam_step(params, g, state, 0.1f);
  EXPECT_NEAR(params[0].data()[0], 0.9f, 1e-6);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<Tensor> params{Tensor::from({3}, {1, -2, 3}, true)};
  Gradients g;
  g.insert(params[0].id(), {0, 0, 0});
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(params, g, state, 0.5f);
  EXPECT_EQ(to_vector(params[0]), (std::vector<float>{1, -2, 3}));
}

TEST(Adam, RejectsMissingGradientAndBadRate) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0f}, true)};
  AdamState state;
  EXPECT_THROW(adam_step(params, Gradients{}, state, 0.1f), std::invalid_argument);
  Gradients g;
  g.insert(params[0].id(), {1.0f});
  EXPECT_THROW(adam_step(params, g, state, 0.0f), std::invalid_argument);
}

TEST(Adam, TwoStepsAreReproducible) {
  const auto run = [] {
    Rng rng(77);
    std::vector<Tensor> params{random_tensor({4, 4}, rng, true)};
    const std::vector<float> grad = to_vector(random_tensor({4, 4}, rng));
    Gradients g;
    g.insert(params[0].id(), grad);
    AdamState state;
    adam_step(params, g, state, 0.01f);
    adam_step(params, g, state, 0.01f);
    return to_vector(params[0]);
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace ppt
