// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ppt/gradcheck.hpp"
#include "ppt/objectives.hpp"
#include "ppt/ops.hpp"
#include "test_util.hpp"

namespace ppt {
namespace {

using testing::random_tensor;
using testing::to_vector;

Tensor points(std::initializer_list<float> xy) {
  const std::size_t k = xy.size() / 2;
  return Tensor::from({1, k, 2}, std::vector<float>(xy));
}

double diversity_oracle(const std::vector<float>& c, std::size_t k, double sigma) {
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double dx = double(c[2 * i]) - c[2 * j];
      const double dy = double(c[2 * i + 1]) - c[2 * j + 1];
      total += std::exp(-(dx * dx + dy * dy) / sigma);
    }
  }
  return total / double(k * (k - 1));
}

TEST(LossWeights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.sigma_s, 1.0);
  EXPECT_EQ(w.lambda_d, 100.0);
  EXPECT_EQ(w.lambda_kd_traj, 5.0);
  EXPECT_EQ(w.lambda_kd_dest, 0.5);
  LossWeights bad;
  bad.sigma_s = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = LossWeights{};
  bad.lambda_kd_dest = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Precision, HandCases) {
  EXPECT_EQ(precision_loss(points({1, 1, 3, 4}), Tensor::from({1, 2}, {3, 4})).item(), 0.0f);
  EXPECT_NEAR(precision_loss(points({3, 4, 6, 8}), Tensor::from({1, 2}, {0, 0})).item(), 5.0, 1e-6);
}

TEST(Precision, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor c = random_tensor({3, 20, 2}, rng, false, -5, 5);
    const Tensor gt = random_tensor({3, 2}, rng, false, -5, 5);
    double expected = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < 20; ++k) {
        best = std::min(best, std::hypot(double(c.at({b, k, 0})) - gt.at({b, 0}),
                                         double(c.at({b, k, 1})) - gt.at({b, 1})));
      }
      expected += best / 3.0;
    }
    EXPECT_NEAR(precision_loss(c, gt).item(), expected, 1e-5);
  }
}

TEST(Precision, TieGoesToLowestIndex) {
  const Tensor c = Tensor::from({1, 3, 2}, {1, 0, -1, 0, 0, 1}, true);
  const Tensor gt = Tensor::from({1, 2}, {0, 0});
  EXPECT_EQ(closest_candidate(c, gt), (std::vector<std::size_t>{0}));
  const auto g = backward(precision_loss(c, gt)).of(c);
  EXPECT_NE(g[0], 0.0f);
  EXPECT_EQ(g[2], 0.0f);
  EXPECT_EQ(g[4], 0.0f);
}

TEST(Precision, TranslationInvariant) {
  Rng rng(2);
  const Tensor c = random_tensor({2, 6, 2}, rng);
  const Tensor gt = random_tensor({2, 2}, rng);
  const Tensor shift = Tensor::from({2}, {0.5f, -0.25f});
  EXPECT_NEAR(precision_loss(add(c, shift), add(gt, shift)).item(), precision_loss(c, gt).item(), 1e-6);
}

TEST(Diversity, HandCases) {
  EXPECT_EQ(diversity_loss(points({2, 3, 2, 3}), 1.0).item(), 1.0f);
  EXPECT_EQ(diversity_loss(points({0, 0, 100, 0}), 1.0).item(), 0.0f);
  const double expected = (2.0 * std::exp(-1.0) + std::exp(-2.0)) / 3.0;
  EXPECT_NEAR(diversity_loss(points({0, 0, 1, 0, 0, 1}), 1.0).item(), expected, 1e-6);
  EXPECT_NEAR(expected, 0.2904, 1e-4);
}

TEST(Diversity, RejectsBadInput) {
  EXPECT_THROW(diversity_loss(points({0, 0}), 1.0), std::invalid_argument);
  EXPECT_THROW(diversity_loss(points({0, 0, 1, 1}), 0.0), std::invalid_argument);
}

TEST(Diversity, MatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(19);
    const double sigma = rng.uniform(0.2, 3.0);
    const Tensor c = random_tensor({1, k, 2}, rng, false, -2, 2);
    EXPECT_NEAR(diversity_loss(c, sigma).item(), diversity_oracle(to_vector(c), k, sigma), 1e-6);
  }
}

TEST(Diversity, PermutationSymmetric) {
  Rng rng(4);
  const Tensor c = random_tensor({1, 7, 2}, rng);
  auto v = to_vector(c);
  std::vector<float> reversed(v.size());
  for (std::size_t k = 0; k < 7; ++k) {
    reversed[2 * k] = v[2 * (6 - k)];
    reversed[2 * k + 1] = v[2 * (6 - k) + 1];
  }
  EXPECT_NEAR(diversity_loss(c, 1.0).item(), diversity_loss(Tensor::from({1, 7, 2}, reversed), 1.0).item(),
              1e-6);
}

TEST(Diversity, DecreasesWhenAPairSeparates) {
  const float near = diversity_loss(points({0, 0, 1, 0, 5, 5}), 1.0).item();
  const float far = diversity_loss(points({0, 0, 1.5f, 0, 5, 5}), 1.0).item();
  EXPECT_LT(far, near);
}

TEST(Diversity, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor c = random_tensor({2, 6, 2}, rng, true);
  EXPECT_LT(finite_diff_check([](const Tensor& t) { return diversity_loss(t, 1.0); }, c, 1e-3), 1e-3);
}

TEST(Destination, Composition) {
  const Tensor c = points({0, 0, 1, 0, 0, 1});
  const Tensor gt = Tensor::from({1, 2}, {0, 0});
  EXPECT_NEAR(destination_loss(c, gt, LossWeights{}).item(), 29.04, 1e-2);
  LossWeights w;
  w.lambda_d = 0.0;
  Rng rng(6);
  const Tensor r = random_tensor({4, 20, 2}, rng);
  const Tensor rg = random_tensor({4, 2}, rng);
  EXPECT_EQ(destination_loss(r, rg, w).item(), precision_loss(r, rg).item());
  EXPECT_EQ(destination_loss(points({0, 0, 1000, 0}), Tensor::from({1, 2}, {0, 0}), LossWeights{}).item(),
            0.0f);
}

TEST(Recon, HandCasesAndOracle) {
  Rng rng(7);
  const Tensor a = random_tensor({3, 12, 2}, rng);
  EXPECT_EQ(recon_loss(a, a).item(), 0.0f);
  EXPECT_NEAR(recon_loss(add(a, Tensor::from({2}, {1, 0})), a).item(), 1.0, 1e-6);
  const Tensor b = random_tensor({3, 12, 2}, rng);
  double expected = 0.0;
  for (std::size_t i = 0; i < 36; ++i) {
    expected += std::hypot(double(a.data()[2 * i]) - b.data()[2 * i],
                           double(a.data()[2 * i + 1]) - b.data()[2 * i + 1]);
  }
  EXPECT_NEAR(recon_loss(a, b).item(), expected / 36.0, 1e-5);
  EXPECT_THROW(recon_loss(a, random_tensor({3, 11, 2}, rng)), std::invalid_argument);
}

TEST(KnowledgeDistillation, HandCases) {
  Rng rng(8);
  const std::size_t d = 6;
  std::vector<float> eye(d * d, 0.0f);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0f;
  const Tensor w = Tensor::from({d, d}, eye);
  const Tensor zero_b = Tensor::zeros({d});
  const Tensor teacher = random_tensor({2, 4, d}, rng);
  EXPECT_EQ(kd_feature_loss(teacher, teacher, w, zero_b).item(), 0.0f);

  double norms = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    double ss = 0.0;
    for (std::size_t i = 0; i < 4 * d; ++i) ss += std::pow(double(teacher.data()[b * 4 * d + i]), 2);
    norms += std::sqrt(ss);
  }
  EXPECT_NEAR(kd_feature_loss(teacher, random_tensor({2, 4, d}, rng), Tensor::zeros({d, d}), zero_b).item(),
              norms / 2.0, 1e-5);
}

TEST(KnowledgeDistillation, MatchesOracleAndGradients) {
  Rng rng(9);
  const std::size_t d = 5;
  const Tensor teacher = random_tensor({3, d}, rng);
  Tensor student = random_tensor({3, d}, rng, true);
  Tensor w = random_tensor({d, d}, rng, true);
  Tensor b = random_tensor({d}, rng, true);
  double expected = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double proj = b.data()[j];
      for (std::size_t i = 0; i < d; ++i) proj += double(student.data()[s * d + i]) * w.data()[i * d + j];
      ss += std::pow(double(teacher.data()[s * d + j]) - proj, 2);
    }
    expected += std::sqrt(ss) / 3.0;
  }
  EXPECT_NEAR(kd_feature_loss(teacher, student, w, b).item(), expected, 1e-5);
  const auto f = [&](const Tensor&) { return kd_feature_loss(teacher, student, w, b); };
  EXPECT_LT(finite_diff_check(f, student, 1e-3), 1e-3);
  EXPECT_LT(finite_diff_check(f, w, 1e-3), 1e-3);
  EXPECT_LT(finite_diff_check(f, b, 1e-3), 1e-3);
}

TEST(KnowledgeDistillation, RejectsBadInput) {
  Rng rng(10);
  const Tensor w = Tensor::zeros({4, 4});
  const Tensor b = Tensor::zeros({4});
  EXPECT_THROW(kd_feature_loss(random_tensor({2, 4}, rng, true), random_tensor({2, 4}, rng), w, b),
               std::invalid_argument);
  EXPECT_THROW(kd_feature_loss(random_tensor({2, 4}, rng), random_tensor({3, 4}, rng), w, b),
               std::invalid_argument);
}

TEST(TrajectoryTotal, Arithmetic) {
  const Tensor one = Tensor::scalar(1.0f);
  EXPECT_EQ(trajectory_total_loss(one, Tensor::scalar(2.0f), Tensor::scalar(4.0f), LossWeights{}).item(),
            13.0f);
  EXPECT_EQ(trajectory_total_loss(one, one, one, LossWeights{}).item(), 6.5f);
  LossWeights zero;
  zero.lambda_kd_traj = 0.0;
  zero.lambda_kd_dest = 0.0;
  EXPECT_EQ(trajectory_total_loss(Tensor::scalar(3.0f), one, one, zero).item(), 3.0f);
  EXPECT_EQ(trajectory_total_loss(Tensor::scalar(3.0f), Tensor(), Tensor(), LossWeights{}).item(), 3.0f);
}

}  // namespace
}  // namespace ppt
