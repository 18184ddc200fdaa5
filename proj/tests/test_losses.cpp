#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedanchor/losses.hpp"
#include "fedanchor/oracles.hpp"
#include "test_util.hpp"

using namespace fedanchor;
using losses::ContrastiveConfig;

TEST(Cosine, SelfSimilarity) {
  const std::vector<double> u{3, 4};
  EXPECT_DOUBLE_EQ(losses::cosine_similarity(u, u).value, 1.0);
}

TEST(Cosine, Orthogonal) {
  EXPECT_EQ(losses::cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}).value,
            0.0);
}

TEST(Cosine, Antiparallel) {
  EXPECT_DOUBLE_EQ(
      losses::cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{-2, 0}).value, -1.0);
}

TEST(Cosine, ZeroNormIsFlagged) {
  const auto s = losses::cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 2});
  EXPECT_EQ(s.value, 0.0);
  EXPECT_TRUE(s.degenerate);
  EXPECT_FALSE(
      losses::cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 2}).degenerate);
}

TEST(Contrastive, HandDerivedTwoClassCase) {
  const Matrix z = Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const std::vector<int> y{0, 0, 1, 1};
  const auto r = losses::label_contrastive_loss(z, y, {1.0});
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(r->loss, -std::log(2.0 * std::exp(1.0) / 8.0), 1e-12);
  EXPECT_NEAR(r->loss, 0.3863, 5e-5);
  EXPECT_EQ(r->contributing_classes, 2U);
}

TEST(Contrastive, RandomBatchOfSixMatchesOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = test::random_matrix(6, 4, rng);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const auto r = losses::label_contrastive_loss(z, y, {0.7});
    const auto o = oracles::contrastive_loss(z, y, 0.7);
    ASSERT_TRUE(r && o);
    EXPECT_NEAR(r->loss, *o, 1e-10);
  }
}

TEST(Contrastive, ExhaustiveLabelAssignmentsOverThreeClasses) {
  Rng rng(2);
  for (std::size_t n = 2; n <= 8; ++n) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < n; ++i) {
      combos *= 3;
    }
    const Matrix z = test::random_matrix(n, 3, rng);
    for (std::size_t code = 0; code < combos; code += (n >= 7 ? 7 : 1)) {
      std::vector<int> y(n);
      std::size_t c = code;
      for (auto& v : y) {
        v = static_cast<int>(c % 3);
        c /= 3;
      }
      for (const double tau : {0.1, 1.0, 5.0}) {
        const auto r = losses::label_contrastive_loss(z, y, {tau});
        const auto o = oracles::contrastive_loss(z, y, tau);
        ASSERT_EQ(r.has_value(), o.has_value());
        if (r) {
          EXPECT_NEAR(r->loss, *o, 1e-10);
        }
      }
    }
  }
}

TEST(Contrastive, SkippedWithoutWithinOrCrossPairs) {
  const Matrix z = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  EXPECT_FALSE(losses::label_contrastive_loss(z, std::vector<int>{0, 1, 2}, {1.0}).has_value());
  EXPECT_FALSE(losses::label_contrastive_loss(z, std::vector<int>{1, 1, 1}, {1.0}).has_value());
  EXPECT_FALSE(
      losses::label_contrastive_loss(Matrix::from_rows({{1, 0}}), std::vector<int>{0}, {1.0}));
}

TEST(Contrastive, ScaleInvariant) {
  Rng rng(3);
  const Matrix z = test::random_matrix(6, 3, rng);
  Matrix scaled = z;
  for (double& v : scaled.values()) {
    v *= 5.0;
  }
  const std::vector<int> y{0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(losses::label_contrastive_loss(z, y, {1.0})->loss,
              losses::label_contrastive_loss(scaled, y, {1.0})->loss, 1e-12);
}

TEST(Contrastive, RotationInvariant) {
  Rng rng(4);
  const Matrix z = test::random_matrix(5, 2, rng);
  const double a = 0.83;
  Matrix rotated(5, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    rotated(i, 0) = std::cos(a) * z(i, 0) - std::sin(a) * z(i, 1);
    rotated(i, 1) = std::sin(a) * z(i, 0) + std::cos(a) * z(i, 1);
  }
  const std::vector<int> y{0, 1, 0, 1, 1};
  EXPECT_NEAR(losses::label_contrastive_loss(z, y, {0.5})->loss,
              losses::label_contrastive_loss(rotated, y, {0.5})->loss, 1e-12);
}

TEST(Contrastive, TemperatureSharpensLargestPairWeight) {
  Rng rng(5);
  const Matrix z = test::random_matrix(6, 3, rng);
  // Share of the largest-similarity pair among all exp(s/tau) terms.
  double prev = 0.0;
  for (const double tau : {5.0, 1.0, 0.5, 0.1}) {
    double total = 0.0;
    double biggest = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        if (i != j) {
          const double w = std::exp(oracles::cosine(z.row(i), z.row(j)) / tau);
          total += w;
          biggest = std::max(biggest, w);
        }
      }
    }
    EXPECT_GT(biggest / total, prev);
    prev = biggest / total;
  }
}

TEST(Contrastive, EmbeddingGradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = test::random_matrix(5, 3, rng);
    const std::vector<int> y{0, 0, 1, 2, 1};
    const double tau = 0.3 + 0.2 * trial;
    const auto r = losses::label_contrastive_loss(z, y, {tau});
    ASSERT_TRUE(r);
    for (std::size_t k = 0; k < z.size(); ++k) {
      Matrix up = z;
      Matrix down = z;
      up.values()[k] += 1e-6;
      down.values()[k] -= 1e-6;
      const double fd = (*oracles::contrastive_loss(up, y, tau) -
                         *oracles::contrastive_loss(down, y, tau)) / 2e-6;
      EXPECT_NEAR(r->embedding_grad.values()[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Contrastive, RejectsBadTemperature) {
  EXPECT_THROW(ContrastiveConfig{0.0}.validate(), std::invalid_argument);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<double> logits(10, 0.37);
  EXPECT_NEAR(losses::cross_entropy(logits, 3).loss, 2.302585, 1e-6);
}

TEST(CrossEntropy, NoOverflowAtLargeLogits) {
  const auto r = losses::cross_entropy(std::vector<double>{1000, 0}, 0);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_GE(r.loss, 0.0);
}

TEST(CrossEntropy, MatchesDirectSoftmax) {
  const std::vector<double> logits{1, 2, 3};
  const double direct = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(losses::cross_entropy(logits, 2).loss, direct, 1e-12);
  EXPECT_NEAR(oracles::cross_entropy(logits, 2), direct, 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  const std::vector<double> logits{0.5, -1.0, 2.0};
  const auto r = losses::cross_entropy(logits, 1);
  double z = 0.0;
  for (const double l : logits) {
    z += std::exp(l);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(r.logit_grad[c], std::exp(logits[c]) / z - (c == 1 ? 1.0 : 0.0), 1e-14);
  }
}

TEST(CrossEntropy, NonNegative) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const Matrix l = test::random_matrix(1, 4, rng);
    EXPECT_GE(losses::cross_entropy(l.row(0), i % 4).loss, 0.0);
  }
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  EXPECT_THROW(losses::cross_entropy(std::vector<double>{1, 2}, 2), std::invalid_argument);
  EXPECT_THROW(losses::cross_entropy(std::vector<double>{1, 2}, -1), std::invalid_argument);
}

TEST(Mixup, LambdaOneGivesFixSample) {
  const std::vector<double> a{1.5, -2}, b{7, 8};
  const auto m = losses::mixup_pair(a, b, 1.0);
  EXPECT_EQ(m.x, a);
  EXPECT_EQ(m.lambda, 1.0);
}

TEST(Mixup, Midpoint) {
  const auto m = losses::mixup_pair(std::vector<double>{0, 0}, std::vector<double>{2, 4}, 0.5);
  EXPECT_EQ(m.x, (std::vector<double>{1, 2}));
}

TEST(Mixup, BetaMeanIsOneHalf) {
  Rng rng(8);
  const losses::MixupConfig cfg;
  double sum = 0.0;
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    const double l = losses::sample_mixup_lambda(cfg, rng);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    sum += l;
  }
  EXPECT_NEAR(sum / kDraws, 0.5, 0.01);
}

TEST(Mixup, LambdaIsNotFolded) {
  Rng rng(9);
  int below = 0;
  for (int i = 0; i < 1000; ++i) {
    below += losses::sample_mixup_lambda({}, rng) < 0.5;
  }
  EXPECT_GT(below, 400);
}

namespace {

const nn::NetworkSpec kNet{3, {5}, 3, 2};

Matrix shrink_rows(Matrix m) {
  for (double& v : m.values()) {
    v *= 0.5;
  }
  return m;
}

}  // namespace

TEST(FixLoss, IdentityAugmentationIsPlainCrossEntropy) {
  Rng rng(10);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(4, 3, rng);
  const std::vector<int> y{0, 2, 1, 1};
  const auto fix = losses::fix_loss(p, x, y);
  const auto ce = losses::classification_loss(p, x, y);
  ASSERT_TRUE(fix);
  EXPECT_EQ(fix->loss, ce.loss);
  EXPECT_EQ(fix->grads, ce.grads);
}

TEST(FixLoss, BatchOfOneIsSingleSampleCrossEntropy) {
  Rng rng(11);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(1, 3, rng);
  const std::vector<int> y{2};
  const losses::RowTransform aug = [](std::span<double> r) {
    for (double& v : r) {
      v *= 0.5;
    }
  };
  const auto fix = losses::fix_loss(p, x, y, aug);
  const auto logits = nn::forward(p, shrink_rows(x)).logits;
  EXPECT_NEAR(fix->loss, losses::cross_entropy(logits.row(0), 2).loss, 1e-14);
}

TEST(FixLoss, EmptyBatchIsSkipped) {
  const auto p = nn::init_params(kNet, 1);
  EXPECT_FALSE(losses::fix_loss(p, Matrix(0, 3), std::vector<int>{}).has_value());
}

TEST(FixLoss, GradientCheck) {
  Rng rng(12);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(4, 3, rng);
  const std::vector<int> y{0, 2, 1, 1};
  const auto fix = losses::fix_loss(p, x, y);
  const auto check = oracles::finite_difference_check(p, fix->grads, [&](const auto& q) {
    return losses::fix_loss(q, x, y)->loss;
  });
  EXPECT_LT(check.max_relative_error, 1e-4);
}

TEST(MixLoss, LambdaOneIsFixLabelCrossEntropy) {
  Rng rng(13);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(3, 3, rng);
  const std::vector<int> yf{0, 1, 2}, ym{2, 2, 0};
  EXPECT_NEAR(losses::mix_loss(p, x, 1.0, yf, ym).loss,
              losses::classification_loss(p, x, yf).loss, 1e-14);
}

TEST(MixLoss, EqualLabelsCollapse) {
  Rng rng(14);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(3, 3, rng);
  const std::vector<int> y{0, 1, 2};
  for (const double lambda : {0.0, 0.2, 0.77}) {
    EXPECT_NEAR(losses::mix_loss(p, x, lambda, y, y).loss,
                losses::classification_loss(p, x, y).loss, 1e-14);
  }
}

TEST(MixLoss, HandSetTwoClassNet) {
  nn::ModelParameters p = nn::zeros(nn::NetworkSpec{2, {2}, 2, 1});
  p.backbone[0].weight = Matrix::from_rows({{1, 0}, {0, 1}});
  p.classification_head.weight = Matrix::from_rows({{2, -1}, {-1, 1}});
  const Matrix x = Matrix::from_rows({{0.4, 0.9}});
  const std::vector<int> yf{0}, ym{1};
  const auto logits = nn::forward(p, x).logits;
  const double expected = 0.3 * oracles::cross_entropy(logits.row(0), 0) +
                          0.7 * oracles::cross_entropy(logits.row(0), 1);
  EXPECT_NEAR(losses::mix_loss(p, x, 0.3, yf, ym).loss, expected, 1e-12);
}

TEST(CombinedLoss, Arithmetic) {
  EXPECT_EQ(losses::combined_loss(0.5, 0.25, {0.75, 1.0}), 0.75);
  EXPECT_EQ(losses::combined_loss(0.5, 0.25, {0.75, 0.0}), 0.5);
}

TEST(CombinedLoss, GradientIsLinearCombination) {
  Rng rng(15);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(3, 3, rng);
  const std::vector<int> yf{0, 1, 2}, ym{1, 1, 0};
  const auto fix = *losses::fix_loss(p, x, yf);
  const auto mix = losses::mix_loss(p, x, 0.4, yf, ym);
  const auto comb = losses::combined_loss(fix, mix, {0.75, 0.6});
  EXPECT_NEAR(comb.loss, fix.loss + 0.6 * mix.loss, 1e-15);
  const auto ct = comb.grads.tensors();
  const auto ft = fix.grads.tensors();
  const auto mt = mix.grads.tensors();
  for (std::size_t t = 0; t < ct.size(); ++t) {
    for (std::size_t i = 0; i < ct[t].size(); ++i) {
      EXPECT_NEAR(ct[t][i], ft[t][i] + 0.6 * mt[t][i], 1e-15);
    }
  }
}

TEST(ContrastiveObjective, OnlyBackboneAndAnchorHeadReceiveGradient) {
  Rng rng(16);
  const auto p = test::random_params(kNet, rng);
  const Matrix x = test::random_matrix(4, 3, rng);
  const auto r = losses::contrastive_objective(p, x, std::vector<int>{0, 0, 1, 1}, {1.0});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->grads.classification_head, nn::zeros_like(p).classification_head);
  const auto check = oracles::finite_difference_check(p, r->grads, [&](const auto& q) {
    return *oracles::contrastive_loss(oracles::forward(q, x).embeddings,
                                      std::vector<int>{0, 0, 1, 1}, 1.0);
  });
  EXPECT_LT(check.max_relative_error, 1e-4);
}
