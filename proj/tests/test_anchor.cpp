#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fedanchor/anchor.hpp"
#include "fedanchor/data.hpp"
#include "fedanchor/oracles.hpp"
#include "test_util.hpp"

using namespace fedanchor;
using anchor::AnchorEmbeddingTable;
using anchor::PseudoLabelRecord;

namespace {

AnchorEmbeddingTable random_table(std::size_t rows, std::size_t classes, std::size_t dim, Rng& rng) {
  std::vector<int> labels(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    labels[i] = static_cast<int>(i < classes ? i : rng() % classes);
  }
  std::shuffle(labels.begin(), labels.end(), rng);
  return {test::random_matrix(rows, dim, rng), labels, classes};
}

std::vector<PseudoLabelRecord> records_with_scores(std::initializer_list<double> max_scores,
                                                   double threshold) {
  std::vector<PseudoLabelRecord> out;
  std::size_t i = 0;
  for (const double s : max_scores) {
    out.push_back(anchor::record_from_scores(i++, {s, 0.0}, threshold));
  }
  return out;
}

}  // namespace

TEST(AnchorTable, RowsPartitionedByClass) {
  Rng rng(1);
  const auto p = nn::init_params({3, {4}, 3, 2}, 1);
  const Matrix x = test::random_matrix(7, 3, rng);
  const std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
  const auto t = anchor::compute_anchor_table(p, x, y, 3);
  EXPECT_EQ(t.size(), 7U);
  std::size_t total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (const std::size_t r : t.class_rows(c)) {
      EXPECT_EQ(t.labels()[r], static_cast<int>(c));
    }
    total += t.class_rows(c).size();
  }
  EXPECT_EQ(total, 7U);
}

TEST(AnchorTable, PureInParamsAndAnchors) {
  Rng rng(2);
  const auto p = nn::init_params({3, {4}, 2, 2}, 1);
  const Matrix x = test::random_matrix(4, 3, rng);
  const std::vector<int> y{0, 1, 0, 1};
  EXPECT_EQ(anchor::compute_anchor_table(p, x, y, 2).embeddings(),
            anchor::compute_anchor_table(p, x, y, 2).embeddings());
}

TEST(AnchorTable, HandSetNetwork) {
  nn::ModelParameters p = nn::zeros(nn::NetworkSpec{2, {2}, 2, 2});
  p.backbone[0].weight = Matrix::from_rows({{1, 0}, {0, 1}});
  p.anchor_head.weight = Matrix::from_rows({{1, 1}, {2, -1}});
  p.anchor_head.bias = {0.5, 0.0};
  const Matrix x = Matrix::from_rows({{1, 2}, {3, 0}, {0.5, 0.25}});
  const auto t = anchor::compute_anchor_table(p, x, std::vector<int>{0, 1, 1}, 2);
  const Matrix expected = Matrix::from_rows({{3.5, 0.0}, {3.5, 6.0}, {1.25, 0.75}});
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(t.embeddings().values()[i], expected.values()[i], 1e-12);
  }
}

TEST(AnchorTable, MissingClassRejected) {
  EXPECT_THROW(AnchorEmbeddingTable(Matrix(2, 2, 1.0), {0, 0}, 2), std::invalid_argument);
  EXPECT_THROW(AnchorEmbeddingTable(Matrix(0, 2), {}, 1), std::invalid_argument);
}

TEST(ClassScores, SelfSimilarityAtOwnClass) {
  const AnchorEmbeddingTable t(Matrix::from_rows({{1, 0}, {0, 1}, {-1, 1}}), {0, 1, 2}, 3);
  const std::vector<double> z{-1, 1};
  EXPECT_DOUBLE_EQ(anchor::per_class_avg_similarity(z, t)[2], 1.0);
}

TEST(ClassScores, TwoTermMean) {
  const AnchorEmbeddingTable t(Matrix::from_rows({{1, 0}, {0, 1}}), {0, 0}, 1);
  EXPECT_DOUBLE_EQ(anchor::per_class_avg_similarity(std::vector<double>{1, 0}, t)[0], 0.5);
}

TEST(ClassScores, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_table(12, 3, 4, rng);
    const Matrix z = test::random_matrix(1, 4, rng);
    const auto got = anchor::per_class_avg_similarity(z.row(0), t);
    const auto want = oracles::class_scores(z.row(0), t.embeddings(), t.labels(), 3);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(got[c], want[c], 1e-12);
    }
  }
}

TEST(ClassScores, InvariantUnderAnchorPermutation) {
  Rng rng(4);
  const auto t = random_table(10, 4, 3, rng);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> labels(10);
  for (std::size_t i = 0; i < 10; ++i) {
    labels[i] = t.labels()[perm[i]];
  }
  const AnchorEmbeddingTable shuffled(t.embeddings().select_rows(perm), labels, 4);
  for (int q = 0; q < 20; ++q) {
    const Matrix z = test::random_matrix(1, 3, rng);
    const auto a = anchor::per_class_avg_similarity(z.row(0), t);
    const auto b = anchor::per_class_avg_similarity(z.row(0), shuffled);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(a[c], b[c], 1e-15);
    }
  }
}

TEST(PseudoLabel, Argmax) {
  const auto r = anchor::record_from_scores(0, {0.2, 0.9, 0.1}, 0.6);
  EXPECT_EQ(r.pseudo_label, 1);
  EXPECT_EQ(r.max_score, 0.9);
  EXPECT_TRUE(r.qualifies);
}

TEST(PseudoLabel, TieGoesToSmallestClass) {
  const auto r = anchor::record_from_scores(0, {0.5, 0.5, 0.1}, 0.6);
  EXPECT_EQ(r.pseudo_label, 0);
  EXPECT_FALSE(r.qualifies);
}

TEST(PseudoLabel, StrictThreshold) {
  EXPECT_FALSE(anchor::record_from_scores(0, {0.6, 0.1}, 0.6).qualifies);
  EXPECT_TRUE(anchor::record_from_scores(0, {0.6000001, 0.1}, 0.6).qualifies);
}

TEST(PseudoLabel, MatchesOracleOnRandomPoints) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 1 + rng() % 4;
    const auto t = random_table(c + rng() % 7, c, 3, rng);
    for (int q = 0; q < 20; ++q) {
      const Matrix z = test::random_matrix(1, 3, rng);
      const auto rec = anchor::pseudo_label(z.row(0), t);
      const auto scores = oracles::class_scores(z.row(0), t.embeddings(), t.labels(), c);
      EXPECT_EQ(rec.pseudo_label, oracles::argmax(scores));
      for (std::size_t k = 0; k < c; ++k) {
        EXPECT_NEAR(rec.class_scores[k], scores[k], 1e-12);
      }
    }
  }
}

TEST(PseudoLabel, ScaleInvariantInQuery) {
  Rng rng(6);
  const auto t = random_table(9, 3, 4, rng);
  for (int q = 0; q < 20; ++q) {
    Matrix z = test::random_matrix(1, 4, rng);
    const auto a = anchor::pseudo_label(z.row(0), t);
    for (double& v : z.values()) {
      v *= 8.0;
    }
    const auto b = anchor::pseudo_label(z.row(0), t);
    EXPECT_EQ(a.pseudo_label, b.pseudo_label);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(a.class_scores[k], b.class_scores[k], 1e-14);
    }
  }
}

TEST(FixDataset, StrictComparison) {
  const auto recs = records_with_scores({0.7, 0.2}, 0.6);
  const auto fix = anchor::build_fix_dataset(recs, {0.6, 0});
  ASSERT_EQ(fix.size(), 1U);
  EXPECT_EQ(fix[0].sample, 0U);
  EXPECT_TRUE(anchor::build_fix_dataset(records_with_scores({0.7, 0.2}, 0.75), {0.75, 0}).empty());
}

TEST(FixDataset, Saturation) {
  const auto recs = records_with_scores({0.9, 0.8, 0.95}, 0.6);
  EXPECT_EQ(anchor::build_fix_dataset(recs, {0.6, 0}).size(), 3U);
}

TEST(FixDataset, RaisingThresholdNeverAdds) {
  Rng rng(7);
  std::vector<PseudoLabelRecord> recs;
  for (std::size_t i = 0; i < 50; ++i) {
    recs.push_back(anchor::record_from_scores(i, {sample_uniform01(rng), 0.0}, 0.0));
  }
  std::size_t prev = recs.size() + 1;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const auto fix = anchor::build_fix_dataset(recs, {t, 0});
    EXPECT_LE(fix.size(), prev);
    for (const auto& e : fix) {
      EXPECT_GT(recs[e.sample].max_score, t);
    }
    prev = fix.size();
  }
}

TEST(MixDataset, EmptyForZeroFix) {
  Rng rng(8);
  EXPECT_TRUE(anchor::build_mix_dataset(records_with_scores({0.1}, 0.6), 0, rng).empty());
}

TEST(MixDataset, ForcedReplacement) {
  Rng rng(9);
  const auto mix = anchor::build_mix_dataset(records_with_scores({0.1}, 0.6), 3, rng);
  ASSERT_EQ(mix.size(), 3U);
  for (const auto& e : mix) {
    EXPECT_EQ(e.sample, 0U);
  }
}

TEST(MixDataset, ReproducibleAndDrawnFromFullPool) {
  const auto pool = records_with_scores({0.1, 0.9, 0.2, 0.3, 0.95}, 0.6);
  Rng a(10), b(10);
  const auto m1 = anchor::build_mix_dataset(pool, 5, a);
  const auto m2 = anchor::build_mix_dataset(pool, 5, b);
  EXPECT_EQ(m1, m2);
  // Over many draws non-qualifying samples must show up too.
  Rng c(11);
  const auto many = anchor::build_mix_dataset(pool, 500, c);
  EXPECT_TRUE(std::any_of(many.begin(), many.end(), [](const auto& e) { return e.sample == 0; }));
}

TEST(MixDataset, SizeEqualsFix) {
  Rng rng(12);
  const auto recs = records_with_scores({0.7, 0.2, 0.8, 0.61, 0.3}, 0.6);
  const auto fix = anchor::build_fix_dataset(recs, {0.6, 0});
  EXPECT_EQ(anchor::build_mix_dataset(recs, fix.size(), rng).size(), fix.size());
}

TEST(Ensemble, IdentityAugmentationMatchesPlainLabel) {
  Rng rng(13);
  const auto p = nn::init_params({3, {5}, 3, 3}, 2);
  const Matrix anchors_x = test::random_matrix(6, 3, rng);
  const auto t = anchor::compute_anchor_table(p, anchors_x, std::vector<int>{0, 1, 2, 0, 1, 2}, 3);
  for (int q = 0; q < 10; ++q) {
    const Matrix x = test::random_matrix(1, 3, rng);
    const auto z = nn::forward(p, x).anchor_embeddings;
    const auto plain = anchor::pseudo_label(z.row(0), t);
    for (const std::size_t k : {1U, 3U}) {
      const auto ens = anchor::ensemble_pseudo_label(x.row(0), p, t, k, {});
      EXPECT_EQ(ens.pseudo_label, plain.pseudo_label);
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(ens.class_scores[c], plain.class_scores[c], 1e-15);
      }
    }
  }
}

TEST(Ensemble, StableUnderSmallJitter) {
  const data::Dataset blobs = data::generate_blobs(3, 4, 30, 0.05, 1);
  nn::ModelParameters p = nn::init_params({4, {8}, 3, 4}, 3);
  const auto t = anchor::compute_anchor_table(p, blobs.features, blobs.labels, 3);
  const std::vector<double> x = data::blob_center(1, 4);
  const auto z = nn::forward(p, Matrix::from_rows({{x[0], x[1], x[2], x[3]}})).anchor_embeddings;
  const int reference = anchor::pseudo_label(z.row(0), t).pseudo_label;
  Rng rng(14);
  const data::AugmentationConfig aug{0.01, 0.0, 0.0};
  const losses::RowTransform jitter = [&](std::span<double> v) { data::weak_augment(v, aug, rng); };
  int same = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    same += anchor::ensemble_pseudo_label(x, p, t, 5, jitter).pseudo_label == reference;
  }
  EXPECT_GE(same, 990);
}

TEST(Ensemble, RejectsZeroViews) {
  const AnchorEmbeddingTable t(Matrix::from_rows({{1, 0}}), {0}, 1);
  const auto p = nn::init_params({2, {2}, 1, 2}, 0);
  EXPECT_THROW(anchor::ensemble_pseudo_label(std::vector<double>{1, 1}, p, t, 0, {}),
               std::invalid_argument);
}

TEST(PseudoLabelAccuracy, Counting) {
  std::vector<PseudoLabelRecord> recs;
  for (std::size_t i = 0; i < 4; ++i) {
    recs.push_back(anchor::record_from_scores(i, {i == 3 ? 0.0 : 0.9, i == 3 ? 0.9 : 0.1}, 0.6));
  }
  // Labels 0,0,0,1.
  EXPECT_EQ(anchor::pseudo_label_accuracy(recs, std::vector<int>{0, 0, 0, 1}).overall, 1.0);
  EXPECT_EQ(anchor::pseudo_label_accuracy(recs, std::vector<int>{1, 1, 1, 0}).overall, 0.0);
  const auto acc = anchor::pseudo_label_accuracy(recs, std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(acc.overall, 0.75);
  EXPECT_EQ(acc.qualified_count, 4U);
  EXPECT_EQ(acc.qualified, 0.75);
}

TEST(LabelingConfig, Validation) {
  EXPECT_THROW((anchor::LabelingConfig{1.5, 0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((anchor::LabelingConfig{0.6, 3}.validate()));
}
