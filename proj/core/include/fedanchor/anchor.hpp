#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedanchor/losses.hpp"
#include "fedanchor/matrix.hpp"
#include "fedanchor/nn.hpp"
#include "fedanchor/rng.hpp"

namespace fedanchor::anchor {

/// Anchor-head embeddings of the labeled anchor set, grouped by class.
/// Immutable once built; every class in [0, num_classes) has at least one row.
class AnchorEmbeddingTable {
 public:
  AnchorEmbeddingTable(Matrix embeddings, std::vector<int> labels, std::size_t num_classes);

  const Matrix& embeddings() const { return embeddings_; }
  std::span<const int> labels() const { return labels_; }
  std::size_t num_classes() const { return class_rows_.size(); }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return embeddings_.cols(); }
  std::span<const std::size_t> class_rows(std::size_t c) const { return class_rows_.at(c); }

 private:
  Matrix embeddings_;
  std::vector<int> labels_;
  std::vector<std::vector<std::size_t>> class_rows_;
};

struct LabelingConfig {
  double threshold = 0.6;
  std::size_t ensemble_views = 0;  // 0 disables ensembling

  void validate() const;
  bool operator==(const LabelingConfig&) const = default;
};

struct PseudoLabelRecord {
  std::size_t sample_index = 0;
  int pseudo_label = 0;
  double max_score = 0.0;
  std::vector<double> class_scores;
  bool qualifies = false;  // max_score > threshold, strictly
};

/// A (sample index, label) pair referring into a client's feature matrix.
struct LabeledIndex {
  std::size_t sample = 0;
  int label = 0;
  bool operator==(const LabeledIndex&) const = default;
};

struct FixMixDatasets {
  std::vector<LabeledIndex> fix;
  std::vector<LabeledIndex> mix;
};

AnchorEmbeddingTable compute_anchor_table(const nn::ModelParameters& params,
                                          const Matrix& anchor_features,
                                          std::span<const int> anchor_labels,
                                          std::size_t num_classes);

/// Mean cosine similarity of z to each class's anchor embeddings.
std::vector<double> per_class_avg_similarity(std::span<const double> z,
                                             const AnchorEmbeddingTable& table);

/// Argmax over class scores, ties to the smallest class id, thresholded
/// strictly at `threshold`.
PseudoLabelRecord record_from_scores(std::size_t sample_index, std::vector<double> scores,
                                     double threshold);

PseudoLabelRecord pseudo_label(std::span<const double> z, const AnchorEmbeddingTable& table,
                               double threshold = LabelingConfig{}.threshold,
                               std::size_t sample_index = 0);

/// Scores averaged over K weakly augmented views of x, then argmax.
PseudoLabelRecord ensemble_pseudo_label(std::span<const double> x,
                                        const nn::ModelParameters& params,
                                        const AnchorEmbeddingTable& table, std::size_t views,
                                        const losses::RowTransform& weak_aug,
                                        double threshold = LabelingConfig{}.threshold,
                                        std::size_t sample_index = 0);

/// Pseudo-labels every row of `features`. Uses the ensemble path when
/// cfg.ensemble_views >= 1.
std::vector<PseudoLabelRecord> label_samples(const nn::ModelParameters& params,
                                             const Matrix& features,
                                             const AnchorEmbeddingTable& table,
                                             const LabelingConfig& cfg,
                                             const losses::RowTransform& weak_aug = {});

/// Records whose max score strictly exceeds the threshold, in original order.
std::vector<LabeledIndex> build_fix_dataset(std::span<const PseudoLabelRecord> records,
                                            const LabelingConfig& cfg);

/// fix_size draws with replacement from the full pseudo-labeled pool.
std::vector<LabeledIndex> build_mix_dataset(std::span<const PseudoLabelRecord> pool,
                                            std::size_t fix_size, Rng& rng);

struct PseudoLabelAccuracy {
  double overall = 0.0;    // over all records
  double qualified = 0.0;  // over qualifying records only (0 when none)
  std::size_t total = 0;
  std::size_t qualified_count = 0;
  std::size_t correct = 0;
  std::size_t qualified_correct = 0;
};

PseudoLabelAccuracy pseudo_label_accuracy(std::span<const PseudoLabelRecord> records,
                                          std::span<const int> true_labels);

}  // namespace fedanchor::anchor
