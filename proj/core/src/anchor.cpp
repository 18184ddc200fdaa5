#include "fedanchor/anchor.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace fedanchor::anchor {

AnchorEmbeddingTable::AnchorEmbeddingTable(Matrix embeddings, std::vector<int> labels,
                                           std::size_t num_classes)
    : embeddings_(std::move(embeddings)), labels_(std::move(labels)), class_rows_(num_classes) {
  if (labels_.empty()) {
    throw std::invalid_argument("AnchorEmbeddingTable: anchor set is empty");
  }
  if (labels_.size() != embeddings_.rows()) {
    throw std::invalid_argument("AnchorEmbeddingTable: labels and embeddings differ in length");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const int y = labels_[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      std::ostringstream msg;
      msg << "AnchorEmbeddingTable: anchor " << i << " has label " << y << " outside [0, "
          << num_classes << ")";
      throw std::invalid_argument(msg.str());
    }
    class_rows_[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (class_rows_[c].empty()) {
      std::ostringstream msg;
      msg << "AnchorEmbeddingTable: class " << c << " has no anchors";
      throw std::invalid_argument(msg.str());
    }
  }
}

void LabelingConfig::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    std::ostringstream msg;
    msg << "LabelingConfig: threshold " << threshold << " outside [0,1]";
    throw std::invalid_argument(msg.str());
  }
}

AnchorEmbeddingTable compute_anchor_table(const nn::ModelParameters& params,
                                          const Matrix& anchor_features,
                                          std::span<const int> anchor_labels,
                                          std::size_t num_classes) {
  if (anchor_features.rows() == 0) {
    throw std::invalid_argument("compute_anchor_table: anchor set is empty");
  }
  nn::ForwardOutput fwd = nn::forward(params, anchor_features);
  return AnchorEmbeddingTable(std::move(fwd.anchor_embeddings),
                              std::vector<int>(anchor_labels.begin(), anchor_labels.end()),
                              num_classes);
}

std::vector<double> per_class_avg_similarity(std::span<const double> z,
                                             const AnchorEmbeddingTable& table) {
  if (z.size() != table.dim()) {
    throw std::invalid_argument("per_class_avg_similarity: query dimension mismatch");
  }
  std::vector<double> scores(table.num_classes(), 0.0);
  for (std::size_t c = 0; c < table.num_classes(); ++c) {
    const auto rows = table.class_rows(c);
    double sum = 0.0;
    for (const std::size_t r : rows) {
      sum += losses::cosine_similarity(z, table.embeddings().row(r)).value;
    }
    scores[c] = sum / static_cast<double>(rows.size());
  }
  return scores;
}

PseudoLabelRecord record_from_scores(std::size_t sample_index, std::vector<double> scores,
                                     double threshold) {
  if (scores.empty()) {
    throw std::invalid_argument("record_from_scores: no classes");
  }
  PseudoLabelRecord rec;
  rec.sample_index = sample_index;
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) {
      best = c;
    }
  }
  rec.pseudo_label = static_cast<int>(best);
  rec.max_score = scores[best];
  rec.qualifies = rec.max_score > threshold;
  rec.class_scores = std::move(scores);
  return rec;
}

PseudoLabelRecord pseudo_label(std::span<const double> z, const AnchorEmbeddingTable& table,
                               double threshold, std::size_t sample_index) {
  return record_from_scores(sample_index, per_class_avg_similarity(z, table), threshold);
}

PseudoLabelRecord ensemble_pseudo_label(std::span<const double> x,
                                        const nn::ModelParameters& params,
                                        const AnchorEmbeddingTable& table, std::size_t views,
                                        const losses::RowTransform& weak_aug, double threshold,
                                        std::size_t sample_index) {
  if (views == 0) {
    throw std::invalid_argument("ensemble_pseudo_label: need at least one view");
  }
  Matrix batch(views, x.size());
  for (std::size_t k = 0; k < views; ++k) {
    auto row = batch.row(k);
    std::copy(x.begin(), x.end(), row.begin());
    if (weak_aug) {
      weak_aug(row);
    }
  }
  const nn::ForwardOutput fwd = nn::forward(params, batch);
  std::vector<double> mean(table.num_classes(), 0.0);
  for (std::size_t k = 0; k < views; ++k) {
    const auto s = per_class_avg_similarity(fwd.anchor_embeddings.row(k), table);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] += s[c];
    }
  }
  for (double& m : mean) {
    m /= static_cast<double>(views);
  }
  return record_from_scores(sample_index, std::move(mean), threshold);
}

std::vector<PseudoLabelRecord> label_samples(const nn::ModelParameters& params,
                                             const Matrix& features,
                                             const AnchorEmbeddingTable& table,
                                             const LabelingConfig& cfg,
                                             const losses::RowTransform& weak_aug) {
  std::vector<PseudoLabelRecord> records;
  records.reserve(features.rows());
  if (features.rows() == 0) {
    return records;
  }
  if (cfg.ensemble_views >= 1) {
    for (std::size_t i = 0; i < features.rows(); ++i) {
      records.push_back(ensemble_pseudo_label(features.row(i), params, table,
                                              cfg.ensemble_views, weak_aug, cfg.threshold, i));
    }
    return records;
  }
  const nn::ForwardOutput fwd = nn::forward(params, features);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    records.push_back(pseudo_label(fwd.anchor_embeddings.row(i), table, cfg.threshold, i));
  }
  return records;
}

std::vector<LabeledIndex> build_fix_dataset(std::span<const PseudoLabelRecord> records,
                                            const LabelingConfig& cfg) {
  std::vector<LabeledIndex> fix;
  for (const auto& rec : records) {
    if (rec.max_score > cfg.threshold) {
      fix.push_back({rec.sample_index, rec.pseudo_label});
    }
  }
  return fix;
}

std::vector<LabeledIndex> build_mix_dataset(std::span<const PseudoLabelRecord> pool,
                                            std::size_t fix_size, Rng& rng) {
  std::vector<LabeledIndex> mix;
  if (fix_size == 0) {
    return mix;
  }
  if (pool.empty()) {
    throw std::invalid_argument("build_mix_dataset: empty pool with non-empty fix dataset");
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  mix.reserve(fix_size);
  for (std::size_t k = 0; k < fix_size; ++k) {
    const auto& rec = pool[pick(rng)];
    mix.push_back({rec.sample_index, rec.pseudo_label});
  }
  return mix;
}

PseudoLabelAccuracy pseudo_label_accuracy(std::span<const PseudoLabelRecord> records,
                                          std::span<const int> true_labels) {
  PseudoLabelAccuracy acc;
  for (const auto& rec : records) {
    if (rec.sample_index >= true_labels.size()) {
      throw std::invalid_argument("pseudo_label_accuracy: record index outside label range");
    }
    const bool hit = rec.pseudo_label == true_labels[rec.sample_index];
    ++acc.total;
    acc.correct += hit ? 1 : 0;
    if (rec.qualifies) {
      ++acc.qualified_count;
      acc.qualified_correct += hit ? 1 : 0;
    }
  }
  if (acc.total > 0) {
    acc.overall = static_cast<double>(acc.correct) / static_cast<double>(acc.total);
  }
  if (acc.qualified_count > 0) {
    acc.qualified =
        static_cast<double>(acc.qualified_correct) / static_cast<double>(acc.qualified_count);
  }
  return acc;
}

}  // namespace fedanchor::anchor
