#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedanchor/matrix.hpp"
#include "fedanchor/nn.hpp"
#include "fedanchor/rng.hpp"

namespace fedanchor::losses {

struct Similarity {
  double value = 0.0;
  // Set when either vector has zero norm; value is then defined as 0.
  bool degenerate = false;
};

/// u·v / (|u| |v|).
Similarity cosine_similarity(std::span<const double> u, std::span<const double> v);

struct ContrastiveConfig {
  double temperature = 1.0;

  void validate() const;
  bool operator==(const ContrastiveConfig&) const = default;
};

struct ContrastiveResult {
  double loss = 0.0;
  Matrix embedding_grad;  // d loss / d embeddings, same shape as the input batch
  std::size_t contributing_classes = 0;
  std::size_t degenerate_pairs = 0;
};

/// Label contrastive loss over a batch of embeddings.
///
/// For each class c with at least two members in the batch:
///   l(c) = -log( sum_{i != j, y_i = y_j = c} exp(s_ij / tau)
///              / sum_{y_i != y_j}           exp(s_ij / tau) )
/// with s the cosine similarity and both sums over ordered pairs. The loss is
/// the mean of l(c) over those classes. Returns nullopt when the batch has no
/// within-class pair or no cross-class pair, in which case the loss is
/// undefined and the caller should skip the step.
std::optional<ContrastiveResult> label_contrastive_loss(const Matrix& embeddings,
                                                        std::span<const int> labels,
                                                        const ContrastiveConfig& cfg);

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> logit_grad;
};

/// -log softmax(logits)[label], via a max-shifted log-sum-exp.
CrossEntropyResult cross_entropy(std::span<const double> logits, int label);

struct MixupConfig {
  double beta_param = 0.75;     // a in Beta(a, a)
  double combine_coeff = 1.0;   // b in L_fix + b * L_mix

  void validate() const;
  bool operator==(const MixupConfig&) const = default;
};

struct MixedSample {
  std::vector<double> x;
  double lambda = 1.0;
};

/// lambda * x_fix + (1 - lambda) * x_mix for a given lambda.
MixedSample mixup_pair(std::span<const double> x_fix, std::span<const double> x_mix,
                       double lambda);

/// Same, with lambda ~ Beta(a, a). Lambda is used as drawn (no max-folding).
MixedSample mixup_pair(std::span<const double> x_fix, std::span<const double> x_mix,
                       const MixupConfig& cfg, Rng& rng);

double sample_mixup_lambda(const MixupConfig& cfg, Rng& rng);

/// In-place per-row input transformation (augmentation). Empty means identity.
using RowTransform = std::function<void(std::span<double>)>;

/// A scalar objective together with its gradient w.r.t. all model parameters.
struct LossResult {
  double loss = 0.0;
  nn::Gradients grads;
};

/// Mean cross-entropy of the classification head over a batch.
LossResult classification_loss(const nn::ModelParameters& params, const Matrix& batch,
                               std::span<const int> labels);

/// L_fix: mean cross-entropy on strongly augmented inputs against pseudo-labels.
/// Returns nullopt for an empty batch.
std::optional<LossResult> fix_loss(const nn::ModelParameters& params, const Matrix& fix_batch,
                                   std::span<const int> pseudo_labels,
                                   const RowTransform& strong_aug = {});

/// L_mix = lambda * CE(f(alpha(x_mixed)), y_fix) + (1 - lambda) * CE(f(alpha(x_mixed)), y_mix),
/// averaged over the batch, from one forward pass.
LossResult mix_loss(const nn::ModelParameters& params, const Matrix& mixed_batch, double lambda,
                    std::span<const int> fix_labels, std::span<const int> mix_labels,
                    const RowTransform& weak_aug = {});

/// L_combine = L_fix + b * L_mix.
double combined_loss(double fix, double mix, const MixupConfig& cfg);

/// Gradient-carrying form of combined_loss.
LossResult combined_loss(const LossResult& fix, const LossResult& mix, const MixupConfig& cfg);

/// Label contrastive loss of the anchor head, backpropagated to all parameters.
std::optional<LossResult> contrastive_objective(const nn::ModelParameters& params,
                                                const Matrix& batch, std::span<const int> labels,
                                                const ContrastiveConfig& cfg);

}  // namespace fedanchor::losses
