#pragma once

// Reference implementations used to check the production code paths. Every
// function here is written directly from the defining formulas with plain
// loops and shares no numerical code with the core library.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedanchor/matrix.hpp"
#include "fedanchor/nn.hpp"

namespace fedanchor::oracles {

double cosine(std::span<const double> u, std::span<const double> v);

/// Label contrastive loss by explicit enumeration of ordered pairs, no
/// exponent shifting. nullopt when no class has two members or there is no
/// cross-class pair.
std::optional<double> contrastive_loss(const Matrix& embeddings, std::span<const int> labels,
                                       double temperature);

/// Per-class mean cosine similarity of z to the rows of `anchors`.
std::vector<double> class_scores(std::span<const double> z, const Matrix& anchors,
                                 std::span<const int> anchor_labels, std::size_t num_classes);

/// First index of the maximum.
int argmax(std::span<const double> scores);

/// -log(exp(l_y) / sum exp(l_c)), evaluated literally.
double cross_entropy(std::span<const double> logits, int label);

/// Affine-rectifier forward pass written out with explicit loops.
struct Outputs {
  Matrix logits;
  Matrix embeddings;
};
Outputs forward(const nn::ModelParameters& params, const Matrix& batch);

struct GradientCheck {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries = 0;
};

/// Central differences of `loss` at every parameter entry, compared with
/// `analytic`. Relative error is |a - n| / max(|a|, |n|, floor).
GradientCheck finite_difference_check(
    const nn::ModelParameters& params, const nn::Gradients& analytic,
    const std::function<double(const nn::ModelParameters&)>& loss, double eps = 1e-5,
    double floor = 1e-6);

}  // namespace fedanchor::oracles
