#include "fedanchor/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedanchor::losses {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

void check_labels(std::span<const int> labels, std::size_t rows, const char* what) {
  if (labels.size() != rows) {
    std::ostringstream msg;
    msg << what << ": " << labels.size() << " labels for " << rows << " rows";
    throw std::invalid_argument(msg.str());
  }
}

Matrix transformed(const Matrix& batch, const RowTransform& transform) {
  Matrix out = batch;
  if (transform) {
    for (std::size_t i = 0; i < out.rows(); ++i) {
      transform(out.row(i));
    }
  }
  return out;
}

}  // namespace

Similarity cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine_similarity: vectors differ in length");
  }
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) {
    return {0.0, true};
  }
  const double s = dot(u, v) / (nu * nv);
  return {std::clamp(s, -1.0, 1.0), false};
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("ContrastiveConfig: temperature must be > 0");
  }
}

std::optional<ContrastiveResult> label_contrastive_loss(const Matrix& embeddings,
                                                        std::span<const int> labels,
                                                        const ContrastiveConfig& cfg) {
  cfg.validate();
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  check_labels(labels, n, "label_contrastive_loss");
  if (n < 2) {
    return std::nullopt;
  }

  int max_label = -1;
  for (const int y : labels) {
    if (y < 0) {
      throw std::invalid_argument("label_contrastive_loss: negative label");
    }
    max_label = std::max(max_label, y);
  }
  const auto num_labels = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> members(num_labels, 0);
  for (const int y : labels) {
    ++members[static_cast<std::size_t>(y)];
  }

  // Unit vectors and norms; the gradient of s_ij w.r.t. z_i is
  // (u_j - s_ij u_i) / |z_i| with u the normalized embeddings.
  std::vector<double> norms(n);
  Matrix unit(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = embeddings.row(i);
    norms[i] = std::sqrt(dot(z, z));
    if (norms[i] > 0.0) {
      auto u = unit.row(i);
      for (std::size_t k = 0; k < d; ++k) {
        u[k] = z[k] / norms[i];
      }
    }
  }

  ContrastiveResult result;
  Matrix sim(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        s = std::clamp(dot(unit.row(i), unit.row(j)), -1.0, 1.0);
      } else {
        ++result.degenerate_pairs;
      }
      sim(i, j) = s;
      sim(j, i) = s;
    }
  }

  // Shift exponents by 1/tau (the largest possible s/tau) for stability; the
  // shift cancels in every ratio.
  const double inv_tau = 1.0 / cfg.temperature;
  std::vector<double> numerator(num_labels, 0.0);
  double denominator = 0.0;
  std::size_t cross_pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        continue;
      }
      const double e = std::exp((sim(i, j) - 1.0) * inv_tau);
      if (labels[i] == labels[j]) {
        numerator[static_cast<std::size_t>(labels[i])] += e;
      } else {
        denominator += e;
        ++cross_pairs;
      }
    }
  }

  for (std::size_t c = 0; c < num_labels; ++c) {
    if (members[c] >= 2) {
      ++result.contributing_classes;
    }
  }
  if (result.contributing_classes == 0 || cross_pairs == 0) {
    return std::nullopt;
  }
  const double inv_classes = 1.0 / static_cast<double>(result.contributing_classes);
  const double log_den = std::log(denominator);
  for (std::size_t c = 0; c < num_labels; ++c) {
    if (members[c] >= 2) {
      result.loss += inv_classes * (log_den - std::log(numerator[c]));
    }
  }

  // dL/ds_ij for each ordered pair; s_ij = s_ji so both orderings add up.
  result.embedding_grad = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) {
      continue;
    }
    auto gi = result.embedding_grad.row(i);
    const auto ui = unit.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || norms[j] == 0.0) {
        continue;
      }
      const double e = std::exp((sim(i, j) - 1.0) * inv_tau) * inv_tau;
      double dl_ds = 0.0;
      if (labels[i] == labels[j]) {
        dl_ds = -inv_classes * e / numerator[static_cast<std::size_t>(labels[i])];
      } else {
        dl_ds = e / denominator;
      }
      // Pair (i, j) and pair (j, i) contribute identically.
      const double coeff = 2.0 * dl_ds / norms[i];
      const auto uj = unit.row(j);
      const double s = sim(i, j);
      for (std::size_t k = 0; k < d; ++k) {
        gi[k] += coeff * (uj[k] - s * ui[k]);
      }
    }
  }
  return result;
}

CrossEntropyResult cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    std::ostringstream msg;
    msg << "cross_entropy: label " << label << " outside [0, " << logits.size() << ")";
    throw std::invalid_argument(msg.str());
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double l : logits) {
    sum += std::exp(l - peak);
  }
  const double log_norm = peak + std::log(sum);
  CrossEntropyResult out;
  out.loss = log_norm - logits[static_cast<std::size_t>(label)];
  out.logit_grad.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.logit_grad[c] = std::exp(logits[c] - log_norm);
  }
  out.logit_grad[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

void MixupConfig::validate() const {
  if (!(beta_param > 0.0)) {
    throw std::invalid_argument("MixupConfig: beta_param must be > 0");
  }
  if (!(combine_coeff >= 0.0)) {
    throw std::invalid_argument("MixupConfig: combine_coeff must be >= 0");
  }
}

MixedSample mixup_pair(std::span<const double> x_fix, std::span<const double> x_mix,
                       double lambda) {
  if (x_fix.size() != x_mix.size()) {
    throw std::invalid_argument("mixup_pair: inputs differ in length");
  }
  MixedSample out;
  out.lambda = lambda;
  out.x.resize(x_fix.size());
  for (std::size_t k = 0; k < x_fix.size(); ++k) {
    out.x[k] = lambda * x_fix[k] + (1.0 - lambda) * x_mix[k];
  }
  return out;
}

MixedSample mixup_pair(std::span<const double> x_fix, std::span<const double> x_mix,
                       const MixupConfig& cfg, Rng& rng) {
  return mixup_pair(x_fix, x_mix, sample_mixup_lambda(cfg, rng));
}

double sample_mixup_lambda(const MixupConfig& cfg, Rng& rng) {
  return sample_beta(cfg.beta_param, cfg.beta_param, rng);
}

LossResult classification_loss(const nn::ModelParameters& params, const Matrix& batch,
                               std::span<const int> labels) {
  check_labels(labels, batch.rows(), "classification_loss");
  if (batch.rows() == 0) {
    throw std::invalid_argument("classification_loss: empty batch");
  }
  const nn::ForwardOutput fwd = nn::forward(params, batch);
  const double inv_n = 1.0 / static_cast<double>(batch.rows());
  nn::OutputGradient og;
  og.logits = Matrix(fwd.logits.rows(), fwd.logits.cols());
  LossResult out;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const auto ce = cross_entropy(fwd.logits.row(i), labels[i]);
    out.loss += inv_n * ce.loss;
    auto g = og.logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      g[c] = inv_n * ce.logit_grad[c];
    }
  }
  out.grads = nn::backward(params, fwd, og);
  return out;
}

std::optional<LossResult> fix_loss(const nn::ModelParameters& params, const Matrix& fix_batch,
                                   std::span<const int> pseudo_labels,
                                   const RowTransform& strong_aug) {
  check_labels(pseudo_labels, fix_batch.rows(), "fix_loss");
  if (fix_batch.rows() == 0) {
    return std::nullopt;
  }
  return classification_loss(params, transformed(fix_batch, strong_aug), pseudo_labels);
}

LossResult mix_loss(const nn::ModelParameters& params, const Matrix& mixed_batch, double lambda,
                    std::span<const int> fix_labels, std::span<const int> mix_labels,
                    const RowTransform& weak_aug) {
  check_labels(fix_labels, mixed_batch.rows(), "mix_loss");
  check_labels(mix_labels, mixed_batch.rows(), "mix_loss");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mix_loss: lambda must be in [0, 1]");
  }
  if (mixed_batch.rows() == 0) {
    throw std::invalid_argument("mix_loss: empty batch");
  }
  const nn::ForwardOutput fwd = nn::forward(params, transformed(mixed_batch, weak_aug));
  const double inv_n = 1.0 / static_cast<double>(mixed_batch.rows());
  nn::OutputGradient og;
  og.logits = Matrix(fwd.logits.rows(), fwd.logits.cols());
  LossResult out;
  for (std::size_t i = 0; i < mixed_batch.rows(); ++i) {
    const auto a = cross_entropy(fwd.logits.row(i), fix_labels[i]);
    const auto b = cross_entropy(fwd.logits.row(i), mix_labels[i]);
    out.loss += inv_n * (lambda * a.loss + (1.0 - lambda) * b.loss);
    auto g = og.logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) {
      g[c] = inv_n * (lambda * a.logit_grad[c] + (1.0 - lambda) * b.logit_grad[c]);
    }
  }
  out.grads = nn::backward(params, fwd, og);
  return out;
}

double combined_loss(double fix, double mix, const MixupConfig& cfg) {
  return fix + cfg.combine_coeff * mix;
}

LossResult combined_loss(const LossResult& fix, const LossResult& mix, const MixupConfig& cfg) {
  LossResult out = fix;
  out.loss = combined_loss(fix.loss, mix.loss, cfg);
  nn::axpy(out.grads, cfg.combine_coeff, mix.grads);
  return out;
}

std::optional<LossResult> contrastive_objective(const nn::ModelParameters& params,
                                                const Matrix& batch, std::span<const int> labels,
                                                const ContrastiveConfig& cfg) {
  check_labels(labels, batch.rows(), "contrastive_objective");
  const nn::ForwardOutput fwd = nn::forward(params, batch);
  auto lc = label_contrastive_loss(fwd.anchor_embeddings, labels, cfg);
  if (!lc) {
    return std::nullopt;
  }
  nn::OutputGradient og;
  og.anchor_embeddings = std::move(lc->embedding_grad);
  return LossResult{lc->loss, nn::backward(params, fwd, og)};
}

}  // namespace fedanchor::losses
