#include "fedanchor/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedanchor::oracles {

double cosine(std::span<const double> u, std::span<const double> v) {
  double uv = 0.0;
  double uu = 0.0;
  double vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    uv += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  if (uu == 0.0 || vv == 0.0) {
    return 0.0;
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

std::optional<double> contrastive_loss(const Matrix& embeddings, std::span<const int> labels,
                                       double temperature) {
  const std::size_t n = embeddings.rows();
  int max_label = -1;
  for (const int y : labels) {
    max_label = std::max(max_label, y);
  }
  double cross = 0.0;
  bool any_cross = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && labels[i] != labels[j]) {
        cross += std::exp(cosine(embeddings.row(i), embeddings.row(j)) / temperature);
        any_cross = true;
      }
    }
  }
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c <= max_label; ++c) {
    double same = 0.0;
    bool any_same = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && labels[i] == c && labels[j] == c) {
          same += std::exp(cosine(embeddings.row(i), embeddings.row(j)) / temperature);
          any_same = true;
        }
      }
    }
    if (any_same) {
      total += -std::log(same / cross);
      ++classes;
    }
  }
  if (classes == 0 || !any_cross) {
    return std::nullopt;
  }
  return total / classes;
}

std::vector<double> class_scores(std::span<const double> z, const Matrix& anchors,
                                 std::span<const int> anchor_labels, std::size_t num_classes) {
  std::vector<double> scores(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < anchors.rows(); ++k) {
      if (anchor_labels[k] == static_cast<int>(c)) {
        sum += cosine(z, anchors.row(k));
        ++count;
      }
    }
    scores[c] = count == 0 ? 0.0 : sum / count;
  }
  return scores;
}

int argmax(std::span<const double> scores) {
  int best = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > scores[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

double cross_entropy(std::span<const double> logits, int label) {
  double denom = 0.0;
  for (const double l : logits) {
    denom += std::exp(l);
  }
  return -std::log(std::exp(logits[static_cast<std::size_t>(label)]) / denom);
}

namespace {

Matrix dense(const Matrix& x, const nn::DenseLayer& layer, bool rectify) {
  Matrix y(x.rows(), layer.weight.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
      double v = layer.bias[o];
      for (std::size_t k = 0; k < x.cols(); ++k) {
        v += x(i, k) * layer.weight(o, k);
      }
      y(i, o) = rectify ? std::max(v, 0.0) : v;
    }
  }
  return y;
}

}  // namespace

Outputs forward(const nn::ModelParameters& params, const Matrix& batch) {
  Matrix h = batch;
  for (const auto& layer : params.backbone) {
    h = dense(h, layer, true);
  }
  return Outputs{dense(h, params.classification_head, false),
                 dense(h, params.anchor_head, false)};
}

GradientCheck finite_difference_check(
    const nn::ModelParameters& params, const nn::Gradients& analytic,
    const std::function<double(const nn::ModelParameters&)>& loss, double eps, double floor) {
  GradientCheck result;
  nn::ModelParameters probe = params;
  auto probe_tensors = probe.tensors();
  const auto grad_tensors = analytic.tensors();
  if (probe_tensors.size() != grad_tensors.size()) {
    throw std::invalid_argument("finite_difference_check: gradient shape mismatch");
  }
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    for (std::size_t i = 0; i < probe_tensors[t].size(); ++i) {
      double& entry = probe_tensors[t][i];
      const double original = entry;
      entry = original + eps;
      const double up = loss(probe);
      entry = original - eps;
      const double down = loss(probe);
      entry = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad_tensors[t][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      result.max_relative_error = std::max(result.max_relative_error, rel_err);
      ++result.entries;
    }
  }
  return result;
}

}  // namespace fedanchor::oracles
