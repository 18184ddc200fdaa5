#include "fedanchor/nn.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fedanchor/rng.hpp"

namespace fedanchor::nn {
namespace {

DenseLayer zero_layer(std::size_t in, std::size_t out) {
  return DenseLayer{Matrix(out, in), std::vector<double>(out, 0.0)};
}

DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer = zero_layer(in, out);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weight.values()) {
    w = dist(rng);
  }
  return layer;
}

// out = in * W^T + b
void affine(const Matrix& in, const DenseLayer& layer, Matrix& out) {
  const std::size_t n = in.rows();
  const std::size_t din = layer.in_dim();
  const std::size_t dout = layer.out_dim();
  out = Matrix(n, dout);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = in.row(i);
    auto y = out.row(i);
    for (std::size_t o = 0; o < dout; ++o) {
      const auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < din; ++k) {
        acc += w[k] * x[k];
      }
      y[o] = acc;
    }
  }
}

// Accumulates dW += dY^T X, db += colsum(dY), and (optionally) dX = dY W.
void affine_backward(const Matrix& in, const DenseLayer& layer, const Matrix& dout,
                     DenseLayer& grad, Matrix* din) {
  const std::size_t n = in.rows();
  const std::size_t dim_in = layer.in_dim();
  const std::size_t dim_out = layer.out_dim();
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = in.row(i);
    const auto dy = dout.row(i);
    for (std::size_t o = 0; o < dim_out; ++o) {
      const double g = dy[o];
      if (g == 0.0) {
        continue;
      }
      grad.bias[o] += g;
      auto gw = grad.weight.row(o);
      for (std::size_t k = 0; k < dim_in; ++k) {
        gw[k] += g * x[k];
      }
    }
  }
  if (din != nullptr) {
    if (din->rows() != n || din->cols() != dim_in) {
      *din = Matrix(n, dim_in);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto dy = dout.row(i);
      auto dx = din->row(i);
      for (std::size_t o = 0; o < dim_out; ++o) {
        const double g = dy[o];
        if (g == 0.0) {
          continue;
        }
        const auto w = layer.weight.row(o);
        for (std::size_t k = 0; k < dim_in; ++k) {
          dx[k] += g * w[k];
        }
      }
    }
  }
}

template <typename Params, typename Span>
std::vector<Span> collect_tensors(Params& p, ParamGroups groups) {
  std::vector<Span> out;
  auto push = [&out](auto& layer) {
    out.emplace_back(layer.weight.values());
    out.emplace_back(layer.bias);
  };
  if (groups.contains(ParamGroup::backbone)) {
    for (auto& layer : p.backbone) {
      push(layer);
    }
  }
  if (groups.contains(ParamGroup::classification_head)) {
    push(p.classification_head);
  }
  if (groups.contains(ParamGroup::anchor_head)) {
    push(p.anchor_head);
  }
  return out;
}

void check_output_grad(const Matrix& g, std::size_t rows, std::size_t cols, const char* what) {
  if (g.empty()) {
    return;
  }
  if (g.rows() != rows || g.cols() != cols) {
    std::ostringstream msg;
    msg << "backward: " << what << " gradient is " << g.rows() << "x" << g.cols()
        << ", expected " << rows << "x" << cols;
    throw std::invalid_argument(msg.str());
  }
  for (const double v : g.values()) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("backward: non-finite ") + what + " gradient");
    }
  }
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_dim == 0 || num_classes == 0 || anchor_dim == 0) {
    throw std::invalid_argument("NetworkSpec: input_dim, num_classes and anchor_dim must be >= 1");
  }
  if (hidden_dims.empty()) {
    throw std::invalid_argument("NetworkSpec: hidden_dims must contain at least one layer");
  }
  for (const std::size_t h : hidden_dims) {
    if (h == 0) {
      throw std::invalid_argument("NetworkSpec: hidden layer widths must be >= 1");
    }
  }
}

NetworkSpec ModelParameters::spec() const {
  NetworkSpec s;
  s.input_dim = backbone.empty() ? 0 : backbone.front().in_dim();
  for (const auto& layer : backbone) {
    s.hidden_dims.push_back(layer.out_dim());
  }
  s.num_classes = classification_head.out_dim();
  s.anchor_dim = anchor_head.out_dim();
  return s;
}

std::vector<std::span<double>> ModelParameters::tensors(ParamGroups groups) {
  return collect_tensors<ModelParameters, std::span<double>>(*this, groups);
}

std::vector<std::span<const double>> ModelParameters::tensors(ParamGroups groups) const {
  return collect_tensors<const ModelParameters, std::span<const double>>(*this, groups);
}

bool ModelParameters::all_finite() const {
  for (const auto t : tensors()) {
    for (const double v : t) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

ModelParameters zeros_like(const ModelParameters& like) {
  ModelParameters out = like;
  for (auto t : out.tensors()) {
    std::fill(t.begin(), t.end(), 0.0);
  }
  return out;
}

ModelParameters zeros(const NetworkSpec& spec) {
  spec.validate();
  ModelParameters p;
  std::size_t in = spec.input_dim;
  for (const std::size_t h : spec.hidden_dims) {
    p.backbone.push_back(zero_layer(in, h));
    in = h;
  }
  p.classification_head = zero_layer(in, spec.num_classes);
  p.anchor_head = zero_layer(in, spec.anchor_dim);
  return p;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("OptimizerConfig: learning_rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("OptimizerConfig: momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("OptimizerConfig: weight_decay must be >= 0");
  }
}

ModelParameters init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed, {stream::init});
  ModelParameters p;
  std::size_t in = spec.input_dim;
  for (const std::size_t h : spec.hidden_dims) {
    p.backbone.push_back(glorot_layer(in, h, rng));
    in = h;
  }
  p.classification_head = glorot_layer(in, spec.num_classes, rng);
  p.anchor_head = glorot_layer(in, spec.anchor_dim, rng);
  return p;
}

ForwardOutput forward(const ModelParameters& params, const Matrix& batch) {
  if (params.backbone.empty()) {
    throw std::invalid_argument("forward: network has no backbone layers");
  }
  const std::size_t expected = params.backbone.front().in_dim();
  if (batch.cols() != expected) {
    std::ostringstream msg;
    msg << "forward: batch has " << batch.cols() << " columns, network expects " << expected;
    throw std::invalid_argument(msg.str());
  }
  ForwardOutput out;
  out.activations.reserve(params.backbone.size() + 1);
  out.activations.push_back(batch);
  for (const auto& layer : params.backbone) {
    Matrix h;
    affine(out.activations.back(), layer, h);
    for (double& v : h.values()) {
      v = v > 0.0 ? v : 0.0;
    }
    out.activations.push_back(std::move(h));
  }
  affine(out.activations.back(), params.classification_head, out.logits);
  affine(out.activations.back(), params.anchor_head, out.anchor_embeddings);
  return out;
}

Gradients backward(const ModelParameters& params, const ForwardOutput& fwd,
                   const OutputGradient& output_grad) {
  const std::size_t n = fwd.batch_size();
  check_output_grad(output_grad.logits, n, params.classification_head.out_dim(), "logit");
  check_output_grad(output_grad.anchor_embeddings, n, params.anchor_head.out_dim(),
                    "anchor embedding");

  Gradients grads = zeros_like(params);
  const Matrix& top = fwd.activations.back();
  Matrix dh(n, top.cols());
  if (!output_grad.logits.empty()) {
    affine_backward(top, params.classification_head, output_grad.logits,
                    grads.classification_head, &dh);
  }
  if (!output_grad.anchor_embeddings.empty()) {
    affine_backward(top, params.anchor_head, output_grad.anchor_embeddings, grads.anchor_head,
                    &dh);
  }
  for (std::size_t l = params.backbone.size(); l-- > 0;) {
    // Rectifier derivative: pass gradient where the unit was active.
    const Matrix& post = fwd.activations[l + 1];
    auto dv = dh.values();
    const auto pv = post.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (pv[i] <= 0.0) {
        dv[i] = 0.0;
      }
    }
    Matrix dprev;
    Matrix* dprev_ptr = nullptr;
    if (l > 0) {
      dprev = Matrix(n, fwd.activations[l].cols());
      dprev_ptr = &dprev;
    }
    affine_backward(fwd.activations[l], params.backbone[l], dh, grads.backbone[l], dprev_ptr);
    if (l > 0) {
      dh = std::move(dprev);
    }
  }
  return grads;
}

void sgd_step(ModelParameters& params, const Gradients& grads, OptimizerState& state,
              const OptimizerConfig& cfg, ParamGroups groups) {
  auto p = params.tensors(groups);
  const auto g = grads.tensors(groups);
  auto v = state.velocity.tensors(groups);
  if (p.size() != g.size() || p.size() != v.size()) {
    throw std::invalid_argument("sgd_step: parameter, gradient and state shapes differ");
  }
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t].size() != g[t].size() || p[t].size() != v[t].size()) {
      throw std::invalid_argument("sgd_step: parameter, gradient and state shapes differ");
    }
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      v[t][i] = cfg.momentum * v[t][i] + g[t][i] + cfg.weight_decay * p[t][i];
      p[t][i] -= cfg.learning_rate * v[t][i];
    }
  }
}

std::size_t param_count(const ModelParameters& params) {
  std::size_t total = 0;
  for (const auto t : params.tensors()) {
    total += t.size();
  }
  return total;
}

std::size_t param_count(const NetworkSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  std::size_t in = spec.input_dim;
  for (const std::size_t h : spec.hidden_dims) {
    total += in * h + h;
    in = h;
  }
  total += in * spec.num_classes + spec.num_classes;
  total += in * spec.anchor_dim + spec.anchor_dim;
  return total;
}

void axpy(ModelParameters& a, double scale, const ModelParameters& b) {
  auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) {
    throw std::invalid_argument("axpy: shape mismatch");
  }
  for (std::size_t t = 0; t < ta.size(); ++t) {
    if (ta[t].size() != tb[t].size()) {
      throw std::invalid_argument("axpy: shape mismatch");
    }
    for (std::size_t i = 0; i < ta[t].size(); ++i) {
      ta[t][i] += scale * tb[t][i];
    }
  }
}

}  // namespace fedanchor::nn
