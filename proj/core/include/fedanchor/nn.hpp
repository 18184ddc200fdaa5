#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedanchor/matrix.hpp"

namespace fedanchor::nn {

/// Shape of the double-head network: a rectifier MLP backbone feeding an
/// affine classification head (num_classes logits) and an affine anchor head
/// (anchor_dim latent coordinates). Both heads read the last hidden layer.
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  std::size_t anchor_dim = 16;

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// y = x W^T + b, with W stored as (out × in).
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

/// Bit flags selecting parameter groups for partial updates.
enum class ParamGroup : unsigned {
  backbone = 1U << 0U,
  classification_head = 1U << 1U,
  anchor_head = 1U << 2U,
};

class ParamGroups {
 public:
  constexpr ParamGroups() = default;
  constexpr ParamGroups(ParamGroup g) : bits_(static_cast<unsigned>(g)) {}  // NOLINT

  static constexpr ParamGroups all() {
    return ParamGroups(ParamGroup::backbone) | ParamGroup::classification_head |
           ParamGroup::anchor_head;
  }
  /// Backbone plus the classification head: everything a cross-entropy loss reaches.
  static constexpr ParamGroups classifier() {
    return ParamGroups(ParamGroup::backbone) | ParamGroup::classification_head;
  }
  /// Backbone plus the anchor head: everything the contrastive loss reaches.
  static constexpr ParamGroups embedder() {
    return ParamGroups(ParamGroup::backbone) | ParamGroup::anchor_head;
  }

  constexpr bool contains(ParamGroup g) const { return (bits_ & static_cast<unsigned>(g)) != 0; }
  constexpr ParamGroups operator|(ParamGroups other) const {
    ParamGroups out;
    out.bits_ = bits_ | other.bits_;
    return out;
  }

 private:
  unsigned bits_ = 0;
};

/// All learnable weights of the double-head network. Also used to hold
/// gradients and momentum buffers, which share the exact same shapes.
struct ModelParameters {
  std::vector<DenseLayer> backbone;
  DenseLayer classification_head;
  DenseLayer anchor_head;

  NetworkSpec spec() const;

  /// Flat views of every tensor (weights then bias, layer by layer, then the
  /// classification head, then the anchor head) restricted to `groups`.
  std::vector<std::span<double>> tensors(ParamGroups groups = ParamGroups::all());
  std::vector<std::span<const double>> tensors(ParamGroups groups = ParamGroups::all()) const;

  bool all_finite() const;
  bool operator==(const ModelParameters&) const = default;
};

using Gradients = ModelParameters;

/// Same shapes as `like`, every entry zero.
ModelParameters zeros_like(const ModelParameters& like);

/// Zero-valued parameters for `spec`.
ModelParameters zeros(const NetworkSpec& spec);

struct OptimizerConfig {
  double learning_rate = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  ModelParameters velocity;

  static OptimizerState for_params(const ModelParameters& params) {
    return OptimizerState{zeros_like(params)};
  }
};

struct ForwardOutput {
  Matrix logits;             // batch × num_classes
  Matrix anchor_embeddings;  // batch × anchor_dim
  // activations[0] is the input batch; activations[l + 1] is the rectified
  // output of backbone layer l. The last entry feeds both heads.
  std::vector<Matrix> activations;

  std::size_t batch_size() const { return logits.rows(); }
};

/// Loss gradient at the two network outputs. An empty matrix means that head
/// receives no gradient.
struct OutputGradient {
  Matrix logits;
  Matrix anchor_embeddings;
};

/// Glorot-uniform weights, U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), zero biases.
ModelParameters init_params(const NetworkSpec& spec, std::uint64_t seed);

ForwardOutput forward(const ModelParameters& params, const Matrix& batch);

/// Exact backpropagation of `output_grad` through the network that produced `fwd`.
Gradients backward(const ModelParameters& params, const ForwardOutput& fwd,
                   const OutputGradient& output_grad);

/// Heavy-ball SGD, applied in place to the tensors in `groups` only:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - learning_rate * v
/// Tensors outside `groups` are left untouched (no decay, no momentum).
void sgd_step(ModelParameters& params, const Gradients& grads, OptimizerState& state,
              const OptimizerConfig& cfg, ParamGroups groups = ParamGroups::all());

std::size_t param_count(const ModelParameters& params);
std::size_t param_count(const NetworkSpec& spec);

/// Elementwise a += scale * b over all tensors.
void axpy(ModelParameters& a, double scale, const ModelParameters& b);

}  // namespace fedanchor::nn
