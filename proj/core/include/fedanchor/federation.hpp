#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedanchor/anchor.hpp"
#include "fedanchor/data.hpp"
#include "fedanchor/losses.hpp"
#include "fedanchor/nn.hpp"
#include "fedanchor/rng.hpp"

namespace fedanchor::fed {

enum class Method {
  fedanchor,
  fedanchor_mix,  // server supervised epoch replaced by a mixup epoch
  prediction_threshold_baseline,
  supervised_baseline,
};

std::string_view to_string(Method m);
std::optional<Method> parse_method(std::string_view name);

/// Whether the method broadcasts the anchor embedding table to clients.
bool uses_anchor_table(Method m);

enum class AggregationWeighting {
  dataset_size,  // n_m, the client's full shard size
  trained_size,  // |D^fix_m|, the samples actually trained on
};

std::string_view to_string(AggregationWeighting w);
std::optional<AggregationWeighting> parse_weighting(std::string_view name);

struct FederationConfig {
  std::size_t rounds = 50;
  double participation_ratio = 0.1;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  Method method = Method::fedanchor;
  AggregationWeighting aggregation_weighting = AggregationWeighting::dataset_size;
  nn::OptimizerConfig client_optimizer;
  nn::OptimizerConfig server_optimizer;
  anchor::LabelingConfig labeling;
  losses::ContrastiveConfig contrastive;
  losses::MixupConfig mixup;
  data::AugmentationConfig augmentation;
  bool client_mixup_enabled = true;
  std::size_t pretrain_epochs = 5;
  double pretrain_lr = 0.05;
  double confidence_threshold = 0.95;  // prediction-threshold baseline only
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // worker threads for client updates; 1 = serial

  void validate() const;
  bool operator==(const FederationConfig&) const = default;
};

/// Raised when a loss or parameter becomes non-finite.
class NumericDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  std::optional<nn::ModelParameters> params;  // nullopt when the client skipped
  double weight_basis = 0.0;
  std::size_t shard_size = 0;
  std::size_t trained_sample_count = 0;
  std::size_t qualified_count = 0;
  std::size_t optimizer_steps = 0;
  std::vector<anchor::PseudoLabelRecord> records;  // pseudo-labels used (empty for supervised)

  bool skipped() const { return !params.has_value(); }
};

/// The immutable data a simulation runs over.
struct FederationData {
  data::Dataset anchor;
  std::vector<data::ClientShard> clients;
  data::Dataset test;
};

struct SimulationState {
  nn::ModelParameters params;
  std::size_t completed_rounds = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  double test_accuracy = 0.0;
  double pseudo_label_accuracy_anchor_head = 0.0;
  double pseudo_label_accuracy_classification_head = 0.0;
  double qualified_pseudo_label_accuracy = 0.0;  // of the method's own labeler
  double avg_qualified_samples = 0.0;
  double avg_shard_size = 0.0;
  std::size_t skipped_clients = 0;
  double server_supervised_loss = 0.0;
  double server_contrastive_loss = 0.0;
  double overhead_percent = 0.0;
  std::size_t downstream_scalars = 0;
  std::size_t upstream_scalars = 0;
  std::vector<std::size_t> participants;
};

struct ServerTrainStats {
  double supervised_loss = 0.0;
  double contrastive_loss = 0.0;
  std::size_t supervised_batches = 0;
  std::size_t contrastive_batches = 0;
  std::size_t skipped_contrastive_batches = 0;
};

/// pretrain_epochs of shuffled mini-batch SGD on anchor cross-entropy at
/// pretrain_lr (momentum and weight decay from the server optimizer).
void pretrain_server(nn::ModelParameters& params, const data::Dataset& anchor,
                     const FederationConfig& cfg, Rng& rng);

/// max(1, round(r * N)) distinct ids, uniform without replacement, sorted.
std::vector<std::size_t> select_clients(std::size_t num_clients, double ratio, std::size_t round,
                                        std::uint64_t seed);

ClientUpdate client_update_fedanchor(const nn::ModelParameters& global,
                                     const anchor::AnchorEmbeddingTable& table,
                                     const data::UnlabeledShard& shard,
                                     const FederationConfig& cfg, Rng& rng);

/// Pseudo-label = argmax softmax; qualifies when the max probability exceeds
/// cfg.confidence_threshold. Otherwise the same local training as FedAnchor.
ClientUpdate client_update_prediction_threshold(const nn::ModelParameters& global,
                                                const data::UnlabeledShard& shard,
                                                const FederationConfig& cfg, Rng& rng);

/// Upper-bound baseline: local_epochs of cross-entropy on true labels.
ClientUpdate client_update_supervised(const nn::ModelParameters& global,
                                      const data::Dataset& labeled_shard, std::size_t client_id,
                                      const FederationConfig& cfg, Rng& rng);

/// Weighted average over non-skipped updates, weights weight_basis / sum. The
/// result does not depend on the order of `updates`. Returns `fallback` when
/// no update carries positive weight.
nn::ModelParameters fedavg_aggregate(std::span<const ClientUpdate> updates,
                                     const nn::ModelParameters& fallback);

/// Server alternate training on the anchor set. fedanchor: one cross-entropy
/// epoch (backbone + classification head) then one contrastive epoch
/// (backbone + anchor head). fedanchor_mix swaps the cross-entropy epoch for a
/// mixup epoch against a shuffled copy of each batch. The prediction-threshold
/// baseline runs the cross-entropy epoch only; supervised_baseline does nothing.
ServerTrainStats server_train(nn::ModelParameters& params, const data::Dataset& anchor,
                              const FederationConfig& cfg, Rng& rng);

/// Downstream anchor-table payload as a percentage of the model size.
double communication_overhead(std::size_t anchor_count, std::size_t anchor_dim,
                              std::size_t model_param_count);

/// Fraction of `dataset` whose classification-head argmax equals the label.
double evaluate_accuracy(const nn::ModelParameters& params, const data::Dataset& dataset);

/// Argmax of the classification head for each row.
std::vector<int> predict(const nn::ModelParameters& params, const Matrix& features);

/// One communication round: build the anchor table from the current weights,
/// select clients, train them, aggregate, run server training, evaluate.
RoundMetrics run_round(const FederationData& data, SimulationState& state,
                       const FederationConfig& cfg);

}  // namespace fedanchor::fed
