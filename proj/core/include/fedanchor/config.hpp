#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedanchor/data.hpp"
#include "fedanchor/federation.hpp"
#include "fedanchor/nn.hpp"

namespace fedanchor::experiment {

/// Configuration problem, naming the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DatasetSource {
  std::string source = "blobs";  // "blobs" or "csv"
  std::size_t num_classes = 4;
  std::size_t dim = 16;           // blobs only; csv takes the width of the file
  std::size_t per_class = 1500;   // blobs training samples per class
  double spread = 0.345;
  std::size_t test_per_class = 500;
  std::string train_csv;
  std::string test_csv;

  bool operator==(const DatasetSource&) const = default;
};

/// Everything a run depends on. Defaults:
///
///   seed 0, output_dir "fedanchor_out", checkpoint_every 1, anchor_size 80
///   dataset: blobs, 4 classes, dim 16, 1500 per class, spread 0.345, 500 test per class
///   network: hidden_dims [32, 32], anchor_dim 16
///   partition: 20 clients, dirichlet_alpha 1000
///   federation: 50 rounds, ratio 0.1, 5 local epochs, batch 32, fedanchor,
///     dataset_size weighting, client mixup on, pretrain 5 epochs at lr 0.05,
///     confidence_threshold 0.95, 1 thread,
///     client/server optimizer lr 0.03, momentum 0.9, weight decay 5e-4
///   labeling: threshold 0.6, ensemble_views 0
///   contrastive: temperature 1.0
///   mixup: beta_param 0.75, combine_coeff 1.0
///   augmentation: weak 0.05, strong 0.2, mask 0.25
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "fedanchor_out";
  std::size_t checkpoint_every = 1;  // 0 writes only the final checkpoint
  std::size_t anchor_size = 80;
  DatasetSource dataset;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::size_t anchor_dim = 16;
  data::PartitionConfig partition;
  fed::FederationConfig federation;

  /// Cross-field validation; throws ConfigError.
  void validate() const;

  /// Network shape for an input of width `input_dim`.
  nn::NetworkSpec network_spec(std::size_t input_dim) const;

  /// Federation settings with the master seed applied.
  fed::FederationConfig federation_config() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses a JSON document. Missing keys take defaults; unknown keys and
/// invalid values raise ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Full effective configuration, every field present.
std::string to_config_text(const ExperimentConfig& cfg);

}  // namespace fedanchor::experiment
