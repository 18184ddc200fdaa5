#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedanchor/checkpoint.hpp"
#include "fedanchor/config.hpp"
#include "fedanchor/federation.hpp"
#include "fedanchor/metrics.hpp"

namespace fedanchor::experiment {

/// Datasets and partition derived deterministically from a config.
struct PreparedData {
  fed::FederationData federation;
  std::vector<std::size_t> anchor_indices;  // into the training set
  std::vector<std::size_t> pool_indices;    // into the training set
  nn::NetworkSpec network;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

/// init_params followed by server pretraining on the anchor set.
nn::ModelParameters initial_model(const ExperimentConfig& cfg, const PreparedData& data);

struct RunOptions {
  std::optional<std::size_t> rounds;         // overrides federation.rounds
  std::optional<std::filesystem::path> out_dir;
  bool serial = false;                       // forces one worker thread
  std::optional<std::filesystem::path> resume_from;
  bool write_files = true;
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<fed::RoundMetrics> rounds;  // every row of metrics.csv, including resumed ones
  Summary summary;
  nn::ModelParameters final_params;
};

/// Runs the configured experiment. With write_files, the output directory gets
/// effective_config.json, partition.json, metrics.csv, summary.json and
/// checkpoints/round_NNNN.ckpt. Throws ConfigError for invalid settings,
/// fed::NumericDivergence on divergence and std::runtime_error on I/O failure.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// JSON manifest: anchor indices and, per client, its sample indices into the
/// pool and into the training set.
std::string partition_manifest(const ExperimentConfig& cfg, const PreparedData& data);

/// Writes embeddings_round_NNNN.csv next to the checkpoints: one row per test
/// sample, "sample_id,true_label,z_0,...,z_{k-1}" at %.17g. Returns its path.
std::filesystem::path dump_embeddings(const ExperimentConfig& cfg, std::size_t round,
                                      const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace fedanchor::experiment
