#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedanchor/matrix.hpp"
#include "fedanchor/rng.hpp"

namespace fedanchor::data {

struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Center of blob class c: +e_c for c < d, -e_{c-d} for c < 2d, and beyond that
/// a fixed pseudo-random unit direction. Depends only on (c, d).
std::vector<double> blob_center(std::size_t c, std::size_t dim);

/// per_class samples around each of num_classes centers, isotropic Gaussian
/// with standard deviation `spread`. Samples are emitted class by class.
Dataset generate_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed);

struct AnchorSplit {
  Dataset anchor;
  Dataset pool;
  std::vector<std::size_t> anchor_indices;  // into the source dataset
  std::vector<std::size_t> pool_indices;
};

/// Stratified random split: every class gets floor(S/C) or ceil(S/C) anchors
/// (capped by the class's size), the rest goes to the pool.
AnchorSplit split_anchor(const Dataset& dataset, std::size_t anchor_size, std::uint64_t seed);

struct PartitionConfig {
  std::size_t num_clients = 20;
  double dirichlet_alpha = 1000.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const PartitionConfig&) const = default;
};

/// What training code sees of a client: features only.
struct UnlabeledShard {
  std::size_t client_id = 0;
  Matrix features;
  std::vector<std::size_t> pool_indices;  // provenance, for manifests

  std::size_t size() const { return features.rows(); }
};

class ClientShard;

namespace diagnostics {
/// The only route to a shard's ground truth. Training entry points take an
/// UnlabeledShard and therefore cannot reach it.
std::span<const int> hidden_labels(const ClientShard& shard);
}  // namespace diagnostics

class ClientShard {
 public:
  ClientShard(UnlabeledShard view, std::vector<int> hidden_labels);

  const UnlabeledShard& unlabeled() const { return view_; }
  std::size_t client_id() const { return view_.client_id; }
  std::size_t size() const { return view_.size(); }

 private:
  friend std::span<const int> diagnostics::hidden_labels(const ClientShard& shard);

  UnlabeledShard view_;
  std::vector<int> hidden_labels_;
};

/// Per class, p ~ Dirichlet(alpha * 1_N) over clients; the class's shuffled
/// samples are cut into consecutive runs of sizes proportional to p.
std::vector<ClientShard> lda_partition(const Dataset& pool, const PartitionConfig& cfg);

struct AugmentationConfig {
  double weak_jitter_sigma = 0.05;
  double strong_jitter_sigma = 0.2;
  double strong_mask_fraction = 0.25;

  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

/// x += N(0, weak_jitter_sigma^2) per coordinate.
void weak_augment(std::span<double> x, const AugmentationConfig& cfg, Rng& rng);

/// Jitter at strong_jitter_sigma, then zero floor(mask_fraction * d) distinct
/// coordinates chosen uniformly at random.
void strong_augment(std::span<double> x, const AugmentationConfig& cfg, Rng& rng);

/// Rows "f1,...,fd,label". Every row must have the same width; labels must be
/// integers in [0, num_classes).
Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t num_classes);

void write_csv_dataset(const std::filesystem::path& path, const Dataset& dataset);

}  // namespace fedanchor::data
