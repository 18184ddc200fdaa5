#include "fedanchor/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedanchor::data {

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("Dataset: feature rows and labels differ in length");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      std::ostringstream msg;
      msg << "Dataset: sample " << i << " has label " << labels[i] << " outside [0, "
          << num_classes << ")";
      throw std::invalid_argument(msg.str());
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = features.select_rows(indices);
  out.labels.reserve(indices.size());
  for (const std::size_t i : indices) {
    out.labels.push_back(labels.at(i));
  }
  out.num_classes = num_classes;
  return out;
}

std::vector<double> blob_center(std::size_t c, std::size_t dim) {
  std::vector<double> center(dim, 0.0);
  if (c < dim) {
    center[c] = 1.0;
  } else if (c < 2 * dim) {
    center[c - dim] = -1.0;
  } else {
    Rng rng = make_rng(0xb10bULL, {c, dim});
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (double& v : center) {
        v = sample_standard_normal(rng);
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (double& v : center) {
      v /= norm;
    }
  }
  return center;
}

Dataset generate_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed) {
  if (num_classes == 0 || dim == 0 || per_class == 0) {
    throw std::invalid_argument("generate_blobs: class count, dimension and size must be > 0");
  }
  if (!(spread >= 0.0)) {
    throw std::invalid_argument("generate_blobs: spread must be >= 0");
  }
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(num_classes * per_class, dim);
  ds.labels.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto center = blob_center(c, dim);
    for (std::size_t k = 0; k < per_class; ++k) {
      auto row = ds.features.row(ds.labels.size());
      for (std::size_t j = 0; j < dim; ++j) {
        row[j] = center[j] + spread * sample_standard_normal(rng);
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

AnchorSplit split_anchor(const Dataset& dataset, std::size_t anchor_size, std::uint64_t seed) {
  dataset.validate();
  const std::size_t classes = dataset.num_classes;
  if (anchor_size < classes) {
    std::ostringstream msg;
    msg << "split_anchor: anchor size " << anchor_size << " is smaller than the class count "
        << classes << "; every class needs at least one anchor";
    throw std::invalid_argument(msg.str());
  }
  if (anchor_size > dataset.size()) {
    throw std::invalid_argument("split_anchor: anchor size exceeds dataset size");
  }
  Rng rng(seed);

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }

  // floor(S/C) each, plus one more for S mod C randomly chosen classes.
  std::vector<std::size_t> quota(classes, anchor_size / classes);
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < anchor_size % classes; ++k) {
    ++quota[order[k]];
  }

  AnchorSplit split;
  std::vector<char> is_anchor(dataset.size(), 0);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < quota[c]) {
      std::ostringstream msg;
      msg << "split_anchor: class " << c << " has " << members.size()
          << " samples, fewer than its anchor quota " << quota[c];
      throw std::invalid_argument(msg.str());
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < quota[c]; ++k) {
      is_anchor[members[k]] = 1;
    }
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_anchor[i] != 0 ? split.anchor_indices : split.pool_indices).push_back(i);
  }
  split.anchor = dataset.subset(split.anchor_indices);
  split.pool = dataset.subset(split.pool_indices);
  return split;
}

void PartitionConfig::validate() const {
  if (num_clients == 0) {
    throw std::invalid_argument("PartitionConfig: num_clients must be >= 1");
  }
  if (!(dirichlet_alpha > 0.0) || !std::isfinite(dirichlet_alpha)) {
    throw std::invalid_argument("PartitionConfig: dirichlet_alpha must be > 0");
  }
}

ClientShard::ClientShard(UnlabeledShard view, std::vector<int> hidden_labels)
    : view_(std::move(view)), hidden_labels_(std::move(hidden_labels)) {
  if (hidden_labels_.size() != view_.size()) {
    throw std::invalid_argument("ClientShard: label count differs from sample count");
  }
}

namespace diagnostics {
std::span<const int> hidden_labels(const ClientShard& shard) { return shard.hidden_labels_; }
}  // namespace diagnostics

std::vector<ClientShard> lda_partition(const Dataset& pool, const PartitionConfig& cfg) {
  cfg.validate();
  pool.validate();
  if (pool.size() == 0) {
    throw std::invalid_argument("lda_partition: pool is empty");
  }
  Rng rng(cfg.seed);
  const std::size_t n_clients = cfg.num_clients;
  std::vector<std::vector<std::size_t>> assigned(n_clients);

  std::vector<std::vector<std::size_t>> by_class(pool.num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_class[static_cast<std::size_t>(pool.labels[i])].push_back(i);
  }

  std::gamma_distribution<double> gamma(cfg.dirichlet_alpha, 1.0);
  std::vector<double> p(n_clients);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    double total = 0.0;
    for (double& v : p) {
      v = gamma(rng);
      total += v;
    }
    if (!(total > 0.0)) {
      // Every gamma draw underflowed (possible for tiny alpha): one client
      // chosen uniformly takes the class.
      std::fill(p.begin(), p.end(), 0.0);
      p[std::uniform_int_distribution<std::size_t>(0, n_clients - 1)(rng)] = 1.0;
      total = 1.0;
    }
    const double n_c = static_cast<double>(members.size());
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t m = 0; m < n_clients; ++m) {
      cumulative += p[m] / total;
      const std::size_t end =
          m + 1 == n_clients
              ? members.size()
              : std::min(members.size(), static_cast<std::size_t>(std::llround(cumulative * n_c)));
      for (std::size_t k = begin; k < std::max(begin, end); ++k) {
        assigned[m].push_back(members[k]);
      }
      begin = std::max(begin, end);
    }
  }

  std::vector<ClientShard> shards;
  shards.reserve(n_clients);
  for (std::size_t m = 0; m < n_clients; ++m) {
    auto& idx = assigned[m];
    std::sort(idx.begin(), idx.end());
    UnlabeledShard view;
    view.client_id = m;
    view.features = pool.features.select_rows(idx);
    view.pool_indices = idx;
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (const std::size_t i : idx) {
      labels.push_back(pool.labels[i]);
    }
    shards.emplace_back(std::move(view), std::move(labels));
  }
  return shards;
}

void AugmentationConfig::validate() const {
  if (!(weak_jitter_sigma >= 0.0) || !(strong_jitter_sigma >= 0.0)) {
    throw std::invalid_argument("AugmentationConfig: jitter sigmas must be >= 0");
  }
  if (!(strong_mask_fraction >= 0.0 && strong_mask_fraction < 1.0)) {
    throw std::invalid_argument("AugmentationConfig: strong_mask_fraction must be in [0,1)");
  }
}

void weak_augment(std::span<double> x, const AugmentationConfig& cfg, Rng& rng) {
  if (cfg.weak_jitter_sigma == 0.0) {
    return;
  }
  for (double& v : x) {
    v += cfg.weak_jitter_sigma * sample_standard_normal(rng);
  }
}

void strong_augment(std::span<double> x, const AugmentationConfig& cfg, Rng& rng) {
  if (cfg.strong_jitter_sigma > 0.0) {
    for (double& v : x) {
      v += cfg.strong_jitter_sigma * sample_standard_normal(rng);
    }
  }
  const auto masked = static_cast<std::size_t>(
      std::floor(cfg.strong_mask_fraction * static_cast<double>(x.size())));
  if (masked == 0) {
    return;
  }
  // Partial Fisher-Yates: the first `masked` entries are a uniform subset.
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  for (std::size_t k = 0; k < masked; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, coords.size() - 1);
    std::swap(coords[k], coords[pick(rng)]);
    x[coords[k]] = 0.0;
  }
}

Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_csv_dataset: cannot open " + path.string());
  }
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    std::ostringstream msg;
    msg << "load_csv_dataset: " << path.string() << " row " << line_no << ": " << what;
    throw std::runtime_error(msg.str());
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() < 2) {
      fail("expected at least one feature and a label");
    }
    if (width == 0) {
      width = cells.size() - 1;
    } else if (cells.size() - 1 != width) {
      fail("expected " + std::to_string(width) + " features, found " +
           std::to_string(cells.size() - 1));
    }
    for (std::size_t k = 0; k < width; ++k) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[k], &used);
      } catch (const std::exception&) {
        fail("feature " + std::to_string(k) + " is not a number");
      }
      if (used != cells[k].size() || !std::isfinite(v)) {
        fail("feature " + std::to_string(k) + " is not a finite number");
      }
      values.push_back(v);
    }
    long long label = 0;
    std::size_t used = 0;
    try {
      label = std::stoll(cells.back(), &used);
    } catch (const std::exception&) {
      fail("label is not an integer");
    }
    if (used != cells.back().size()) {
      fail("label is not an integer");
    }
    if (label < 0 || static_cast<unsigned long long>(label) >= num_classes) {
      fail("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) +
           ")");
    }
    labels.push_back(static_cast<int>(label));
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(labels.size(), width);
  std::copy(values.begin(), values.end(), ds.features.values().begin());
  ds.labels = std::move(labels);
  return ds;
}

void write_csv_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_csv_dataset: cannot open " + path.string());
  }
  char buf[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const double v : dataset.features.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << dataset.labels[i] << '\n';
  }
  if (!out) {
    throw std::runtime_error("write_csv_dataset: write failed for " + path.string());
  }
}

}  // namespace fedanchor::data
