#include "fedanchor/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedanchor/rng.hpp"
#include "json.hpp"

namespace fedanchor::experiment {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& src = cfg.dataset;
  data::Dataset train;
  data::Dataset test;
  if (src.source == "blobs") {
    train = data::generate_blobs(src.num_classes, src.dim, src.per_class, src.spread,
                                 derive_seed(cfg.seed, {stream::blobs_train}));
    test = data::generate_blobs(src.num_classes, src.dim, src.test_per_class, src.spread,
                                derive_seed(cfg.seed, {stream::blobs_test}));
  } else {
    train = data::load_csv_dataset(src.train_csv, src.num_classes);
    test = data::load_csv_dataset(src.test_csv, src.num_classes);
    if (train.dim() != test.dim()) {
      throw ConfigError("dataset.test_csv", "feature width differs from dataset.train_csv");
    }
  }
  if (cfg.anchor_size > train.size()) {
    throw ConfigError("anchor_size", "value " + std::to_string(cfg.anchor_size) +
                                         " violates <= training set size (" +
                                         std::to_string(train.size()) + ")");
  }

  auto split =
      data::split_anchor(train, cfg.anchor_size, derive_seed(cfg.seed, {stream::anchor_split}));
  data::PartitionConfig part = cfg.partition;
  part.seed = derive_seed(cfg.seed, {stream::partition});

  PreparedData out;
  out.network = cfg.network_spec(train.dim());
  out.anchor_indices = std::move(split.anchor_indices);
  out.pool_indices = std::move(split.pool_indices);
  out.federation.clients =
      split.pool.size() == 0 ? std::vector<data::ClientShard>{} : data::lda_partition(split.pool, part);
  if (out.federation.clients.empty()) {
    for (std::size_t m = 0; m < part.num_clients; ++m) {
      data::UnlabeledShard view;
      view.client_id = m;
      view.features = Matrix(0, train.dim());
      out.federation.clients.emplace_back(std::move(view), std::vector<int>{});
    }
  }
  out.federation.anchor = std::move(split.anchor);
  out.federation.test = std::move(test);
  return out;
}

nn::ModelParameters initial_model(const ExperimentConfig& cfg, const PreparedData& data) {
  nn::ModelParameters params = nn::init_params(data.network, cfg.seed);
  Rng rng = make_rng(cfg.seed, {stream::pretrain});
  fed::pretrain_server(params, data.federation.anchor, cfg.federation_config(), rng);
  return params;
}

std::string partition_manifest(const ExperimentConfig& cfg, const PreparedData& data) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& shard : data.federation.clients) {
    std::vector<std::size_t> source;
    source.reserve(shard.size());
    for (const std::size_t p : shard.unlabeled().pool_indices) {
      source.push_back(data.pool_indices.at(p));
    }
    clients.push_back({{"client_id", shard.client_id()},
                       {"size", shard.size()},
                       {"pool_indices", shard.unlabeled().pool_indices},
                       {"train_indices", source}});
  }
  const nlohmann::json manifest = {
      {"seed", cfg.seed},
      {"num_clients", cfg.partition.num_clients},
      {"dirichlet_alpha", cfg.partition.dirichlet_alpha},
      {"anchor_size", data.anchor_indices.size()},
      {"anchor_train_indices", data.anchor_indices},
      {"pool_size", data.pool_indices.size()},
      {"clients", clients},
  };
  return manifest.dump(2) + "\n";
}

RunResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& options) {
  ExperimentConfig cfg = cfg_in;
  if (options.rounds) {
    cfg.federation.rounds = *options.rounds;
  }
  if (options.out_dir) {
    cfg.output_dir = options.out_dir->string();
  }
  if (options.serial) {
    cfg.federation.threads = 1;
  }
  cfg.validate();
  const fed::FederationConfig fcfg = cfg.federation_config();
  const std::filesystem::path out_dir = cfg.output_dir;
  const auto started = std::chrono::steady_clock::now();

  const PreparedData data = prepare_data(cfg);

  RunResult result;
  fed::SimulationState state;
  if (options.resume_from) {
    Checkpoint ckpt = read_checkpoint(*options.resume_from);
    if (ckpt.seed != cfg.seed) {
      throw ConfigError("seed", "checkpoint was written with seed " + std::to_string(ckpt.seed));
    }
    if (ckpt.params.spec() != data.network) {
      throw ConfigError("network", "checkpoint network shape differs from the configuration");
    }
    state.params = std::move(ckpt.params);
    state.completed_rounds = ckpt.round;
    // Keep the rows the checkpoint already accounts for.
    std::ifstream existing(out_dir / "metrics.csv");
    if (existing) {
      for (auto& row : read_metrics_csv(existing)) {
        if (row.round <= ckpt.round) {
          result.rounds.push_back(std::move(row));
        }
      }
    }
  } else {
    state.params = initial_model(cfg, data);
  }

  std::ofstream metrics_out;
  if (options.write_files) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "effective_config.json", to_config_text(cfg));
    write_text(out_dir / "partition.json", partition_manifest(cfg, data));
    metrics_out.open(out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics_out) {
      throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
    }
    metrics_out << metrics_header() << '\n';
    for (const auto& row : result.rounds) {
      metrics_out << format_metrics_row(row) << '\n';
    }
    if (!options.resume_from) {
      write_checkpoint(checkpoint_path(out_dir, 0), {cfg.seed, 0, state.params});
    }
  }

  while (state.completed_rounds < fcfg.rounds) {
    fed::RoundMetrics m = fed::run_round(data.federation, state, fcfg);
    if (options.log != nullptr) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "round %4zu  test_acc %.4f  pl_anchor %.4f  pl_cls %.4f  qualified %.1f\n",
                    m.round, m.test_accuracy, m.pseudo_label_accuracy_anchor_head,
                    m.pseudo_label_accuracy_classification_head, m.avg_qualified_samples);
      *options.log << line << std::flush;
    }
    if (options.write_files) {
      metrics_out << format_metrics_row(m) << '\n' << std::flush;
      if (!metrics_out) {
        throw std::runtime_error("cannot append to " + (out_dir / "metrics.csv").string());
      }
      const bool last = state.completed_rounds == fcfg.rounds;
      if (last || (cfg.checkpoint_every > 0 && m.round % cfg.checkpoint_every == 0)) {
        write_checkpoint(checkpoint_path(out_dir, m.round),
                         {cfg.seed, state.completed_rounds, state.params});
      }
    }
    result.rounds.push_back(std::move(m));
  }

  result.summary = summarize(result.rounds);
  result.summary.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.final_params = std::move(state.params);
  if (options.write_files) {
    write_text(out_dir / "summary.json", to_summary_text(result.summary));
  }
  return result;
}

std::filesystem::path dump_embeddings(const ExperimentConfig& cfg, std::size_t round,
                                      const std::optional<std::filesystem::path>& out_dir_opt) {
  const std::filesystem::path out_dir = out_dir_opt ? *out_dir_opt : std::filesystem::path(cfg.output_dir);
  const auto ckpt_file = checkpoint_path(out_dir, round);
  if (!std::filesystem::exists(ckpt_file)) {
    throw std::runtime_error("no checkpoint for round " + std::to_string(round) + " (expected " +
                             ckpt_file.string() + ")");
  }
  const Checkpoint ckpt = read_checkpoint(ckpt_file);
  const PreparedData data = prepare_data(cfg);
  const auto& test = data.federation.test;
  const nn::ForwardOutput fwd = nn::forward(ckpt.params, test.features);

  char name[48];
  std::snprintf(name, sizeof name, "embeddings_round_%04zu.csv", round);
  const auto path = out_dir / name;
  std::ostringstream os;
  os << "sample_id,true_label";
  for (std::size_t k = 0; k < fwd.anchor_embeddings.cols(); ++k) {
    os << ",z_" << k;
  }
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < test.size(); ++i) {
    os << i << ',' << test.labels[i];
    for (const double v : fwd.anchor_embeddings.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  write_text(path, os.str());
  return path;
}

}  // namespace fedanchor::experiment
