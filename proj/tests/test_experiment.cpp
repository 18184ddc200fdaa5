#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedanchor/experiment.hpp"
#include "fedanchor/selfcheck.hpp"
#include "json.hpp"

using namespace fedanchor;
using namespace fedanchor::experiment;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fedanchor_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const fs::path& out, fed::Method method = fed::Method::fedanchor) {
  ExperimentConfig cfg;
  cfg.output_dir = out.string();
  cfg.anchor_size = 20;
  cfg.dataset.per_class = 100;
  cfg.dataset.test_per_class = 50;
  cfg.hidden_dims = {16};
  cfg.partition.num_clients = 6;
  cfg.federation.rounds = 4;
  cfg.federation.participation_ratio = 0.5;
  cfg.federation.local_epochs = 2;
  cfg.federation.method = method;
  return cfg;
}

double mean_within_class_cosine(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<int> labels;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    rows.emplace_back();
    while (std::getline(ss, cell, ',')) {
      rows.back().push_back(std::stod(cell));
    }
  }
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      if (labels[i] == labels[j]) {
        double uv = 0, uu = 0, vv = 0;
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          uv += rows[i][k] * rows[j][k];
          uu += rows[i][k] * rows[i][k];
          vv += rows[j][k] * rows[j][k];
        }
        s += uv / std::sqrt(uu * vv);
        ++n;
      }
    }
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(parse_config_text(""), ExperimentConfig{});
  EXPECT_EQ(parse_config_text("{}"), ExperimentConfig{});
  const ExperimentConfig d;
  EXPECT_EQ(d.anchor_size, 80U);
  EXPECT_EQ(d.federation.labeling.threshold, 0.6);
  EXPECT_EQ(d.federation.confidence_threshold, 0.95);
  EXPECT_EQ(d.federation.client_optimizer.learning_rate, 0.03);
  EXPECT_EQ(d.federation.client_optimizer.momentum, 0.9);
  EXPECT_EQ(d.federation.client_optimizer.weight_decay, 5e-4);
  EXPECT_EQ(d.federation.mixup.beta_param, 0.75);
  EXPECT_EQ(d.partition.num_clients, 20U);
  EXPECT_EQ(d.partition.dirichlet_alpha, 1000.0);
  EXPECT_EQ(d.anchor_dim, 16U);
}

TEST(Config, ThresholdOutOfRangeCitesInterval) {
  try {
    parse_config_text(R"({"labeling": {"threshold": 1.5}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[0,1]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1.5"), std::string::npos) << msg;
    EXPECT_EQ(e.field(), "labeling.threshold");
  }
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config_text(R"({"federation": {"roundz": 3}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("federation.roundz"), std::string::npos) << e.what();
  }
}

TEST(Config, CrossFieldChecks) {
  EXPECT_THROW(parse_config_text(R"({"anchor_size": 3})"), ConfigError);
  EXPECT_THROW(
      parse_config_text(R"({"partition": {"num_clients": 5}, "federation": {"participation_ratio": 0.1}})"),
      ConfigError);
  EXPECT_THROW(parse_config_text(R"({"federation": {"method": "semifl"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"seed": -1})"), ConfigError);
  EXPECT_THROW(parse_config_text("{not json"), ConfigError);
}

TEST(Config, RoundTrip) {
  ExperimentConfig cfg = small_config("/tmp/x", fed::Method::fedanchor_mix);
  cfg.seed = 123456789012345ULL;
  cfg.federation.labeling.threshold = 0.55;
  cfg.federation.client_optimizer.learning_rate = 0.0123456789;
  cfg.federation.aggregation_weighting = fed::AggregationWeighting::trained_size;
  cfg.federation.client_mixup_enabled = false;
  cfg.dataset.spread = 0.1 + 0.2;
  EXPECT_EQ(parse_config_text(to_config_text(cfg)), cfg);
  EXPECT_EQ(parse_config_text(to_config_text(ExperimentConfig{})), ExperimentConfig{});
}

TEST(Config, EffectiveConfigListsEverySection) {
  const auto j = nlohmann::json::parse(to_config_text(ExperimentConfig{}));
  for (const char* key : {"seed", "output_dir", "anchor_size", "dataset", "network", "partition",
                          "federation", "labeling", "contrastive", "mixup", "augmentation"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(Config, MissingFile) {
  EXPECT_THROW(parse_config("/nonexistent/fedanchor.json"), ConfigError);
}

TEST(Metrics, HeaderHasEveryFieldOnce) {
  const auto& cols = metrics_columns();
  EXPECT_EQ(cols.size(), 14U);
  EXPECT_EQ(std::set<std::string>(cols.begin(), cols.end()).size(), cols.size());
  EXPECT_EQ(metrics_header().substr(0, 20), "round,test_accuracy,");
}

TEST(Metrics, RowRoundTrip) {
  fed::RoundMetrics m;
  m.round = 7;
  m.test_accuracy = 0.1 + 0.2;
  m.pseudo_label_accuracy_anchor_head = 1.0 / 3.0;
  m.avg_qualified_samples = 12.25;
  m.skipped_clients = 2;
  m.downstream_scalars = 123456789;
  m.participants = {1, 4, 9};
  const auto back = parse_metrics_row(format_metrics_row(m));
  EXPECT_EQ(format_metrics_row(back), format_metrics_row(m));
  EXPECT_EQ(back.test_accuracy, m.test_accuracy);
  EXPECT_EQ(back.participants, m.participants);
}

TEST(Metrics, RejectsNonIncreasingRounds) {
  fed::RoundMetrics a;
  a.round = 2;
  std::stringstream ss;
  ss << metrics_header() << '\n' << format_metrics_row(a) << '\n' << format_metrics_row(a) << '\n';
  EXPECT_THROW(read_metrics_csv(ss), std::runtime_error);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto dir = fresh_dir("ckpt");
  const Checkpoint c{99, 5, nn::init_params({3, {4, 5}, 2, 3}, 1)};
  const auto path = checkpoint_path(dir, 5);
  write_checkpoint(path, c);
  const auto back = read_checkpoint(path);
  EXPECT_EQ(back.seed, 99U);
  EXPECT_EQ(back.round, 5U);
  EXPECT_EQ(back.params, c.params);

  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(path, std::ios::binary) << bytes;
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  std::ofstream(path, std::ios::binary) << bytes.substr(0, 30);
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), std::runtime_error);
}

TEST(RunExperiment, OneRoundOneRow) {
  const auto dir = fresh_dir("one_round");
  auto cfg = small_config(dir);
  cfg.federation.rounds = 1;
  const auto result = run_experiment(cfg);
  EXPECT_EQ(result.rounds.size(), 1U);
  std::ifstream in(dir / "metrics.csv");
  EXPECT_EQ(read_metrics_csv(in).size(), 1U);
  for (const char* f : {"effective_config.json", "partition.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_TRUE(fs::exists(checkpoint_path(dir, 0)));
  EXPECT_TRUE(fs::exists(checkpoint_path(dir, 1)));
}

TEST(RunExperiment, SerialRerunIsByteIdentical) {
  const auto a = fresh_dir("rerun_a");
  const auto b = fresh_dir("rerun_b");
  RunOptions opts;
  opts.serial = true;
  run_experiment(small_config(a), opts);
  run_experiment(small_config(b), opts);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "partition.json"), slurp(b / "partition.json"));
}

TEST(RunExperiment, ThreadedMatchesSerial) {
  const auto a = fresh_dir("threads_a");
  const auto b = fresh_dir("threads_b");
  auto cfg = small_config(a);
  cfg.federation.threads = 4;
  run_experiment(cfg);
  RunOptions opts;
  opts.serial = true;
  run_experiment(small_config(b), opts);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST(RunExperiment, ResumeReproducesUninterruptedRun) {
  for (const auto method : {fed::Method::fedanchor, fed::Method::prediction_threshold_baseline}) {
    const auto full = fresh_dir("resume_full");
    const auto part = fresh_dir("resume_part");
    auto cfg = small_config(full, method);
    cfg.federation.rounds = 6;
    const auto uninterrupted = run_experiment(cfg);

    auto first = small_config(part, method);
    first.federation.rounds = 6;
    RunOptions opts;
    opts.rounds = 3;
    run_experiment(first, opts);
    // A later checkpoint on disk must not leak into the resumed run.
    RunOptions resume;
    resume.resume_from = checkpoint_path(part, 2);
    const auto resumed = run_experiment(first, resume);
    EXPECT_EQ(slurp(full / "metrics.csv"), slurp(part / "metrics.csv"));
    EXPECT_EQ(uninterrupted.final_params, resumed.final_params);
    EXPECT_EQ(resumed.rounds.size(), 6U);
  }
}

TEST(RunExperiment, ResumeRejectsForeignCheckpoint) {
  const auto dir = fresh_dir("resume_foreign");
  auto cfg = small_config(dir);
  cfg.federation.rounds = 1;
  run_experiment(cfg);
  auto other = cfg;
  other.seed = 77;
  RunOptions opts;
  opts.resume_from = checkpoint_path(dir, 1);
  EXPECT_THROW(run_experiment(other, opts), ConfigError);
}

TEST(RunExperiment, SummaryMatchesColumnReductions) {
  const auto dir = fresh_dir("summary");
  run_experiment(small_config(dir));
  std::ifstream in(dir / "metrics.csv");
  const auto rows = read_metrics_csv(in);
  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  std::size_t down = 0, up = 0, skipped = 0;
  double best = 0.0, pl = 0.0;
  for (const auto& r : rows) {
    down += r.downstream_scalars;
    up += r.upstream_scalars;
    skipped += r.skipped_clients;
    best = std::max(best, r.test_accuracy);
    pl += r.pseudo_label_accuracy_anchor_head;
  }
  EXPECT_EQ(j["rounds"].get<std::size_t>(), rows.size());
  EXPECT_EQ(j["total_downstream_scalars"].get<std::size_t>(), down);
  EXPECT_EQ(j["total_upstream_scalars"].get<std::size_t>(), up);
  EXPECT_EQ(j["total_skipped_clients"].get<std::size_t>(), skipped);
  EXPECT_EQ(j["best_test_accuracy"].get<double>(), best);
  EXPECT_EQ(j["final_test_accuracy"].get<double>(), rows.back().test_accuracy);
  EXPECT_NEAR(j["mean_pseudo_label_accuracy_anchor_head"].get<double>(),
              pl / static_cast<double>(rows.size()), 1e-15);
  EXPECT_GE(j["wall_time_seconds"].get<double>(), 0.0);
}

TEST(RunExperiment, PartitionManifestCoversPool) {
  const auto cfg = small_config(fresh_dir("manifest"));
  const auto data = prepare_data(cfg);
  const auto j = nlohmann::json::parse(partition_manifest(cfg, data));
  std::set<std::size_t> seen(j["anchor_train_indices"].begin(), j["anchor_train_indices"].end());
  std::size_t total = seen.size();
  for (const auto& c : j["clients"]) {
    for (const auto& i : c["train_indices"]) {
      seen.insert(i.get<std::size_t>());
      ++total;
    }
  }
  EXPECT_EQ(total, 400U);
  EXPECT_EQ(seen.size(), 400U);
}

TEST(DumpEmbeddings, RowsMatchForwardPass) {
  const auto dir = fresh_dir("dump");
  const auto cfg = small_config(dir);
  run_experiment(cfg);
  const auto path = dump_embeddings(cfg, 2);
  const auto ckpt = read_checkpoint(checkpoint_path(dir, 2));
  const auto data = prepare_data(cfg);
  const auto z = nn::forward(ckpt.params, data.federation.test.features).anchor_embeddings;

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 22), "sample_id,true_label,z");
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    EXPECT_EQ(std::stoul(cell), n);
    std::getline(ss, cell, ',');
    EXPECT_EQ(std::stoi(cell), data.federation.test.labels[n]);
    for (std::size_t k = 0; k < z.cols(); ++k) {
      ASSERT_TRUE(std::getline(ss, cell, ','));
      EXPECT_EQ(std::stod(cell), z(n, k));
    }
    ++n;
  }
  EXPECT_EQ(n, data.federation.test.size());
}

TEST(DumpEmbeddings, MissingCheckpointNamesRound) {
  const auto dir = fresh_dir("dump_missing");
  try {
    dump_embeddings(small_config(dir), 17);
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("round 17"), std::string::npos) << e.what();
  }
}

TEST(DumpEmbeddings, ClassesTightenOverTraining) {
  const auto dir = fresh_dir("dump_tighten");
  auto cfg = small_config(dir);
  cfg.federation.rounds = 15;
  run_experiment(cfg);
  const double early = mean_within_class_cosine(dump_embeddings(cfg, 1));
  const double late = mean_within_class_cosine(dump_embeddings(cfg, 15));
  EXPECT_GT(late, early);
}

TEST(SelfCheck, FreshBuildPasses) {
  const auto report = run_selfcheck();
  EXPECT_TRUE(report.passed());
  ASSERT_EQ(report.suites.size(), 5U);
  std::ostringstream os;
  print_report(os, report);
  for (const auto& s : report.suites) {
    EXPECT_TRUE(s.passed) << s.name << ": " << s.detail;
    EXPECT_GT(s.cases, 0U);
    EXPECT_NE(os.str().find(s.name), std::string::npos);
  }
  EXPECT_NE(os.str().find("cases="), std::string::npos);
  EXPECT_NE(os.str().find("max_error="), std::string::npos);
}

TEST(SelfCheck, CorruptedSimilaritySignFails) {
  SelfCheckOptions opts;
  opts.labeler = [](std::span<const double> z, const anchor::AnchorEmbeddingTable& t, double th) {
    auto scores = anchor::per_class_avg_similarity(z, t);
    for (double& s : scores) {
      s = -s;
    }
    return anchor::record_from_scores(0, std::move(scores), th);
  };
  const auto suite = check_pseudo_label(opts);
  EXPECT_FALSE(suite.passed);
  EXPECT_FALSE(suite.detail.empty());
}

#ifdef FEDANCHOR_CLI_PATH
namespace {

int cli(const std::string& args) {
  const int status = std::system((std::string(FEDANCHOR_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  auto cfg = small_config(dir / "out");
  cfg.federation.rounds = 2;
  std::ofstream(dir / "good.json") << to_config_text(cfg);
  std::ofstream(dir / "bad.json") << R"({"labeling": {"threshold": 1.5}})";
  std::ofstream(dir / "broken.json") << R"({"dataset": {"source": "csv", "train_csv": "/nonexistent.csv", "test_csv": "/nonexistent.csv"}})";

  EXPECT_EQ(cli("run " + (dir / "good.json").string() + " --serial"), 0);
  EXPECT_EQ(cli("dump-embeddings " + (dir / "good.json").string() + " --round 2"), 0);
  EXPECT_EQ(cli("partition " + (dir / "good.json").string()), 0);
  EXPECT_EQ(cli("run " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(cli("run"), 1);
  EXPECT_EQ(cli("run " + (dir / "broken.json").string()), 2);
  EXPECT_EQ(cli("dump-embeddings " + (dir / "good.json").string() + " --round 9"), 2);
  EXPECT_EQ(cli("selfcheck"), 0);
}
#endif

TEST(RunExperiment, SupervisedBaselineBoundsFedAnchor) {
  std::vector<double> sup, fa;
  for (const std::uint64_t seed : {0, 1, 2}) {
    for (const auto method : {fed::Method::supervised_baseline, fed::Method::fedanchor}) {
      ExperimentConfig cfg;
      cfg.seed = seed;
      cfg.federation.rounds = 50;
      cfg.federation.participation_ratio = 0.25;
      cfg.federation.method = method;
      RunOptions opts;
      opts.write_files = false;
      const auto rows = run_experiment(cfg, opts).rounds;
      auto& acc = method == fed::Method::supervised_baseline ? sup : fa;
      acc.resize(rows.size(), 0.0);
      for (std::size_t t = 0; t < rows.size(); ++t) {
        acc[t] += rows[t].test_accuracy / 3.0;
      }
    }
  }
  for (std::size_t t = 0; t < sup.size(); ++t) {
    EXPECT_GE(sup[t], fa[t]) << "round " << t + 1;
  }
}
