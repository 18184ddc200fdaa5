// fedanchor: run experiments, self-checks, embedding dumps and partition manifests.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 selfcheck failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedanchor/experiment.hpp"
#include "fedanchor/selfcheck.hpp"

namespace ex = fedanchor::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kSelfcheck = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> threads;
  bool serial = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override the master seed");
  cmd->add_option("--out-dir", o.out_dir, "Override the output directory");
}

ex::ExperimentConfig load(const std::string& path, const Overrides& o) {
  ex::ExperimentConfig cfg = ex::parse_config(path);
  if (o.seed) {
    cfg.seed = *o.seed;
  }
  if (o.out_dir) {
    cfg.output_dir = *o.out_dir;
  }
  if (o.rounds) {
    cfg.federation.rounds = *o.rounds;
  }
  if (o.threads) {
    cfg.federation.threads = *o.threads;
  }
  if (o.serial) {
    cfg.federation.threads = 1;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised learning with anchor-embedding pseudo-labels"};
  app.require_subcommand(1);

  Overrides o;
  std::string config_path;
  std::optional<std::string> resume;
  std::size_t dump_round = 0;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics, summary and checkpoints");
  run->add_option("config", config_path, "JSON configuration file")->required();
  add_common(run, o);
  run->add_option("--rounds", o.rounds, "Override federation.rounds");
  run->add_option("--threads", o.threads, "Worker threads for client updates");
  run->add_flag("--serial", o.serial, "Force single-threaded execution");
  run->add_option("--resume", resume, "Resume from a checkpoint file");

  auto* selfcheck = app.add_subcommand("selfcheck", "Run the oracle suites and gradient checks");

  auto* dump = app.add_subcommand("dump-embeddings", "Write anchor-head embeddings of the test set");
  dump->add_option("config", config_path, "JSON configuration file")->required();
  dump->add_option("--round", dump_round, "Checkpoint round")->required();
  add_common(dump, o);

  auto* partition = app.add_subcommand("partition", "Print the anchor split and client partition manifest");
  partition->add_option("config", config_path, "JSON configuration file")->required();
  add_common(partition, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*selfcheck) {
      const auto report = ex::run_selfcheck();
      ex::print_report(std::cout, report);
      return report.passed() ? kOk : kSelfcheck;
    }
    const ex::ExperimentConfig cfg = load(config_path, o);
    if (*run) {
      ex::RunOptions opts;
      opts.log = &std::cerr;
      if (resume) {
        opts.resume_from = *resume;
      }
      const auto result = ex::run_experiment(cfg, opts);
      std::cout << ex::to_summary_text(result.summary);
      return kOk;
    }
    if (*dump) {
      std::cout << ex::dump_embeddings(cfg, dump_round).string() << '\n';
      return kOk;
    }
    if (*partition) {
      const auto manifest = ex::partition_manifest(cfg, ex::prepare_data(cfg));
      if (o.out_dir) {
        std::filesystem::create_directories(cfg.output_dir);
        const auto path = std::filesystem::path(cfg.output_dir) / "partition.json";
        std::ofstream(path) << manifest;
        std::cout << path.string() << '\n';
      } else {
        std::cout << manifest;
      }
      return kOk;
    }
  } catch (const ex::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const fedanchor::fed::NumericDivergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
