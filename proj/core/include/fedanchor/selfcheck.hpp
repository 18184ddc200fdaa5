#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedanchor/anchor.hpp"

namespace fedanchor::experiment {

/// Outcome of one oracle suite.
struct SuiteReport {
  std::string name;
  std::size_t cases = 0;
  double max_error = 0.0;   // largest observed deviation from the oracle
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed = false;
  std::string detail;       // first failure, if any
};

struct SelfCheckReport {
  std::vector<SuiteReport> suites;
  bool passed() const;
};

/// The labeling routine under test. Swappable so a deliberately broken
/// implementation can be shown to fail the pseudo-label suite.
using Labeler = std::function<anchor::PseudoLabelRecord(
    std::span<const double> z, const anchor::AnchorEmbeddingTable& table, double threshold)>;

struct SelfCheckOptions {
  std::uint64_t seed = 20240601;
  std::size_t contrastive_cases = 500;
  std::size_t pseudo_label_cases = 1000;
  std::size_t gradient_nets = 100;
  std::size_t partition_seeds = 10;
  std::size_t aggregation_cases = 200;
  Labeler labeler;  // empty: anchor::pseudo_label
};

// Individual suites.
SuiteReport check_contrastive(const SelfCheckOptions& opts = {});
SuiteReport check_pseudo_label(const SelfCheckOptions& opts = {});
SuiteReport check_gradients(const SelfCheckOptions& opts = {});
SuiteReport check_partition(const SelfCheckOptions& opts = {});
SuiteReport check_aggregation(const SelfCheckOptions& opts = {});

SelfCheckReport run_selfcheck(const SelfCheckOptions& opts = {});

/// One line per suite: name, verdict, case count, max error, tolerance, time.
void print_report(std::ostream& os, const SelfCheckReport& report);

}  // namespace fedanchor::experiment
