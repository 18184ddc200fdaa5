#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedanchor/federation.hpp"

namespace fedanchor::experiment {

/// metrics.csv column order. Every RoundMetrics field appears exactly once;
/// `participants` is a ';'-separated list of client ids.
const std::vector<std::string>& metrics_columns();

std::string metrics_header();

/// One CSV line (no trailing newline). Reals use %.17g so rows round-trip.
std::string format_metrics_row(const fed::RoundMetrics& m);

fed::RoundMetrics parse_metrics_row(const std::string& line);

/// Parses a whole metrics.csv, checking the header and that rounds strictly increase.
std::vector<fed::RoundMetrics> read_metrics_csv(std::istream& in);

struct Summary {
  std::size_t rounds = 0;
  double final_test_accuracy = 0.0;
  double best_test_accuracy = 0.0;
  std::size_t best_round = 0;
  double mean_pseudo_label_accuracy_anchor_head = 0.0;
  double mean_pseudo_label_accuracy_classification_head = 0.0;
  double mean_avg_qualified_samples = 0.0;
  std::size_t total_downstream_scalars = 0;
  std::size_t total_upstream_scalars = 0;
  std::size_t total_skipped_clients = 0;
  double wall_time_seconds = 0.0;  // not derivable from metrics.csv
};

/// Column-wise reductions of the per-round metrics.
Summary summarize(std::span<const fed::RoundMetrics> rows);

std::string to_summary_text(const Summary& s);

}  // namespace fedanchor::experiment
