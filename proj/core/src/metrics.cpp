#include "fedanchor/metrics.hpp"

#include <cstdio>
#include <istream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fedanchor::experiment {
namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> columns{
      "round",
      "test_accuracy",
      "pseudo_label_accuracy_anchor_head",
      "pseudo_label_accuracy_classification_head",
      "qualified_pseudo_label_accuracy",
      "avg_qualified_samples",
      "avg_shard_size",
      "skipped_clients",
      "server_supervised_loss",
      "server_contrastive_loss",
      "overhead_percent",
      "downstream_scalars",
      "upstream_scalars",
      "participants",
  };
  return columns;
}

std::string metrics_header() {
  std::string out;
  for (const auto& c : metrics_columns()) {
    if (!out.empty()) {
      out += ',';
    }
    out += c;
  }
  return out;
}

std::string format_metrics_row(const fed::RoundMetrics& m) {
  std::string participants;
  for (const std::size_t id : m.participants) {
    if (!participants.empty()) {
      participants += ';';
    }
    participants += std::to_string(id);
  }
  std::ostringstream os;
  os << m.round << ',' << real(m.test_accuracy) << ',' << real(m.pseudo_label_accuracy_anchor_head)
     << ',' << real(m.pseudo_label_accuracy_classification_head) << ','
     << real(m.qualified_pseudo_label_accuracy) << ',' << real(m.avg_qualified_samples) << ','
     << real(m.avg_shard_size) << ',' << m.skipped_clients << ','
     << real(m.server_supervised_loss) << ',' << real(m.server_contrastive_loss) << ','
     << real(m.overhead_percent) << ',' << m.downstream_scalars << ',' << m.upstream_scalars
     << ',' << participants;
  return os.str();
}

fed::RoundMetrics parse_metrics_row(const std::string& line) {
  const auto cells = split(line, ',');
  if (cells.size() != metrics_columns().size()) {
    throw std::runtime_error("metrics row has " + std::to_string(cells.size()) +
                             " columns, expected " + std::to_string(metrics_columns().size()));
  }
  fed::RoundMetrics m;
  std::size_t k = 0;
  m.round = std::stoull(cells[k++]);
  m.test_accuracy = std::stod(cells[k++]);
  m.pseudo_label_accuracy_anchor_head = std::stod(cells[k++]);
  m.pseudo_label_accuracy_classification_head = std::stod(cells[k++]);
  m.qualified_pseudo_label_accuracy = std::stod(cells[k++]);
  m.avg_qualified_samples = std::stod(cells[k++]);
  m.avg_shard_size = std::stod(cells[k++]);
  m.skipped_clients = std::stoull(cells[k++]);
  m.server_supervised_loss = std::stod(cells[k++]);
  m.server_contrastive_loss = std::stod(cells[k++]);
  m.overhead_percent = std::stod(cells[k++]);
  m.downstream_scalars = std::stoull(cells[k++]);
  m.upstream_scalars = std::stoull(cells[k++]);
  for (const auto& id : split(cells[k], ';')) {
    if (!id.empty()) {
      m.participants.push_back(std::stoull(id));
    }
  }
  return m;
}

std::vector<fed::RoundMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) {
    throw std::runtime_error("metrics.csv header does not match the documented columns");
  }
  std::vector<fed::RoundMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    rows.push_back(parse_metrics_row(line));
    if (rows.size() > 1 && rows.back().round <= rows[rows.size() - 2].round) {
      throw std::runtime_error("metrics.csv rounds are not strictly increasing");
    }
  }
  return rows;
}

Summary summarize(std::span<const fed::RoundMetrics> rows) {
  Summary s;
  s.rounds = rows.size();
  if (rows.empty()) {
    return s;
  }
  s.final_test_accuracy = rows.back().test_accuracy;
  s.best_test_accuracy = rows.front().test_accuracy;
  s.best_round = rows.front().round;
  double pl_anchor = 0.0;
  double pl_cls = 0.0;
  double qualified = 0.0;
  for (const auto& r : rows) {
    if (r.test_accuracy > s.best_test_accuracy) {
      s.best_test_accuracy = r.test_accuracy;
      s.best_round = r.round;
    }
    pl_anchor += r.pseudo_label_accuracy_anchor_head;
    pl_cls += r.pseudo_label_accuracy_classification_head;
    qualified += r.avg_qualified_samples;
    s.total_downstream_scalars += r.downstream_scalars;
    s.total_upstream_scalars += r.upstream_scalars;
    s.total_skipped_clients += r.skipped_clients;
  }
  const auto n = static_cast<double>(rows.size());
  s.mean_pseudo_label_accuracy_anchor_head = pl_anchor / n;
  s.mean_pseudo_label_accuracy_classification_head = pl_cls / n;
  s.mean_avg_qualified_samples = qualified / n;
  return s;
}

std::string to_summary_text(const Summary& s) {
  const nlohmann::json j = {
      {"rounds", s.rounds},
      {"final_test_accuracy", s.final_test_accuracy},
      {"best_test_accuracy", s.best_test_accuracy},
      {"best_round", s.best_round},
      {"mean_pseudo_label_accuracy_anchor_head", s.mean_pseudo_label_accuracy_anchor_head},
      {"mean_pseudo_label_accuracy_classification_head",
       s.mean_pseudo_label_accuracy_classification_head},
      {"mean_avg_qualified_samples", s.mean_avg_qualified_samples},
      {"total_downstream_scalars", s.total_downstream_scalars},
      {"total_upstream_scalars", s.total_upstream_scalars},
      {"total_skipped_clients", s.total_skipped_clients},
      {"wall_time_seconds", s.wall_time_seconds},
  };
  return j.dump(2) + "\n";
}

}  // namespace fedanchor::experiment
