#include "fedanchor/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "fedanchor/data.hpp"
#include "fedanchor/federation.hpp"
#include "fedanchor/losses.hpp"
#include "fedanchor/oracles.hpp"
#include "fedanchor/rng.hpp"

namespace fedanchor::experiment {
namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) {
    v = sample_standard_normal(rng);
  }
  return m;
}

// Labels for n samples over c classes with at least one repeated class and at
// least two distinct classes (n >= 3, c >= 2).
std::vector<int> contrastive_labels(std::size_t n, std::size_t c, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) {
    v = static_cast<int>(pick(rng, 0, c - 1));
  }
  y[0] = 0;
  y[1] = 0;
  y[2] = 1;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

void note_failure(SuiteReport& r, const std::string& msg) {
  r.passed = false;
  if (r.detail.empty()) {
    r.detail = msg;
  }
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

SuiteReport start_suite(std::string name, double tolerance) {
  SuiteReport r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  r.passed = true;
  return r;
}

}  // namespace

bool SelfCheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteReport& s) { return s.passed; });
}

SuiteReport check_contrastive(const SelfCheckOptions& opts) {
  const Timer timer;
  SuiteReport r = start_suite("contrastive_loss_bruteforce", 1e-10);

  // Two classes of identical unit vectors at right angles: -log(2e / 8).
  {
    const Matrix z = Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    const std::vector<int> y{0, 0, 1, 1};
    const auto got = losses::label_contrastive_loss(z, y, {1.0});
    const double expected = -std::log(2.0 * std::exp(1.0) / 8.0);
    const double err = got ? std::abs(got->loss - expected) : INFINITY;
    r.max_error = std::max(r.max_error, err);
    if (!(err <= r.tolerance)) {
      note_failure(r, fmt("hand case: expected %.12g, got %.12g", expected, got ? got->loss : NAN));
    }
    ++r.cases;
  }

  Rng rng = make_rng(opts.seed, {101});
  const double temperatures[] = {0.1, 1.0, 5.0};
  for (std::size_t k = 0; k < opts.contrastive_cases; ++k) {
    const std::size_t n = pick(rng, 1, 8);
    const std::size_t c = pick(rng, 1, 4);
    const std::size_t d = pick(rng, 2, 6);
    const double tau = temperatures[k % 3];
    Matrix z = random_matrix(n, d, rng);
    std::vector<int> y(n);
    for (auto& v : y) {
      v = static_cast<int>(pick(rng, 0, c - 1));
    }
    const auto got = losses::label_contrastive_loss(z, y, {tau});
    const auto want = oracles::contrastive_loss(z, y, tau);
    ++r.cases;
    if (got.has_value() != want.has_value()) {
      note_failure(r, "case " + std::to_string(k) + ": skipped flag disagrees with oracle");
      continue;
    }
    if (got) {
      const double err = std::abs(got->loss - *want);
      r.max_error = std::max(r.max_error, err);
      if (!(err <= r.tolerance)) {
        note_failure(r, "case " + std::to_string(k) + fmt(": loss %.15g vs oracle %.15g", got->loss, *want));
      }
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_pseudo_label(const SelfCheckOptions& opts) {
  const Timer timer;
  SuiteReport r = start_suite("pseudo_label_bruteforce", 1e-12);
  const Labeler labeler =
      opts.labeler ? opts.labeler
                   : Labeler([](std::span<const double> z, const anchor::AnchorEmbeddingTable& t,
                                double threshold) { return anchor::pseudo_label(z, t, threshold); });

  Rng rng = make_rng(opts.seed, {102});
  for (std::size_t k = 0; k < opts.pseudo_label_cases; ++k) {
    const std::size_t c = pick(rng, 1, 6);
    const std::size_t d = pick(rng, 2, 8);
    const std::size_t rows = c + pick(rng, 0, 12);
    std::vector<int> labels(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      labels[i] = i < c ? static_cast<int>(i) : static_cast<int>(pick(rng, 0, c - 1));
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    const Matrix anchors = random_matrix(rows, d, rng);
    const Matrix query = random_matrix(1, d, rng);
    const double threshold = sample_uniform01(rng);
    const anchor::AnchorEmbeddingTable table(anchors, labels, c);

    const auto rec = labeler(query.row(0), table, threshold);
    const auto scores = oracles::class_scores(query.row(0), anchors, labels, c);
    const int label = oracles::argmax(scores);
    const bool qualifies = scores[static_cast<std::size_t>(label)] > threshold;
    ++r.cases;

    if (rec.class_scores.size() != c) {
      note_failure(r, "case " + std::to_string(k) + ": wrong number of class scores");
      continue;
    }
    double err = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      err = std::max(err, std::abs(rec.class_scores[j] - scores[j]));
    }
    err = std::max(err, std::abs(rec.max_score - scores[static_cast<std::size_t>(label)]));
    r.max_error = std::max(r.max_error, err);
    if (!(err <= r.tolerance)) {
      note_failure(r, "case " + std::to_string(k) + fmt(": score deviation %.3g", err));
    } else if (rec.pseudo_label != label) {
      note_failure(r, "case " + std::to_string(k) + ": label " +
                          std::to_string(rec.pseudo_label) + " vs oracle " + std::to_string(label));
    } else if (rec.qualifies != qualifies) {
      note_failure(r, "case " + std::to_string(k) + ": qualification disagrees with oracle");
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_gradients(const SelfCheckOptions& opts) {
  const Timer timer;
  SuiteReport r = start_suite("gradient_finite_difference", 1e-4);
  Rng rng = make_rng(opts.seed, {103});

  for (std::size_t net = 0; net < opts.gradient_nets; ++net) {
    nn::NetworkSpec spec;
    spec.input_dim = pick(rng, 2, 5);
    spec.hidden_dims.assign(pick(rng, 1, 2), 0);
    for (auto& h : spec.hidden_dims) {
      h = pick(rng, 3, 6);
    }
    spec.num_classes = pick(rng, 2, 4);
    spec.anchor_dim = pick(rng, 2, 4);
    nn::ModelParameters params = nn::init_params(spec, rng());
    // Nonzero biases so no unit sits at the rectifier kink by construction.
    for (auto* layer : {&params.classification_head, &params.anchor_head}) {
      for (double& b : layer->bias) {
        b = 0.1 * sample_standard_normal(rng);
      }
    }
    for (auto& layer : params.backbone) {
      for (double& b : layer.bias) {
        b = 0.1 * sample_standard_normal(rng);
      }
    }

    const std::size_t n = pick(rng, 3, 6);
    const Matrix batch = random_matrix(n, spec.input_dim, rng);
    const Matrix other = random_matrix(n, spec.input_dim, rng);
    const std::vector<int> y_a = contrastive_labels(n, spec.num_classes, rng);
    std::vector<int> y_b(n);
    for (auto& v : y_b) {
      v = static_cast<int>(pick(rng, 0, spec.num_classes - 1));
    }
    const double lambda = sample_beta(0.75, 0.75, rng);
    const double tau = 0.5 + sample_uniform01(rng);
    const losses::MixupConfig mix_cfg{0.75, 0.5 + sample_uniform01(rng)};
    const losses::RowTransform shrink = [](std::span<double> x) {
      for (double& v : x) {
        v *= 0.9;
      }
    };
    const auto transformed = [&](Matrix m) {
      for (std::size_t i = 0; i < m.rows(); ++i) {
        shrink(m.row(i));
      }
      return m;
    };
    Matrix mixed(n, spec.input_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto m = losses::mixup_pair(batch.row(i), other.row(i), lambda);
      std::copy(m.x.begin(), m.x.end(), mixed.row(i).begin());
    }
    const Matrix batch_aug = transformed(batch);
    const Matrix mixed_aug = transformed(mixed);

    // Oracle-side loss values, written from the definitions.
    const auto mean_ce = [](const Matrix& logits, std::span<const int> y) {
      double s = 0.0;
      for (std::size_t i = 0; i < logits.rows(); ++i) {
        s += oracles::cross_entropy(logits.row(i), y[i]);
      }
      return s / static_cast<double>(logits.rows());
    };
    const auto ce_fn = [&](const nn::ModelParameters& p) {
      return mean_ce(oracles::forward(p, batch).logits, y_a);
    };
    const auto fix_fn = [&](const nn::ModelParameters& p) {
      return mean_ce(oracles::forward(p, batch_aug).logits, y_a);
    };
    const auto mix_fn = [&](const nn::ModelParameters& p) {
      const Matrix logits = oracles::forward(p, mixed_aug).logits;
      return lambda * mean_ce(logits, y_a) + (1.0 - lambda) * mean_ce(logits, y_b);
    };
    const auto combined_fn = [&](const nn::ModelParameters& p) {
      return fix_fn(p) + mix_cfg.combine_coeff * mix_fn(p);
    };
    const auto contrastive_fn = [&](const nn::ModelParameters& p) {
      return oracles::contrastive_loss(oracles::forward(p, batch).embeddings, y_a, tau).value();
    };

    const auto ce = losses::classification_loss(params, batch, y_a);
    const auto fix = losses::fix_loss(params, batch, y_a, shrink);
    const auto mix = losses::mix_loss(params, mixed, lambda, y_a, y_b, shrink);
    const auto combined = losses::combined_loss(*fix, mix, mix_cfg);
    const auto con = losses::contrastive_objective(params, batch, y_a, {tau});

    struct Item {
      const char* name;
      const losses::LossResult* result;
      std::function<double(const nn::ModelParameters&)> fn;
    };
    const Item items[] = {{"cross_entropy", &ce, ce_fn},
                          {"contrastive", con ? &*con : nullptr, contrastive_fn},
                          {"fix", fix ? &*fix : nullptr, fix_fn},
                          {"mix", &mix, mix_fn},
                          {"combined", &combined, combined_fn}};
    for (const auto& item : items) {
      ++r.cases;
      if (item.result == nullptr) {
        note_failure(r, "net " + std::to_string(net) + ": " + item.name + " reported skipped");
        continue;
      }
      const double value_err = std::abs(item.result->loss - item.fn(params));
      if (value_err > 1e-10) {
        note_failure(r, "net " + std::to_string(net) + ": " + item.name +
                            fmt(" loss value off by %.3g", value_err));
      }
      const auto check = oracles::finite_difference_check(params, item.result->grads, item.fn);
      r.max_error = std::max(r.max_error, check.max_relative_error);
      if (!(check.max_relative_error < r.tolerance)) {
        note_failure(r, "net " + std::to_string(net) + ": " + item.name +
                            fmt(" relative error %.3g (abs %.3g)", check.max_relative_error,
                                check.max_absolute_error));
      }
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_partition(const SelfCheckOptions& opts) {
  const Timer timer;
  // max_error: worst relative deviation from uniform at alpha=1000.
  SuiteReport r = start_suite("partition_invariants", 0.2);
  constexpr std::size_t kClasses = 4;
  constexpr std::size_t kClients = 20;
  const data::Dataset pool = data::generate_blobs(kClasses, 2, 2500, 0.1, opts.seed);

  for (std::size_t s = 0; s < opts.partition_seeds; ++s) {
    for (const double alpha : {1000.0, 0.1}) {
      const data::PartitionConfig cfg{kClients, alpha, derive_seed(opts.seed, {104, s})};
      const auto shards = data::lda_partition(pool, cfg);
      const std::string tag = fmt("seed %.0f alpha %g", static_cast<double>(s), alpha);
      ++r.cases;
      if (shards.size() != kClients) {
        note_failure(r, tag + ": wrong shard count");
        continue;
      }
      // Exhaustive and disjoint.
      std::vector<int> seen(pool.size(), 0);
      std::size_t total = 0;
      for (const auto& shard : shards) {
        total += shard.size();
        for (const std::size_t i : shard.unlabeled().pool_indices) {
          if (i >= pool.size() || seen[i]++ != 0) {
            note_failure(r, tag + ": sample assigned twice or out of range");
          }
        }
      }
      if (total != pool.size()) {
        note_failure(r, tag + ": shard sizes do not sum to the pool size");
      }

      double share_sum = 0.0;
      std::size_t nonempty = 0;
      for (const auto& shard : shards) {
        const auto labels = data::diagnostics::hidden_labels(shard);
        if (labels.empty()) {
          continue;
        }
        std::vector<double> hist(kClasses, 0.0);
        for (const int y : labels) {
          hist[static_cast<std::size_t>(y)] += 1.0;
        }
        const double n = static_cast<double>(labels.size());
        share_sum += *std::max_element(hist.begin(), hist.end()) / n;
        ++nonempty;
        if (alpha == 1000.0) {
          const double uniform = n / kClasses;
          for (const double h : hist) {
            r.max_error = std::max(r.max_error, std::abs(h - uniform) / uniform);
          }
        }
      }
      if (alpha == 1000.0 && r.max_error > r.tolerance) {
        note_failure(r, tag + fmt(": class histogram deviates %.3g from uniform", r.max_error));
      }
      if (alpha == 0.1) {
        const double mean_share = nonempty ? share_sum / static_cast<double>(nonempty) : 0.0;
        if (!(mean_share > 0.5)) {
          note_failure(r, tag + fmt(": mean largest-class share %.3g not above 0.5", mean_share));
        }
      }
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_aggregation(const SelfCheckOptions& opts) {
  const Timer timer;
  SuiteReport r = start_suite("aggregation_algebra", 1e-12);
  Rng rng = make_rng(opts.seed, {105});
  const nn::NetworkSpec spec{3, {4}, 2, 2};

  const auto filled = [&](double v) {
    nn::ModelParameters p = nn::zeros(spec);
    for (auto t : p.tensors()) {
      std::fill(t.begin(), t.end(), v);
    }
    return p;
  };
  const auto update = [](std::size_t id, nn::ModelParameters p, double w) {
    fed::ClientUpdate u;
    u.client_id = id;
    u.params = std::move(p);
    u.weight_basis = w;
    return u;
  };

  // Weights (1, 3) over constant parameters 1 and 3.
  {
    const std::vector<fed::ClientUpdate> ups{update(0, filled(1.0), 1.0),
                                             update(1, filled(3.0), 3.0)};
    const auto agg = fed::fedavg_aggregate(ups, filled(0.0));
    ++r.cases;
    if (!(agg == filled(2.5))) {
      note_failure(r, "weights (1,3) over 1.0 and 3.0 did not give 2.5");
    }
  }
  // All skipped returns the fallback.
  {
    fed::ClientUpdate skipped;
    skipped.client_id = 3;
    const std::vector<fed::ClientUpdate> ups{skipped};
    const auto fallback = nn::init_params(spec, rng());
    ++r.cases;
    if (!(fed::fedavg_aggregate(ups, fallback) == fallback)) {
      note_failure(r, "all-skipped aggregation did not return the fallback");
    }
  }

  for (std::size_t k = 0; k < opts.aggregation_cases; ++k) {
    const std::size_t m = pick(rng, 1, 6);
    std::vector<fed::ClientUpdate> ups;
    for (std::size_t i = 0; i < m; ++i) {
      ups.push_back(update(i * 7 + 1, nn::init_params(spec, rng()), 1.0 + pick(rng, 0, 50)));
    }
    const auto fallback = nn::init_params(spec, rng());
    const auto agg = fed::fedavg_aggregate(ups, fallback);
    ++r.cases;

    // Oracle: plain convex combination.
    double wsum = 0.0;
    for (const auto& u : ups) {
      wsum += u.weight_basis;
    }
    const auto agg_t = agg.tensors();
    double err = 0.0;
    for (std::size_t t = 0; t < agg_t.size(); ++t) {
      for (std::size_t e = 0; e < agg_t[t].size(); ++e) {
        double want = 0.0;
        double scale = 0.0;
        for (const auto& u : ups) {
          const double v = u.params->tensors()[t][e];
          want += u.weight_basis / wsum * v;
          scale = std::max(scale, std::abs(v));
        }
        err = std::max(err, std::abs(agg_t[t][e] - want) / std::max(scale, 1e-300));
      }
    }
    r.max_error = std::max(r.max_error, err);
    if (!(err <= r.tolerance)) {
      note_failure(r, "case " + std::to_string(k) + fmt(": relative deviation %.3g", err));
    }

    // Identity: k copies of the same parameters.
    std::vector<fed::ClientUpdate> copies;
    for (std::size_t i = 0; i < m; ++i) {
      copies.push_back(update(i, *ups[0].params, 1.0 + static_cast<double>(i)));
    }
    if (!(fed::fedavg_aggregate(copies, fallback) == *ups[0].params)) {
      note_failure(r, "case " + std::to_string(k) + ": identical updates not a fixed point");
    }

    // Order of the list does not matter.
    auto shuffled = ups;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (!(fed::fedavg_aggregate(shuffled, fallback) == agg)) {
      note_failure(r, "case " + std::to_string(k) + ": result depends on update order");
    }

    // A skipped client leaves the result bit-identical.
    auto with_skip = ups;
    fed::ClientUpdate skipped;
    skipped.client_id = 1000;
    skipped.weight_basis = 5.0;
    with_skip.insert(with_skip.begin() + static_cast<std::ptrdiff_t>(pick(rng, 0, m)), skipped);
    if (!(fed::fedavg_aggregate(with_skip, fallback) == agg)) {
      note_failure(r, "case " + std::to_string(k) + ": skipped client changed the aggregate");
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SelfCheckReport run_selfcheck(const SelfCheckOptions& opts) {
  SelfCheckReport report;
  report.suites.push_back(check_contrastive(opts));
  report.suites.push_back(check_pseudo_label(opts));
  report.suites.push_back(check_gradients(opts));
  report.suites.push_back(check_partition(opts));
  report.suites.push_back(check_aggregation(opts));
  return report;
}

void print_report(std::ostream& os, const SelfCheckReport& report) {
  char line[256];
  for (const auto& s : report.suites) {
    std::snprintf(line, sizeof line, "%-28s %s  cases=%zu  max_error=%.3e  tolerance=%.1e  time=%.2fs",
                  s.name.c_str(), s.passed ? "PASS" : "FAIL", s.cases, s.max_error, s.tolerance,
                  s.seconds);
    os << line << '\n';
    if (!s.passed && !s.detail.empty()) {
      os << "    " << s.detail << '\n';
    }
  }
  os << (report.passed() ? "selfcheck: all suites passed" : "selfcheck: FAILED") << '\n';
}

}  // namespace fedanchor::experiment
