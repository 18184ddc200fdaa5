#include "fedanchor/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

namespace fedanchor::fed {
namespace {

void check_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw NumericDivergence(std::string("non-finite loss in ") + where);
  }
}

std::vector<std::size_t> shuffled_range(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Rows of `features` for positions [begin, end) of `order` into `items`.
Matrix gather(const Matrix& features, std::span<const anchor::LabeledIndex> items,
              std::span<const std::size_t> order, std::size_t begin, std::size_t end,
              std::vector<int>& labels) {
  Matrix out(end - begin, features.cols());
  labels.clear();
  for (std::size_t k = begin; k < end; ++k) {
    const auto& item = items[order[k]];
    const auto src = features.row(item.sample);
    std::copy(src.begin(), src.end(), out.row(k - begin).begin());
    labels.push_back(item.label);
  }
  return out;
}

losses::RowTransform weak_transform(const data::AugmentationConfig& aug, Rng& rng) {
  return [&aug, &rng](std::span<double> x) { data::weak_augment(x, aug, rng); };
}

losses::RowTransform strong_transform(const data::AugmentationConfig& aug, Rng& rng) {
  return [&aug, &rng](std::span<double> x) { data::strong_augment(x, aug, rng); };
}

// One epoch of cross-entropy SGD over `ds` in shuffled mini-batches. Returns
// the mean batch loss.
double cross_entropy_epoch(nn::ModelParameters& params, const data::Dataset& ds,
                           std::size_t batch_size, const nn::OptimizerConfig& opt, Rng& rng,
                           std::size_t* steps = nullptr) {
  nn::OptimizerState state = nn::OptimizerState::for_params(params);
  const auto order = shuffled_range(ds.size(), rng);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const std::span<const std::size_t> idx(order.data() + begin, end - begin);
    const data::Dataset batch = ds.subset(idx);
    auto res = losses::classification_loss(params, batch.features, batch.labels);
    check_finite(res.loss, "cross-entropy epoch");
    nn::sgd_step(params, res.grads, state, opt, nn::ParamGroups::classifier());
    total += res.loss;
    ++batches;
  }
  if (steps != nullptr) {
    *steps += batches;
  }
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

double mixup_epoch(nn::ModelParameters& params, const data::Dataset& ds,
                   const FederationConfig& cfg, Rng& rng) {
  nn::OptimizerState state = nn::OptimizerState::for_params(params);
  const auto order = shuffled_range(ds.size(), rng);
  const auto weak = weak_transform(cfg.augmentation, rng);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    const data::Dataset batch = ds.subset(idx);
    std::shuffle(idx.begin(), idx.end(), rng);
    const data::Dataset partner = ds.subset(idx);
    const double lambda = losses::sample_mixup_lambda(cfg.mixup, rng);
    Matrix mixed(batch.size(), batch.dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto m = losses::mixup_pair(batch.features.row(i), partner.features.row(i), lambda);
      std::copy(m.x.begin(), m.x.end(), mixed.row(i).begin());
    }
    auto res = losses::mix_loss(params, mixed, lambda, batch.labels, partner.labels, weak);
    check_finite(res.loss, "server mixup epoch");
    nn::sgd_step(params, res.grads, state, cfg.server_optimizer, nn::ParamGroups::classifier());
    total += res.loss;
    ++batches;
  }
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

// Contrastive epoch. Batches with no within-class or no cross-class pair are
// skipped.
double contrastive_epoch(nn::ModelParameters& params, const data::Dataset& ds,
                         const FederationConfig& cfg, Rng& rng, ServerTrainStats& stats) {
  nn::OptimizerState state = nn::OptimizerState::for_params(params);
  const auto order = shuffled_range(ds.size(), rng);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    const std::span<const std::size_t> idx(order.data() + begin, end - begin);
    const data::Dataset batch = ds.subset(idx);
    auto res = losses::contrastive_objective(params, batch.features, batch.labels, cfg.contrastive);
    if (!res) {
      ++stats.skipped_contrastive_batches;
      continue;
    }
    check_finite(res->loss, "server contrastive epoch");
    nn::sgd_step(params, res->grads, state, cfg.server_optimizer, nn::ParamGroups::embedder());
    total += res->loss;
    ++batches;
  }
  stats.contrastive_batches = batches;
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

// Local training on pseudo-labeled data: fix/mix construction, then
// local_epochs over the batches of D^mix.
ClientUpdate train_on_pseudo_labels(const nn::ModelParameters& global,
                                    const data::UnlabeledShard& shard,
                                    std::vector<anchor::PseudoLabelRecord> records,
                                    double threshold, const FederationConfig& cfg, Rng& rng) {
  ClientUpdate update;
  update.client_id = shard.client_id;
  update.shard_size = shard.size();

  const auto fix = anchor::build_fix_dataset(records, anchor::LabelingConfig{threshold, 0});
  const auto mix = anchor::build_mix_dataset(records, fix.size(), rng);
  update.qualified_count = fix.size();
  update.trained_sample_count = fix.size();
  update.records = std::move(records);
  update.weight_basis = cfg.aggregation_weighting == AggregationWeighting::dataset_size
                            ? static_cast<double>(shard.size())
                            : static_cast<double>(fix.size());
  if (fix.empty()) {
    return update;
  }

  nn::ModelParameters params = global;
  nn::OptimizerState state = nn::OptimizerState::for_params(params);
  const auto weak = weak_transform(cfg.augmentation, rng);
  const auto strong = strong_transform(cfg.augmentation, rng);
  std::vector<int> fix_labels;
  std::vector<int> mix_labels;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto fix_order = shuffled_range(fix.size(), rng);
    const auto mix_order = shuffled_range(mix.size(), rng);
    for (std::size_t begin = 0; begin < mix.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(mix.size(), begin + cfg.batch_size);
      const Matrix x_fix = gather(shard.features, fix, fix_order, begin, end, fix_labels);
      auto step = losses::fix_loss(params, x_fix, fix_labels, strong);
      if (cfg.client_mixup_enabled) {
        const Matrix x_mix = gather(shard.features, mix, mix_order, begin, end, mix_labels);
        const double lambda = losses::sample_mixup_lambda(cfg.mixup, rng);
        Matrix mixed(x_fix.rows(), x_fix.cols());
        for (std::size_t i = 0; i < x_fix.rows(); ++i) {
          const auto m = losses::mixup_pair(x_fix.row(i), x_mix.row(i), lambda);
          std::copy(m.x.begin(), m.x.end(), mixed.row(i).begin());
        }
        const auto mixed_loss =
            losses::mix_loss(params, mixed, lambda, fix_labels, mix_labels, weak);
        step = losses::combined_loss(*step, mixed_loss, cfg.mixup);
      }
      check_finite(step->loss, "client local training");
      nn::sgd_step(params, step->grads, state, cfg.client_optimizer,
                   nn::ParamGroups::classifier());
      ++update.optimizer_steps;
    }
  }
  update.params = std::move(params);
  return update;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - peak);
    sum += p[c];
  }
  for (double& v : p) {
    v /= sum;
  }
  return p;
}

data::Dataset labeled_view(const data::ClientShard& shard, std::size_t num_classes) {
  data::Dataset ds;
  ds.features = shard.unlabeled().features;
  const auto labels = data::diagnostics::hidden_labels(shard);
  ds.labels.assign(labels.begin(), labels.end());
  ds.num_classes = num_classes;
  return ds;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::fedanchor:
      return "fedanchor";
    case Method::fedanchor_mix:
      return "fedanchor_mix";
    case Method::prediction_threshold_baseline:
      return "prediction_threshold_baseline";
    case Method::supervised_baseline:
      return "supervised_baseline";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (const Method m : {Method::fedanchor, Method::fedanchor_mix,
                         Method::prediction_threshold_baseline, Method::supervised_baseline}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  return std::nullopt;
}

bool uses_anchor_table(Method m) { return m == Method::fedanchor || m == Method::fedanchor_mix; }

std::string_view to_string(AggregationWeighting w) {
  return w == AggregationWeighting::dataset_size ? "dataset_size" : "trained_size";
}

std::optional<AggregationWeighting> parse_weighting(std::string_view name) {
  if (name == "dataset_size") {
    return AggregationWeighting::dataset_size;
  }
  if (name == "trained_size") {
    return AggregationWeighting::trained_size;
  }
  return std::nullopt;
}

void FederationConfig::validate() const {
  if (!(participation_ratio > 0.0 && participation_ratio <= 1.0)) {
    throw std::invalid_argument("FederationConfig: participation_ratio must be in (0, 1]");
  }
  if (rounds < 1 || local_epochs < 1) {
    throw std::invalid_argument("FederationConfig: rounds and local_epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("FederationConfig: batch_size must be >= 1");
  }
  if (!(pretrain_lr > 0.0)) {
    throw std::invalid_argument("FederationConfig: pretrain_lr must be > 0");
  }
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw std::invalid_argument("FederationConfig: confidence_threshold must be in [0,1]");
  }
  client_optimizer.validate();
  server_optimizer.validate();
  labeling.validate();
  contrastive.validate();
  mixup.validate();
  augmentation.validate();
}

void pretrain_server(nn::ModelParameters& params, const data::Dataset& anchor,
                     const FederationConfig& cfg, Rng& rng) {
  if (anchor.size() == 0) {
    throw std::invalid_argument("pretrain_server: anchor set is empty");
  }
  nn::OptimizerConfig opt = cfg.server_optimizer;
  opt.learning_rate = cfg.pretrain_lr;
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    cross_entropy_epoch(params, anchor, cfg.batch_size, opt, rng);
  }
}

std::vector<std::size_t> select_clients(std::size_t num_clients, double ratio, std::size_t round,
                                        std::uint64_t seed) {
  if (num_clients == 0) {
    throw std::invalid_argument("select_clients: no clients");
  }
  const auto wanted = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(num_clients)));
  const std::size_t k = std::clamp<std::size_t>(wanted, 1, num_clients);
  Rng rng = make_rng(seed, {stream::selection, round});
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientUpdate client_update_fedanchor(const nn::ModelParameters& global,
                                     const anchor::AnchorEmbeddingTable& table,
                                     const data::UnlabeledShard& shard,
                                     const FederationConfig& cfg, Rng& rng) {
  const auto weak = weak_transform(cfg.augmentation, rng);
  auto records = anchor::label_samples(global, shard.features, table, cfg.labeling, weak);
  return train_on_pseudo_labels(global, shard, std::move(records), cfg.labeling.threshold, cfg,
                                rng);
}

ClientUpdate client_update_prediction_threshold(const nn::ModelParameters& global,
                                                const data::UnlabeledShard& shard,
                                                const FederationConfig& cfg, Rng& rng) {
  std::vector<anchor::PseudoLabelRecord> records;
  records.reserve(shard.size());
  if (shard.size() > 0) {
    const nn::ForwardOutput fwd = nn::forward(global, shard.features);
    for (std::size_t i = 0; i < shard.size(); ++i) {
      records.push_back(
          anchor::record_from_scores(i, softmax(fwd.logits.row(i)), cfg.confidence_threshold));
    }
  }
  return train_on_pseudo_labels(global, shard, std::move(records), cfg.confidence_threshold, cfg,
                                rng);
}

ClientUpdate client_update_supervised(const nn::ModelParameters& global,
                                      const data::Dataset& labeled_shard, std::size_t client_id,
                                      const FederationConfig& cfg, Rng& rng) {
  ClientUpdate update;
  update.client_id = client_id;
  update.shard_size = labeled_shard.size();
  update.weight_basis = static_cast<double>(labeled_shard.size());
  update.qualified_count = labeled_shard.size();
  update.trained_sample_count = labeled_shard.size();
  if (labeled_shard.size() == 0) {
    return update;
  }
  nn::ModelParameters params = global;
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    cross_entropy_epoch(params, labeled_shard, cfg.batch_size, cfg.client_optimizer, rng,
                        &update.optimizer_steps);
  }
  update.params = std::move(params);
  return update;
}

nn::ModelParameters fedavg_aggregate(std::span<const ClientUpdate> updates,
                                     const nn::ModelParameters& fallback) {
  std::vector<const ClientUpdate*> active;
  for (const auto& u : updates) {
    if (u.weight_basis < 0.0) {
      throw std::invalid_argument("fedavg_aggregate: negative weight basis");
    }
    if (!u.skipped() && u.weight_basis > 0.0) {
      active.push_back(&u);
    }
  }
  if (active.empty()) {
    return fallback;
  }
  std::sort(active.begin(), active.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
    return a->client_id < b->client_id;
  });
  double total = 0.0;
  for (const auto* u : active) {
    total += u->weight_basis;
  }
  // w = w_first + sum_m p_m (w_m - w_first): exact when all updates agree.
  nn::ModelParameters out = *active.front()->params;
  auto dst = out.tensors();
  std::vector<std::vector<std::span<const double>>> src;
  src.reserve(active.size());
  for (const auto* u : active) {
    src.push_back(u->params->tensors());
    if (src.back().size() != dst.size()) {
      throw std::invalid_argument("fedavg_aggregate: updates have different shapes");
    }
  }
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      const double base = src.front()[t][i];
      double delta = 0.0;
      for (std::size_t m = 1; m < active.size(); ++m) {
        delta += (active[m]->weight_basis / total) * (src[m][t][i] - base);
      }
      dst[t][i] = base + delta;
    }
  }
  return out;
}

ServerTrainStats server_train(nn::ModelParameters& params, const data::Dataset& anchor,
                              const FederationConfig& cfg, Rng& rng) {
  ServerTrainStats stats;
  if (cfg.method == Method::supervised_baseline) {
    return stats;
  }
  if (anchor.size() == 0) {
    throw std::invalid_argument("server_train: anchor set is empty");
  }
  if (cfg.method == Method::fedanchor_mix) {
    stats.supervised_loss = mixup_epoch(params, anchor, cfg, rng);
  } else {
    stats.supervised_loss =
        cross_entropy_epoch(params, anchor, cfg.batch_size, cfg.server_optimizer, rng);
  }
  stats.supervised_batches = (anchor.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (uses_anchor_table(cfg.method)) {
    stats.contrastive_loss = contrastive_epoch(params, anchor, cfg, rng, stats);
  }
  return stats;
}

double communication_overhead(std::size_t anchor_count, std::size_t anchor_dim,
                              std::size_t model_param_count) {
  if (model_param_count == 0) {
    throw std::invalid_argument("communication_overhead: model has no parameters");
  }
  return 100.0 * static_cast<double>(anchor_count) * static_cast<double>(anchor_dim) /
         static_cast<double>(model_param_count);
}

std::vector<int> predict(const nn::ModelParameters& params, const Matrix& features) {
  std::vector<int> out;
  if (features.rows() == 0) {
    return out;
  }
  const nn::ForwardOutput fwd = nn::forward(params, features);
  out.reserve(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto row = fwd.logits.row(i);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

double evaluate_accuracy(const nn::ModelParameters& params, const data::Dataset& dataset) {
  if (dataset.size() == 0) {
    return 0.0;
  }
  const auto pred = predict(params, dataset.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == dataset.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

namespace {

RoundMetrics run_round_impl(const FederationData& data, SimulationState& state,
                            const FederationConfig& cfg) {
  const std::size_t round = state.completed_rounds + 1;
  const std::size_t num_classes = data.anchor.num_classes;
  const nn::ModelParameters& global = state.params;

  RoundMetrics metrics;
  metrics.round = round;

  const anchor::AnchorEmbeddingTable table =
      anchor::compute_anchor_table(global, data.anchor.features, data.anchor.labels, num_classes);
  metrics.participants = select_clients(data.clients.size(), cfg.participation_ratio, round,
                                        cfg.seed);

  std::vector<ClientUpdate> updates(metrics.participants.size());
  auto run_client = [&](std::size_t slot) {
    const auto& shard = data.clients.at(metrics.participants[slot]);
    Rng rng = make_rng(cfg.seed, {stream::client, round, shard.client_id()});
    switch (cfg.method) {
      case Method::fedanchor:
      case Method::fedanchor_mix:
        updates[slot] = client_update_fedanchor(global, table, shard.unlabeled(), cfg, rng);
        break;
      case Method::prediction_threshold_baseline:
        updates[slot] = client_update_prediction_threshold(global, shard.unlabeled(), cfg, rng);
        break;
      case Method::supervised_baseline:
        updates[slot] = client_update_supervised(global, labeled_view(shard, num_classes),
                                                 shard.client_id(), cfg, rng);
        break;
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(cfg.threads, 1), updates.size());
  if (workers <= 1) {
    for (std::size_t s = 0; s < updates.size(); ++s) {
      run_client(s);
    }
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < updates.size(); s += workers) {
            run_client(s);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
    for (const auto& e : errors) {
      if (e) {
        std::rethrow_exception(e);
      }
    }
  }

  // Diagnostics with hidden labels, from the broadcast weights w_t.
  std::size_t total_samples = 0;
  std::size_t anchor_head_hits = 0;
  std::size_t cls_head_hits = 0;
  std::size_t qualified = 0;
  std::size_t qualified_hits = 0;
  for (const auto& u : updates) {
    const auto& shard = data.clients.at(u.client_id);
    const auto truth = data::diagnostics::hidden_labels(shard);
    total_samples += shard.size();
    qualified += u.qualified_count;
    if (u.skipped()) {
      ++metrics.skipped_clients;
    }
    if (shard.size() == 0) {
      continue;
    }
    const nn::ForwardOutput fwd = nn::forward(global, shard.unlabeled().features);
    for (std::size_t i = 0; i < shard.size(); ++i) {
      const auto rec = anchor::pseudo_label(fwd.anchor_embeddings.row(i), table);
      anchor_head_hits += rec.pseudo_label == truth[i] ? 1 : 0;
      const auto row = fwd.logits.row(i);
      const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
      cls_head_hits += arg == truth[i] ? 1 : 0;
    }
    for (const auto& rec : u.records) {
      if (rec.qualifies) {
        qualified_hits += rec.pseudo_label == truth[rec.sample_index] ? 1 : 0;
      }
    }
  }
  if (cfg.method == Method::supervised_baseline) {
    qualified_hits = qualified;
  }
  const auto n_updates = static_cast<double>(updates.size());
  if (total_samples > 0) {
    metrics.pseudo_label_accuracy_anchor_head =
        static_cast<double>(anchor_head_hits) / static_cast<double>(total_samples);
    metrics.pseudo_label_accuracy_classification_head =
        static_cast<double>(cls_head_hits) / static_cast<double>(total_samples);
  }
  if (qualified > 0) {
    metrics.qualified_pseudo_label_accuracy =
        static_cast<double>(qualified_hits) / static_cast<double>(qualified);
  }
  metrics.avg_qualified_samples = static_cast<double>(qualified) / n_updates;
  metrics.avg_shard_size = static_cast<double>(total_samples) / n_updates;

  const std::size_t model_size = nn::param_count(global);
  const std::size_t table_size =
      uses_anchor_table(cfg.method) ? table.size() * table.dim() : 0;
  metrics.overhead_percent =
      uses_anchor_table(cfg.method) ? communication_overhead(table.size(), table.dim(), model_size)
                                    : 0.0;
  metrics.downstream_scalars = updates.size() * (model_size + table_size);
  metrics.upstream_scalars = (updates.size() - metrics.skipped_clients) * model_size;

  nn::ModelParameters next = fedavg_aggregate(updates, global);
  Rng server_rng = make_rng(cfg.seed, {stream::server, round});
  const ServerTrainStats stats = server_train(next, data.anchor, cfg, server_rng);
  metrics.server_supervised_loss = stats.supervised_loss;
  metrics.server_contrastive_loss = stats.contrastive_loss;
  if (!next.all_finite()) {
    std::ostringstream msg;
    msg << "parameters became non-finite in round " << round;
    throw NumericDivergence(msg.str());
  }

  state.params = std::move(next);
  state.completed_rounds = round;
  metrics.test_accuracy = evaluate_accuracy(state.params, data.test);
  return metrics;
}

}  // namespace

RoundMetrics run_round(const FederationData& data, SimulationState& state,
                       const FederationConfig& cfg) {
  try {
    return run_round_impl(data, state, cfg);
  } catch (const std::domain_error& e) {
    // backward() rejects non-finite values before a loss check can see them.
    throw NumericDivergence("round " + std::to_string(state.completed_rounds + 1) + ": " + e.what());
  }
}

}  // namespace fedanchor::fed
