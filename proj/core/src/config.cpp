#include "fedanchor/config.hpp"

#include <cmath>
#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fedanchor::experiment {
namespace {

using nlohmann::json;

std::string describe(const json& v) { return v.dump(); }

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  ~Section() = default;
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) {
        throw ConfigError(field(key), "value " + describe(*v) + " is not a number");
      }
      out = v->get<double>();
      if (!std::isfinite(out)) {
        throw ConfigError(field(key), "value must be finite");
      }
    }
  }

  template <std::unsigned_integral T>
  void read(const std::string& key, T& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw ConfigError(field(key),
                          "value " + describe(*v) + " is not a non-negative integer");
      }
      out = v->get<T>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) {
        throw ConfigError(field(key), "value " + describe(*v) + " is not a boolean");
      }
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) {
        throw ConfigError(field(key), "value " + describe(*v) + " is not a string");
      }
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) {
        throw ConfigError(field(key), "value " + describe(*v) + " is not an array");
      }
      out.clear();
      for (const auto& item : *v) {
        if (!item.is_number_integer() || item.get<long long>() < 0) {
          throw ConfigError(field(key), "entry " + describe(item) + " is not a non-negative integer");
        }
        out.push_back(item.get<std::size_t>());
      }
    }
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (seen_.count(it.key()) == 0) {
        throw ConfigError(field(it.key()), "unknown key");
      }
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(Section& parent, const std::string& key, nn::OptimizerConfig& opt) {
  if (const json* node = parent.find(key)) {
    Section s(*node, parent.field(key));
    s.read("learning_rate", opt.learning_rate);
    s.read("momentum", opt.momentum);
    s.read("weight_decay", opt.weight_decay);
    s.finish();
  }
}

json optimizer_json(const nn::OptimizerConfig& opt) {
  return json{{"learning_rate", opt.learning_rate},
              {"momentum", opt.momentum},
              {"weight_decay", opt.weight_decay}};
}

template <typename T>
std::string show(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void require(bool ok, const std::string& field, const std::string& value,
             const std::string& constraint) {
  if (!ok) {
    throw ConfigError(field, "value " + value + " violates " + constraint);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  require(d.source == "blobs" || d.source == "csv", "dataset.source", d.source,
          "one of {blobs, csv}");
  require(d.num_classes >= 1, "dataset.num_classes", show(d.num_classes), ">= 1");
  if (d.source == "blobs") {
    require(d.dim >= 1, "dataset.dim", show(d.dim), ">= 1");
    require(d.per_class >= 1, "dataset.per_class", show(d.per_class), ">= 1");
    require(d.spread >= 0.0, "dataset.spread", show(d.spread), ">= 0");
    require(d.test_per_class >= 1, "dataset.test_per_class", show(d.test_per_class), ">= 1");
  } else {
    require(!d.train_csv.empty(), "dataset.train_csv", "\"\"", "non-empty path");
    require(!d.test_csv.empty(), "dataset.test_csv", "\"\"", "non-empty path");
  }
  require(anchor_size >= d.num_classes, "anchor_size", show(anchor_size),
          ">= dataset.num_classes (" + show(d.num_classes) + ")");
  require(!hidden_dims.empty(), "network.hidden_dims", "[]", "at least one layer");
  for (const std::size_t h : hidden_dims) {
    require(h >= 1, "network.hidden_dims", show(h), ">= 1");
  }
  require(anchor_dim >= 1, "network.anchor_dim", show(anchor_dim), ">= 1");
  require(partition.num_clients >= 1, "partition.num_clients", show(partition.num_clients),
          ">= 1");
  require(partition.dirichlet_alpha > 0.0, "partition.dirichlet_alpha",
          show(partition.dirichlet_alpha), "> 0");

  const auto& f = federation;
  require(f.rounds >= 1, "federation.rounds", show(f.rounds), ">= 1");
  require(f.local_epochs >= 1, "federation.local_epochs", show(f.local_epochs), ">= 1");
  require(f.batch_size >= 1, "federation.batch_size", show(f.batch_size), ">= 1");
  require(f.participation_ratio > 0.0 && f.participation_ratio <= 1.0,
          "federation.participation_ratio", show(f.participation_ratio), "(0,1]");
  require(f.participation_ratio * static_cast<double>(partition.num_clients) >= 1.0 - 1e-12,
          "federation.participation_ratio", show(f.participation_ratio),
          "participation_ratio * partition.num_clients >= 1");
  require(f.pretrain_lr > 0.0, "federation.pretrain_lr", show(f.pretrain_lr), "> 0");
  require(f.confidence_threshold >= 0.0 && f.confidence_threshold <= 1.0,
          "federation.confidence_threshold", show(f.confidence_threshold), "[0,1]");
  for (const auto& [name, opt] : {std::pair{"federation.client_optimizer", f.client_optimizer},
                                  std::pair{"federation.server_optimizer", f.server_optimizer}}) {
    require(opt.learning_rate > 0.0, std::string(name) + ".learning_rate",
            show(opt.learning_rate), "> 0");
    require(opt.momentum >= 0.0 && opt.momentum < 1.0, std::string(name) + ".momentum",
            show(opt.momentum), "[0,1)");
    require(opt.weight_decay >= 0.0, std::string(name) + ".weight_decay",
            show(opt.weight_decay), ">= 0");
  }
  require(f.labeling.threshold >= 0.0 && f.labeling.threshold <= 1.0, "labeling.threshold",
          show(f.labeling.threshold), "[0,1]");
  require(f.contrastive.temperature > 0.0, "contrastive.temperature",
          show(f.contrastive.temperature), "> 0");
  require(f.mixup.beta_param > 0.0, "mixup.beta_param", show(f.mixup.beta_param), "> 0");
  require(f.mixup.combine_coeff >= 0.0, "mixup.combine_coeff", show(f.mixup.combine_coeff),
          ">= 0");
  require(f.augmentation.weak_jitter_sigma >= 0.0, "augmentation.weak_jitter_sigma",
          show(f.augmentation.weak_jitter_sigma), ">= 0");
  require(f.augmentation.strong_jitter_sigma >= 0.0, "augmentation.strong_jitter_sigma",
          show(f.augmentation.strong_jitter_sigma), ">= 0");
  require(f.augmentation.strong_mask_fraction >= 0.0 && f.augmentation.strong_mask_fraction < 1.0,
          "augmentation.strong_mask_fraction", show(f.augmentation.strong_mask_fraction),
          "[0,1)");
}

nn::NetworkSpec ExperimentConfig::network_spec(std::size_t input_dim) const {
  nn::NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_dims = hidden_dims;
  spec.num_classes = dataset.num_classes;
  spec.anchor_dim = anchor_dim;
  return spec;
}

fed::FederationConfig ExperimentConfig::federation_config() const {
  fed::FederationConfig f = federation;
  f.seed = seed;
  return f;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  json root;
  const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
  if (blank) {
    root = json::object();
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
  }

  Section top(root, "");
  top.read("seed", cfg.seed);
  top.read("output_dir", cfg.output_dir);
  top.read("checkpoint_every", cfg.checkpoint_every);
  top.read("anchor_size", cfg.anchor_size);

  if (const json* node = top.find("dataset")) {
    Section s(*node, "dataset");
    s.read("source", cfg.dataset.source);
    s.read("num_classes", cfg.dataset.num_classes);
    s.read("dim", cfg.dataset.dim);
    s.read("per_class", cfg.dataset.per_class);
    s.read("spread", cfg.dataset.spread);
    s.read("test_per_class", cfg.dataset.test_per_class);
    s.read("train_csv", cfg.dataset.train_csv);
    s.read("test_csv", cfg.dataset.test_csv);
    s.finish();
  }
  if (const json* node = top.find("network")) {
    Section s(*node, "network");
    s.read("hidden_dims", cfg.hidden_dims);
    s.read("anchor_dim", cfg.anchor_dim);
    s.finish();
  }
  if (const json* node = top.find("partition")) {
    Section s(*node, "partition");
    s.read("num_clients", cfg.partition.num_clients);
    s.read("dirichlet_alpha", cfg.partition.dirichlet_alpha);
    s.finish();
  }
  auto& f = cfg.federation;
  if (const json* node = top.find("federation")) {
    Section s(*node, "federation");
    s.read("rounds", f.rounds);
    s.read("participation_ratio", f.participation_ratio);
    s.read("local_epochs", f.local_epochs);
    s.read("batch_size", f.batch_size);
    std::string method(fed::to_string(f.method));
    s.read("method", method);
    const auto m = fed::parse_method(method);
    if (!m) {
      throw ConfigError(s.field("method"),
                        "value \"" + method +
                            "\" violates one of {fedanchor, fedanchor_mix, "
                            "prediction_threshold_baseline, supervised_baseline}");
    }
    f.method = *m;
    std::string weighting(fed::to_string(f.aggregation_weighting));
    s.read("aggregation_weighting", weighting);
    const auto w = fed::parse_weighting(weighting);
    if (!w) {
      throw ConfigError(s.field("aggregation_weighting"),
                        "value \"" + weighting + "\" violates one of {dataset_size, trained_size}");
    }
    f.aggregation_weighting = *w;
    s.read("client_mixup", f.client_mixup_enabled);
    s.read("pretrain_epochs", f.pretrain_epochs);
    s.read("pretrain_lr", f.pretrain_lr);
    s.read("confidence_threshold", f.confidence_threshold);
    s.read("threads", f.threads);
    read_optimizer(s, "client_optimizer", f.client_optimizer);
    read_optimizer(s, "server_optimizer", f.server_optimizer);
    s.finish();
  }
  if (const json* node = top.find("labeling")) {
    Section s(*node, "labeling");
    s.read("threshold", f.labeling.threshold);
    s.read("ensemble_views", f.labeling.ensemble_views);
    s.finish();
  }
  if (const json* node = top.find("contrastive")) {
    Section s(*node, "contrastive");
    s.read("temperature", f.contrastive.temperature);
    s.finish();
  }
  if (const json* node = top.find("mixup")) {
    Section s(*node, "mixup");
    s.read("beta_param", f.mixup.beta_param);
    s.read("combine_coeff", f.mixup.combine_coeff);
    s.finish();
  }
  if (const json* node = top.find("augmentation")) {
    Section s(*node, "augmentation");
    s.read("weak_jitter_sigma", f.augmentation.weak_jitter_sigma);
    s.read("strong_jitter_sigma", f.augmentation.strong_jitter_sigma);
    s.read("strong_mask_fraction", f.augmentation.strong_mask_fraction);
    s.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("<file>", "cannot read " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string to_config_text(const ExperimentConfig& cfg) {
  const auto& f = cfg.federation;
  json root = {
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"checkpoint_every", cfg.checkpoint_every},
      {"anchor_size", cfg.anchor_size},
      {"dataset",
       {{"source", cfg.dataset.source},
        {"num_classes", cfg.dataset.num_classes},
        {"dim", cfg.dataset.dim},
        {"per_class", cfg.dataset.per_class},
        {"spread", cfg.dataset.spread},
        {"test_per_class", cfg.dataset.test_per_class},
        {"train_csv", cfg.dataset.train_csv},
        {"test_csv", cfg.dataset.test_csv}}},
      {"network", {{"hidden_dims", cfg.hidden_dims}, {"anchor_dim", cfg.anchor_dim}}},
      {"partition",
       {{"num_clients", cfg.partition.num_clients},
        {"dirichlet_alpha", cfg.partition.dirichlet_alpha}}},
      {"federation",
       {{"rounds", f.rounds},
        {"participation_ratio", f.participation_ratio},
        {"local_epochs", f.local_epochs},
        {"batch_size", f.batch_size},
        {"method", std::string(fed::to_string(f.method))},
        {"aggregation_weighting", std::string(fed::to_string(f.aggregation_weighting))},
        {"client_mixup", f.client_mixup_enabled},
        {"pretrain_epochs", f.pretrain_epochs},
        {"pretrain_lr", f.pretrain_lr},
        {"confidence_threshold", f.confidence_threshold},
        {"threads", f.threads},
        {"client_optimizer", optimizer_json(f.client_optimizer)},
        {"server_optimizer", optimizer_json(f.server_optimizer)}}},
      {"labeling",
       {{"threshold", f.labeling.threshold}, {"ensemble_views", f.labeling.ensemble_views}}},
      {"contrastive", {{"temperature", f.contrastive.temperature}}},
      {"mixup",
       {{"beta_param", f.mixup.beta_param}, {"combine_coeff", f.mixup.combine_coeff}}},
      {"augmentation",
       {{"weak_jitter_sigma", f.augmentation.weak_jitter_sigma},
        {"strong_jitter_sigma", f.augmentation.strong_jitter_sigma},
        {"strong_mask_fraction", f.augmentation.strong_mask_fraction}}},
  };
  return root.dump(2) + "\n";
}

}  // namespace fedanchor::experiment
