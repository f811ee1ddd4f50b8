#include "fedbalance/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fedbalance/errors.hpp"

namespace fedbalance {

using nlohmann::json;

std::string to_string(ApplyFrom a) {
  switch (a) {
    case ApplyFrom::Detection: return "detection";
    case ApplyFrom::Start: return "start";
    case ApplyFrom::Never: return "never";
  }
  return "detection";
}

ApplyFrom apply_from_from_string(const std::string& name) {
  if (name == "detection") return ApplyFrom::Detection;
  if (name == "start") return ApplyFrom::Start;
  if (name == "never") return ApplyFrom::Never;
  throw ConfigError("unknown mitigation.apply_from '" + name + "'");
}

namespace {

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

json to_json(const LossConfig& cfg) {
  json j{{"kind", to_string(cfg.kind)},
         {"alpha", cfg.alpha},
         {"beta", cfg.beta},
         {"focal_gamma", cfg.focal_gamma},
         {"ghmc_bins", cfg.ghmc_bins},
         {"ghmc_momentum", cfg.ghmc_momentum}};
  j["minority_set"] = cfg.minority_set ? json(*cfg.minority_set) : json(nullptr);
  return j;
}

LossConfig loss_config_from_json(const json& j) {
  const std::string w = "loss";
  only_keys(j, w, {"kind", "alpha", "beta", "focal_gamma", "ghmc_bins", "ghmc_momentum", "minority_set"});
  LossConfig cfg;
  std::string kind = to_string(cfg.kind);
  read(j, "kind", kind, w);
  cfg.kind = loss_kind_from_string(kind);
  read(j, "alpha", cfg.alpha, w);
  read(j, "beta", cfg.beta, w);
  read(j, "focal_gamma", cfg.focal_gamma, w);
  read(j, "ghmc_bins", cfg.ghmc_bins, w);
  read(j, "ghmc_momentum", cfg.ghmc_momentum, w);
  if (j.contains("minority_set") && !j.at("minority_set").is_null()) {
    cfg.minority_set = j.at("minority_set").get<std::vector<int>>();
  }
  return cfg;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& s = c.dataset.synthetic;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"mnist_dir", c.dataset.mnist_dir},
                  {"test_per_class", c.dataset.test_per_class},
                  {"feature_shift", c.dataset.feature_shift},
                  {"synthetic",
                   {{"class_count", s.class_count},
                    {"dim", s.dim},
                    {"per_class", s.per_class},
                    {"separation", s.separation},
                    {"noise_stddev", s.noise_stddev}}}};
  j["model"] = {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  const auto& p = c.partition;
  j["partition"] = {{"num_clients", p.num_clients},
                    {"classes_min", p.classes_min},
                    {"classes_max", p.classes_max},
                    {"samples_per_class", p.samples_per_class},
                    {"global_ratio", p.global_ratio},
                    {"minority_classes", p.minority_classes}};
  const auto& r = c.rounds;
  j["rounds"] = {{"clients_total", r.clients_total},
                 {"clients_selected", r.clients_selected},
                 {"local_epochs", r.local_epochs},
                 {"batch_size", r.batch_size},
                 {"learning_rate", r.learning_rate},
                 {"rounds_total", r.rounds_total},
                 {"selection", to_string(r.selection)},
                 {"workers", r.workers},
                 {"max_grad_norm", r.max_grad_norm}};
  j["loss"] = to_json(c.loss);
  j["mitigation"] = {{"apply_from", to_string(c.mitigation.apply_from)},
                     {"loss", to_json(c.mitigation.loss)}};
  const auto& m = c.monitor.monitor;
  j["monitor"] = {{"enabled", c.monitor.enabled},
                  {"ratio_threshold", m.ratio_threshold},
                  {"window", m.detection.window},
                  {"similarity", m.detection.similarity},
                  {"imbalance", m.detection.imbalance},
                  {"aux_per_class", m.aux_per_class},
                  {"divide_by_local_epochs", m.divide_by_local_epochs},
                  {"ratios_from_surviving", m.ratios_from_surviving}};
  j["acknowledgment_round"] = c.acknowledgment_round ? json(*c.acknowledgment_round) : json(nullptr);
  j["metrics"] = c.metrics;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  only_keys(j, "config",
            {"name", "seed", "output_dir", "dataset", "model", "partition", "rounds", "loss",
             "mitigation", "monitor", "acknowledgment_round", "metrics"});
  ExperimentConfig c;
  read(j, "name", c.name, "config");
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    only_keys(d, "dataset", {"kind", "mnist_dir", "test_per_class", "feature_shift", "synthetic"});
    read(d, "kind", c.dataset.kind, "dataset");
    read(d, "mnist_dir", c.dataset.mnist_dir, "dataset");
    read(d, "test_per_class", c.dataset.test_per_class, "dataset");
    read(d, "feature_shift", c.dataset.feature_shift, "dataset");
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      const std::string w = "dataset.synthetic";
      only_keys(s, w, {"class_count", "dim", "per_class", "separation", "noise_stddev"});
      read(s, "class_count", c.dataset.synthetic.class_count, w);
      read(s, "dim", c.dataset.synthetic.dim, w);
      read(s, "per_class", c.dataset.synthetic.per_class, w);
      read(s, "separation", c.dataset.synthetic.separation, w);
      read(s, "noise_stddev", c.dataset.synthetic.noise_stddev, w);
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    only_keys(m, "model", {"hidden", "activation"});
    read(m, "hidden", c.model.hidden, "model");
    std::string act = to_string(c.model.activation);
    read(m, "activation", act, "model");
    c.model.activation = activation_from_string(act);
  }
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    const std::string w = "partition";
    only_keys(p, w, {"num_clients", "classes_min", "classes_max", "samples_per_class", "global_ratio",
                     "minority_classes"});
    read(p, "num_clients", c.partition.num_clients, w);
    read(p, "classes_min", c.partition.classes_min, w);
    read(p, "classes_max", c.partition.classes_max, w);
    read(p, "samples_per_class", c.partition.samples_per_class, w);
    read(p, "global_ratio", c.partition.global_ratio, w);
    read(p, "minority_classes", c.partition.minority_classes, w);
  }
  if (j.contains("rounds")) {
    const auto& r = j.at("rounds");
    const std::string w = "rounds";
    only_keys(r, w, {"clients_total", "clients_selected", "local_epochs", "batch_size", "learning_rate",
                     "rounds_total", "selection", "workers", "max_grad_norm"});
    read(r, "clients_total", c.rounds.clients_total, w);
    read(r, "clients_selected", c.rounds.clients_selected, w);
    read(r, "local_epochs", c.rounds.local_epochs, w);
    read(r, "batch_size", c.rounds.batch_size, w);
    read(r, "learning_rate", c.rounds.learning_rate, w);
    read(r, "rounds_total", c.rounds.rounds_total, w);
    std::string sel = to_string(c.rounds.selection);
    read(r, "selection", sel, w);
    c.rounds.selection = selection_from_string(sel);
    read(r, "workers", c.rounds.workers, w);
    read(r, "max_grad_norm", c.rounds.max_grad_norm, w);
  }
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
  if (j.contains("mitigation")) {
    const auto& m = j.at("mitigation");
    only_keys(m, "mitigation", {"apply_from", "loss"});
    std::string from = to_string(c.mitigation.apply_from);
    read(m, "apply_from", from, "mitigation");
    c.mitigation.apply_from = apply_from_from_string(from);
    if (m.contains("loss")) c.mitigation.loss = loss_config_from_json(m.at("loss"));
  }
  if (j.contains("monitor")) {
    const auto& m = j.at("monitor");
    const std::string w = "monitor";
    only_keys(m, w, {"enabled", "ratio_threshold", "window", "similarity", "imbalance", "aux_per_class",
                     "divide_by_local_epochs", "ratios_from_surviving"});
    auto& mc = c.monitor.monitor;
    read(m, "enabled", c.monitor.enabled, w);
    read(m, "ratio_threshold", mc.ratio_threshold, w);
    read(m, "window", mc.detection.window, w);
    read(m, "similarity", mc.detection.similarity, w);
    read(m, "imbalance", mc.detection.imbalance, w);
    read(m, "aux_per_class", mc.aux_per_class, w);
    read(m, "divide_by_local_epochs", mc.divide_by_local_epochs, w);
    read(m, "ratios_from_surviving", mc.ratios_from_surviving, w);
  }
  if (j.contains("acknowledgment_round") && !j.at("acknowledgment_round").is_null()) {
    c.acknowledgment_round = j.at("acknowledgment_round").get<int>();
  }
  read(j, "metrics", c.metrics, "config");
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (dataset.kind != "synthetic" && dataset.kind != "mnist") {
    throw ConfigError("dataset.kind must be 'synthetic' or 'mnist', got '" + dataset.kind + "'");
  }
  const int q = dataset.kind == "mnist" ? 10 : dataset.synthetic.class_count;
  if (dataset.kind == "synthetic") {
    if (q < 2) throw ConfigError("dataset.synthetic.class_count must be >= 2");
    if (dataset.synthetic.per_class < 1) throw ConfigError("dataset.synthetic.per_class must be >= 1");
    if (dataset.test_per_class < 1) throw ConfigError("dataset.test_per_class must be >= 1");
  }
  if (!(dataset.feature_shift >= 0.0)) throw ConfigError("dataset.feature_shift must be >= 0");
  for (int h : model.hidden)
    if (h < 1) throw ConfigError("model.hidden widths must be >= 1");
  if (model.activation == Activation::Identity && !model.hidden.empty()) {
    throw ConfigError("model.activation must be relu or sigmoid");
  }
  partition.validate(q);
  rounds.validate();
  if (rounds.clients_total != partition.num_clients) {
    throw ConfigError("rounds.clients_total must equal partition.num_clients");
  }
  loss.validate(q);
  mitigation.loss.validate(q);
  const auto& m = monitor.monitor;
  if (!(m.ratio_threshold >= 0.0)) throw ConfigError("monitor.ratio_threshold must be >= 0");
  if (m.detection.window < 1) throw ConfigError("monitor.window must be >= 1");
  if (!(m.detection.similarity >= -1.0 && m.detection.similarity <= 1.0)) {
    throw ConfigError("monitor.similarity must lie in [-1, 1]");
  }
  if (!(m.detection.imbalance >= 1.0)) throw ConfigError("monitor.imbalance must be >= 1");
  if (m.aux_per_class < 1) throw ConfigError("monitor.aux_per_class must be >= 1");
  if (mitigation.apply_from == ApplyFrom::Detection && !monitor.enabled &&
      mitigation.loss.kind != loss.kind) {
    throw ConfigError("mitigation.apply_from = detection needs the monitor enabled");
  }
  if (acknowledgment_round && (*acknowledgment_round < 1 || *acknowledgment_round > rounds.rounds_total)) {
    throw ConfigError("acknowledgment_round must lie in [1, rounds_total]");
  }
  static const std::set<std::string> known{"ac_minority", "ac_majority", "accuracy", "auc"};
  for (const auto& name : metrics)
    if (!known.count(name)) throw ConfigError("unknown metric '" + name + "'");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace fedbalance
