#include "fedbalance/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "fedbalance/errors.hpp"
#include "fedbalance/rng.hpp"

namespace fedbalance {

using nlohmann::json;

namespace {

// Stream ids for derive_seed(cfg.seed, {...}).
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kTestStream = 0x7e57;
constexpr std::uint64_t kAuxStream = 0xa0c5;
constexpr std::uint64_t kPartitionStream = 0x9a27;
constexpr std::uint64_t kShiftStream = 0x51f7;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kRoundStream = 0x20d5;

Dataset subset(const Dataset& d, std::span<const int> idx) {
  Dataset out;
  out.features = d.gather(idx);
  out.labels = d.gather_labels(idx);
  out.class_count = d.class_count;
  return out;
}

std::string join(const auto& values, char sep = ';') {
  std::ostringstream os;
  os << std::setprecision(10);
  bool first = true;
  for (const auto& v : values) {
    if (!first) os << sep;
    os << v;
    first = false;
  }
  return os.str();
}

bool intersects(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<int> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return !both.empty();
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData out;
  std::vector<int> rest;
  if (cfg.dataset.kind == "mnist") {
    std::filesystem::path dir(cfg.dataset.mnist_dir);
    out.train = load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    out.test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    if (out.train.class_count != 10 || out.test.dim() != out.train.dim()) {
      throw ConfigError("mnist files in " + dir.string() + " do not look like a 10-class split");
    }
    out.test.class_count = out.train.class_count;
  } else {
    out.train = make_synthetic(cfg.dataset.synthetic, derive_seed(cfg.seed, {kDataStream}));
    auto [test, remaining] =
        split_per_class(out.train, cfg.dataset.test_per_class, derive_seed(cfg.seed, {kTestStream}));
    out.test_indices = std::move(test);
    out.test = subset(out.train, out.test_indices);
    rest = std::move(remaining);
  }
  auto [aux, pool] = split_per_class(out.train, cfg.monitor.monitor.aux_per_class,
                                     derive_seed(cfg.seed, {kAuxStream}), rest);
  out.aux_indices = std::move(aux);
  out.pool = std::move(pool);
  if (intersects(out.aux_indices, out.pool) || intersects(out.aux_indices, out.test_indices) ||
      intersects(out.pool, out.test_indices)) {
    throw StructuralError("prepare_data: test, auxiliary and client pools overlap");
  }
  return out;
}

std::vector<ClientShard> make_shards(const ExperimentConfig& cfg, const PreparedData& data,
                                     double global_ratio) {
  PartitionPlan plan = cfg.partition;
  plan.global_ratio = global_ratio;
  plan.seed = derive_seed(cfg.seed, {kPartitionStream});
  auto shards = partition(data.train, plan, data.pool);
  if (cfg.dataset.feature_shift > 0.0) {
    Rng rng(derive_seed(cfg.seed, {kShiftStream}));
    std::normal_distribution<double> gauss(0.0, cfg.dataset.feature_shift);
    for (auto& s : shards) {
      s.feature_offset.resize(data.train.dim());
      for (Eigen::Index k = 0; k < s.feature_offset.size(); ++k) s.feature_offset(k) = gauss(rng);
    }
  }
  return shards;
}

RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  PreparedData data = prepare_data(cfg);
  const int q = data.train.class_count;

  RunReport report;
  report.config = cfg;
  report.target_gamma = cfg.partition.global_ratio;

  std::vector<ClientShard> shards = make_shards(cfg, data, cfg.partition.global_ratio);
  std::vector<ClientShard> balanced;
  if (cfg.acknowledgment_round) balanced = make_shards(cfg, data, 1.0);
  report.realized_gamma = global_imbalance(shards);
  {
    auto cs = client_similarities(shards);
    double sum = 0.0;
    for (double v : cs) sum += v;
    report.mean_client_cs = sum / static_cast<double>(cs.size());
  }

  FederationState state;
  state.data = &data.train;
  state.shards = shards;
  ModelSpec spec{data.train.dim(), cfg.model.hidden, cfg.model.activation, q};
  state.global = init_model(spec, derive_seed(cfg.seed, {kInitStream}));
  state.loss = cfg.loss;
  state.mitigation_loss = cfg.mitigation.loss;
  state.mitigation_active = cfg.mitigation.apply_from == ApplyFrom::Start;

  RoundConfig rc = cfg.rounds;
  rc.seed = derive_seed(cfg.seed, {kRoundStream});

  std::optional<CompositionMonitor> monitor;
  MonitorHook hook;
  if (cfg.monitor.enabled) {
    monitor.emplace(make_auxiliary(data.train, data.aux_indices, "held out from the training pool"),
                    cfg.monitor.monitor, rc.learning_rate, rc.local_epochs);
    const bool may_act = cfg.mitigation.apply_from == ApplyFrom::Detection;
    hook = [&monitor, may_act](const MlpModel& g_t, const MlpModel& g_t1, const RoundDelta& d) {
      MonitorRecord rec = monitor->observe(g_t, g_t1, d);
      MonitorVerdict v{rec.decision, rec.ratios};
      if (!may_act) v.decision = Decision::NoAction;
      return v;
    };
  }

  double cs_sum = 0.0;
  int cs_rounds = 0;
  for (int t = 1; t <= rc.rounds_total; ++t) {
    const bool swap_now = cfg.acknowledgment_round && t == *cfg.acknowledgment_round;
    if (swap_now) state.shards = balanced;
    RoundSummary s;
    try {
      s = run_round(state, rc, monitor ? &hook : nullptr);
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(t) + ": " + e.what());
    }
    RoundRecord r;
    r.round = s.round;
    r.selected = s.selected;
    r.mean_client_loss = s.mean_client_loss;
    r.composition = s.composition;
    r.mitigation_active = s.mitigation_active;
    r.balanced_data = cfg.acknowledgment_round && t >= *cfg.acknowledgment_round;
    if (monitor) {
      const MonitorRecord& m = monitor->records().back();
      r.estimate = m.estimate.counts;
      std::vector<double> truth(s.composition.begin(), s.composition.end());
      double total = 0.0;
      for (double v : r.estimate) total += v;
      if (total > 0.0) {
        r.cs_vs_truth = cosine_similarity(r.estimate, truth);
        cs_sum += *r.cs_vs_truth;
        ++cs_rounds;
      }
      r.contributing = m.estimate.contributing;
      r.low_confidence = static_cast<int>(std::count(m.estimate.low_confidence.begin(), m.estimate.low_confidence.end(), true));
      r.clamped = static_cast<int>(std::count(m.estimate.clamped.begin(), m.estimate.clamped.end(), true));
      r.ratios = m.ratios.ra;
      r.status = m.status == DetectionStatus::Alerted ? "alerted" : "quiet";
      r.consecutive_hits = m.consecutive_hits;
      r.decision = m.decision == Decision::LoadRatioLoss ? "load_ratio_loss" : "no_action";
      if (!report.detection_round && m.decision == Decision::LoadRatioLoss) report.detection_round = t;
    }
    report.rounds.push_back(std::move(r));
    if (opts.observer) opts.observer(*state.previous, state.global, s);
  }
  if (cs_rounds) report.mean_monitor_cs = cs_sum / cs_rounds;

  Predictions preds = predict(state.global, data.test);
  auto& fm = report.metrics;
  fm.per_class_accuracy = per_class_accuracy(preds, q);
  fm.accuracy = overall_accuracy(preds);
  AucResult auc = auc_macro_ovr(preds.scores, preds.labels);
  fm.auc = auc.macro;
  fm.auc_skipped = auc.skipped;
  const auto& minority = cfg.partition.minority_classes;
  if (!minority.empty()) {
    fm.ac_minority = ac_minority(preds, minority);
    fm.ac_majority = ac_majority(preds, minority);
  }
  report.final_model = std::move(state.global);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

json to_json(const RunReport& report, bool include_wall_time) {
  json j;
  j["format"] = "fedbalance-report";
  j["version"] = 1;
  j["auc_definition"] = kAucDefinition;
  j["config"] = to_json(report.config);
  const auto& m = report.metrics;
  j["metrics"] = {{"ac_minority", m.ac_minority ? json(*m.ac_minority) : json(nullptr)},
                  {"ac_majority", m.ac_majority ? json(*m.ac_majority) : json(nullptr)},
                  {"accuracy", m.accuracy},
                  {"auc", m.auc},
                  {"auc_skipped_classes", m.auc_skipped}};
  json per_class = json::array();
  for (double a : m.per_class_accuracy) per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
  j["metrics"]["per_class_accuracy"] = per_class;
  j["target_gamma"] = report.target_gamma;
  j["realized_gamma"] = std::isinf(report.realized_gamma) ? json("inf") : json(report.realized_gamma);
  j["mean_client_cs"] = report.mean_client_cs;
  j["detection_round"] = report.detection_round ? json(*report.detection_round) : json(nullptr);
  j["mean_monitor_cs"] = report.mean_monitor_cs ? json(*report.mean_monitor_cs) : json(nullptr);
  json rounds = json::array();
  for (const auto& r : report.rounds) {
    json e{{"round", r.round},
           {"selected", r.selected},
           {"mean_client_loss", r.mean_client_loss},
           {"composition", r.composition},
           {"mitigation_active", r.mitigation_active},
           {"balanced_data", r.balanced_data}};
    if (!r.estimate.empty()) {
      e["monitor"] = {{"estimate", r.estimate},
                      {"cs_vs_truth", r.cs_vs_truth ? json(*r.cs_vs_truth) : json(nullptr)},
                      {"contributing", r.contributing},
                      {"low_confidence", r.low_confidence},
                      {"clamped", r.clamped},
                      {"ratios", r.ratios},
                      {"status", r.status},
                      {"consecutive_hits", r.consecutive_hits},
                      {"decision", r.decision}};
    }
    rounds.push_back(std::move(e));
  }
  j["rounds"] = std::move(rounds);
  if (include_wall_time) j["wall_time_seconds"] = report.wall_time_seconds;
  return j;
}

std::string rounds_csv(const RunReport& report) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "round,mean_client_loss,mitigation_active,balanced_data,composition,estimate,cs_vs_truth,"
        "contributing,low_confidence,clamped,status,consecutive_hits,decision,ratios\n";
  for (const auto& r : report.rounds) {
    os << r.round << ',' << r.mean_client_loss << ',' << r.mitigation_active << ','
       << r.balanced_data << ',' << join(r.composition) << ',' << join(r.estimate) << ',';
    if (r.cs_vs_truth) os << *r.cs_vs_truth;
    os << ',' << join(r.contributing) << ',' << r.low_confidence << ',' << r.clamped << ','
       << r.status << ',' << r.consecutive_hits << ',' << r.decision << ',' << join(r.ratios) << '\n';
  }
  return os.str();
}

void write_report(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    out << to_json(report).dump(2) << '\n';
  }
  std::ofstream out(dir / "rounds.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "rounds.csv").string());
  out << rounds_csv(report);
}

std::vector<std::string> check_report(const RunReport& report) {
  std::vector<std::string> bad;
  const auto& cfg = report.config;
  const auto& m = report.metrics;
  auto in_pct = [](double v) { return v >= 0.0 && v <= 100.0; };
  if (m.ac_minority && !in_pct(*m.ac_minority)) bad.push_back("Ac.M outside [0, 100]");
  if (m.ac_majority && !in_pct(*m.ac_majority)) bad.push_back("majority accuracy outside [0, 100]");
  if (!in_pct(m.accuracy)) bad.push_back("accuracy outside [0, 100]");
  if (!(m.auc >= 0.0 && m.auc <= 1.0)) bad.push_back("AUC outside [0, 1]");
  if (static_cast<int>(report.rounds.size()) != cfg.rounds.rounds_total) {
    bad.push_back("expected " + std::to_string(cfg.rounds.rounds_total) + " round records, got " +
                  std::to_string(report.rounds.size()));
  }
  for (std::size_t i = 0; i < report.rounds.size(); ++i) {
    const auto& r = report.rounds[i];
    if (r.round != static_cast<int>(i) + 1) bad.push_back("round records out of order at " + std::to_string(i));
    for (double v : r.estimate)
      if (!std::isfinite(v) || v < 0.0) bad.push_back("round " + std::to_string(r.round) + ": invalid estimate");
  }
  if (!cfg.partition.minority_classes.empty() && cfg.partition.global_ratio > 1.0) {
    double lo = 0.9 * cfg.partition.global_ratio, hi = 1.1 * cfg.partition.global_ratio;
    if (!(report.realized_gamma >= lo && report.realized_gamma <= hi)) {
      std::ostringstream os;
      os << "realized imbalance " << report.realized_gamma << " is not within 10% of "
         << cfg.partition.global_ratio;
      bad.push_back(os.str());
    }
  }
  return bad;
}

}  // namespace fedbalance
