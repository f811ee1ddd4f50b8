#include "fedbalance/studies.hpp"

#include <array>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "fedbalance/errors.hpp"

namespace fedbalance {

ExperimentConfig with_loss(const ExperimentConfig& base, LossKind kind) {
  ExperimentConfig cfg = base;
  if (kind == LossKind::Ratio) {
    cfg.loss.kind = LossKind::CrossEntropy;
    cfg.mitigation.loss.kind = LossKind::Ratio;
    if (cfg.mitigation.apply_from == ApplyFrom::Never) cfg.mitigation.apply_from = ApplyFrom::Detection;
    cfg.monitor.enabled = true;
  } else {
    cfg.loss.kind = kind;
    cfg.mitigation.apply_from = ApplyFrom::Never;
  }
  return cfg;
}

namespace {

CellRow row_from(const std::string& study, const RunReport& r) {
  const auto& c = r.config;
  CellRow row;
  row.study = study;
  row.loss = c.mitigation.apply_from == ApplyFrom::Never ? to_string(c.loss.kind)
                                                         : to_string(c.mitigation.loss.kind);
  row.gamma = c.partition.global_ratio;
  row.classes_min = c.partition.classes_min;
  row.classes_max = c.partition.classes_max;
  row.acknowledgment_round = c.acknowledgment_round;
  row.seed = c.seed;
  row.ac_minority = r.metrics.ac_minority;
  row.ac_majority = r.metrics.ac_majority;
  row.accuracy = r.metrics.accuracy;
  row.auc = r.metrics.auc;
  row.realized_gamma = r.realized_gamma;
  row.mean_client_cs = r.mean_client_cs;
  if (r.detection_round) row.detection_round = *r.detection_round;
  return row;
}

void run_cell(StudyTable& table, const std::string& study, ExperimentConfig cfg,
              const StudyOptions& opts) {
  if (opts.seeds < 1) throw ConfigError("study: seeds must be >= 1");
  const std::uint64_t first = cfg.seed;
  for (int k = 0; k < opts.seeds; ++k) {
    cfg.seed = first + static_cast<std::uint64_t>(k);
    RunReport r = run_experiment(cfg);
    table.rows.push_back(row_from(study, r));
    if (opts.verbose) {
      const auto& row = table.rows.back();
      std::fprintf(stderr, "[%s] loss=%s gamma=%g classes=%d-%d seed=%llu ac_m=%.2f auc=%.4f (%.1fs)\n",
                   study.c_str(), row.loss.c_str(), row.gamma, row.classes_min, row.classes_max,
                   static_cast<unsigned long long>(cfg.seed), row.ac_minority.value_or(-1.0), row.auc,
                   r.wall_time_seconds);
    }
  }
}

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  void add(const std::optional<double>& v) {
    if (v) add(*v);
  }
  std::optional<double> get() const { return n ? std::optional<double>(sum / n) : std::nullopt; }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::vector<CellRow> StudyTable::means() const {
  using Key = std::tuple<std::string, std::string, double, int, int, int>;
  std::map<Key, std::size_t> index;
  std::vector<CellRow> out;
  std::vector<std::array<Mean, 7>> acc;
  for (const auto& r : rows) {
    Key key{r.study, r.loss, r.gamma, r.classes_min, r.classes_max, r.acknowledgment_round.value_or(-1)};
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      CellRow m = r;
      m.seed.reset();
      out.push_back(m);
      acc.emplace_back();
    }
    auto& a = acc[it->second];
    a[0].add(r.ac_minority);
    a[1].add(r.ac_majority);
    a[2].add(r.accuracy);
    a[3].add(r.auc);
    a[4].add(r.realized_gamma);
    a[5].add(r.mean_client_cs);
    a[6].add(r.detection_round);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& m = out[i];
    const auto& a = acc[i];
    m.ac_minority = a[0].get();
    m.ac_majority = a[1].get();
    m.accuracy = a[2].get().value_or(0.0);
    m.auc = a[3].get().value_or(0.0);
    m.realized_gamma = a[4].get().value_or(0.0);
    m.mean_client_cs = a[5].get().value_or(0.0);
    m.detection_round = a[6].get();
  }
  return out;
}

std::string StudyTable::csv() const {
  std::ostringstream os;
  os << "study,loss,gamma,classes_min,classes_max,acknowledgment_round,seed,ac_minority,ac_majority,"
        "accuracy,auc,realized_gamma,mean_client_cs,detection_round\n";
  auto emit = [&](const CellRow& r, const std::string& seed) {
    os << r.study << ',' << r.loss << ',' << fmt(r.gamma) << ',' << r.classes_min << ','
       << r.classes_max << ',' << (r.acknowledgment_round ? std::to_string(*r.acknowledgment_round) : "")
       << ',' << seed << ',' << fmt(r.ac_minority) << ',' << fmt(r.ac_majority) << ','
       << fmt(r.accuracy) << ',' << fmt(r.auc) << ',' << fmt(r.realized_gamma) << ','
       << fmt(r.mean_client_cs) << ',' << fmt(r.detection_round) << '\n';
  };
  for (const auto& r : rows) emit(r, std::to_string(*r.seed));
  for (const auto& r : means()) emit(r, "mean");
  return os.str();
}

StudyTable compare_losses(const ExperimentConfig& base, const std::vector<LossKind>& kinds,
                          const std::vector<double>& gammas, const StudyOptions& opts) {
  if (kinds.size() < 2) throw ConfigError("compare: need at least two loss kinds");
  StudyTable table;
  for (double g : gammas) {
    for (LossKind k : kinds) {
      ExperimentConfig cfg = with_loss(base, k);
      cfg.partition.global_ratio = g;
      run_cell(table, "compare", cfg, opts);
    }
  }
  return table;
}

StudyTable mismatch_study(const ExperimentConfig& base, const std::vector<ClassRange>& ranges,
                          const std::vector<LossKind>& kinds, const StudyOptions& opts) {
  StudyTable table;
  for (const auto& r : ranges) {
    for (LossKind k : kinds) {
      ExperimentConfig cfg = with_loss(base, k);
      cfg.partition.classes_min = r.min;
      cfg.partition.classes_max = r.max;
      run_cell(table, "mismatch", cfg, opts);
    }
  }
  return table;
}

StudyTable acknowledgment_study(const ExperimentConfig& base, const std::vector<int>& rounds,
                                const StudyOptions& opts) {
  StudyTable table;
  for (int t : rounds) {
    ExperimentConfig cfg = base;
    cfg.acknowledgment_round = t;
    run_cell(table, "acknowledgment", cfg, opts);
  }
  return table;
}

std::string MonitorEval::csv() const {
  std::ostringstream os;
  os << "threshold,mean_cs,var_cs\n";
  for (const auto& t : thresholds) os << fmt(t.threshold) << ',' << fmt(t.mean_cs) << ',' << fmt(t.var_cs) << '\n';
  return os.str();
}

MonitorEval monitor_eval(const ExperimentConfig& cfg, const std::vector<double>& thresholds) {
  PreparedData data = prepare_data(cfg);
  AuxiliaryData aux = make_auxiliary(data.train, data.aux_indices, "held out from the training pool");
  std::vector<CompositionMonitor> shadows;
  for (double t : thresholds) {
    MonitorConfig mc = cfg.monitor.monitor;
    mc.ratio_threshold = t;
    shadows.emplace_back(aux, mc, cfg.rounds.learning_rate, cfg.rounds.local_epochs);
  }
  MonitorEval out;
  for (double t : thresholds) out.thresholds.push_back({t, 0.0, 0.0, {}});
  RunOptions opts;
  opts.observer = [&](const MlpModel& g_t, const MlpModel& g_t1, const RoundSummary& s) {
    std::vector<double> truth(s.composition.begin(), s.composition.end());
    for (std::size_t k = 0; k < shadows.size(); ++k) {
      MonitorRecord rec = shadows[k].observe(g_t, g_t1, s.delta);
      out.thresholds[k].per_round.push_back(cosine_similarity(rec.estimate.counts, truth));
    }
  };
  out.report = run_experiment(cfg, opts);
  for (auto& t : out.thresholds) {
    if (t.per_round.empty()) continue;
    double n = static_cast<double>(t.per_round.size()), sum = 0.0, sq = 0.0;
    for (double v : t.per_round) sum += v;
    t.mean_cs = sum / n;
    for (double v : t.per_round) sq += (v - t.mean_cs) * (v - t.mean_cs);
    t.var_cs = sq / n;
  }
  return out;
}

std::vector<SweepRow> ratio_sweep(const ExperimentConfig& base, const std::string& param,
                                  const std::vector<double>& grid, const StudyOptions& opts) {
  if (param != "alpha" && param != "beta") throw ConfigError("sweep: unknown parameter '" + param + "'");
  std::vector<SweepRow> out;
  for (double v : grid) {
    ExperimentConfig cfg = with_loss(base, LossKind::Ratio);
    (param == "alpha" ? cfg.mitigation.loss.alpha : cfg.mitigation.loss.beta) = v;
    StudyTable table;
    run_cell(table, "sweep-" + param, cfg, opts);
    CellRow m = table.means().front();
    out.push_back({param, v, m.ac_minority, m.auc});
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "param,value,ac_minority,auc\n";
  for (const auto& r : rows) os << r.param << ',' << fmt(r.value) << ',' << fmt(r.ac_minority) << ',' << fmt(r.auc) << '\n';
  return os.str();
}

std::vector<std::pair<std::string, std::string>> preset_sweeps(ExperimentConfig base,
                                                               const std::string& param,
                                                               const StudyOptions& opts) {
  if (param != "t_ra" && param != "alpha" && param != "beta" && param != "all") {
    throw ConfigError("unknown sweep parameter '" + param + "'");
  }
  base.partition.global_ratio = kSweepGamma;
  std::vector<std::pair<std::string, std::string>> out;
  if (param == "t_ra" || param == "all") {
    out.emplace_back("sweep_t_ra.csv", monitor_eval(base, kThresholdGrid).csv());
  }
  if (param == "alpha" || param == "all") {
    out.emplace_back("sweep_alpha.csv", sweep_csv(ratio_sweep(base, "alpha", kAlphaGrid, opts)));
  }
  if (param == "beta" || param == "all") {
    out.emplace_back("sweep_beta.csv", sweep_csv(ratio_sweep(base, "beta", kBetaGrid, opts)));
  }
  return out;
}

std::vector<HlRow> hl_diagnostic(const ExperimentConfig& cfg, int per_class) {
  PreparedData data = prepare_data(cfg);
  auto [probe_idx, unused] = split_per_class(data.train, per_class, cfg.seed, data.pool);
  (void)unused;
  Dataset sample;
  sample.features = data.train.gather(probe_idx);
  sample.labels = data.train.gather_labels(probe_idx);
  sample.class_count = data.train.class_count;
  std::vector<HlRow> rows;
  RunOptions opts;
  opts.observer = [&](const MlpModel&, const MlpModel& g_t1, const RoundSummary& s) {
    for (const auto& h : hl_similarity_diagnostic(g_t1, sample, per_class))
      rows.push_back({s.round, h.class_id, h.samples, h.mean_cosine, h.dot_variation});
  };
  run_experiment(cfg, opts);
  return rows;
}

std::string hl_csv(const std::vector<HlRow>& rows) {
  std::ostringstream os;
  os << "round,class,samples,mean_cosine,dot_variation\n";
  for (const auto& r : rows)
    os << r.round << ',' << r.class_id << ',' << r.samples << ',' << fmt(r.mean_cosine) << ','
       << fmt(r.dot_variation) << '\n';
  return os.str();
}

}  // namespace fedbalance
