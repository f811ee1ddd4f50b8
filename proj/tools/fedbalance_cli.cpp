// fedbalance: run federated imbalance experiments from a JSON config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedbalance/config.hpp"
#include "fedbalance/experiment.hpp"
#include "fedbalance/studies.hpp"

using namespace fedbalance;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool check = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the master seed");
  cmd->add_option("--out-dir", c.out_dir, "override the output directory");
  cmd->add_flag("--check", c.check, "exit non-zero when a run violates an invariant");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  std::cerr << "wrote " << path.string() << '\n';
}

std::vector<LossKind> parse_losses(const std::vector<std::string>& names) {
  std::vector<LossKind> out;
  for (const auto& n : names) out.push_back(loss_kind_from_string(n));
  return out;
}

std::vector<ClassRange> parse_ranges(const std::vector<std::string>& specs) {
  std::vector<ClassRange> out;
  for (const auto& s : specs) {
    auto dash = s.find('-');
    try {
      if (dash == std::string::npos) {
        int v = std::stoi(s);
        out.push_back({v, v});
      } else {
        out.push_back({std::stoi(s.substr(0, dash)), std::stoi(s.substr(dash + 1))});
      }
    } catch (const std::exception&) {
      throw ConfigError("bad class range '" + s + "', expected MIN-MAX");
    }
  }
  return out;
}

int report_violations(const std::vector<std::string>& bad) {
  for (const auto& b : bad) std::cerr << "check failed: " << b << '\n';
  return bad.empty() ? 0 : 3;
}

std::vector<std::string> check_table(const StudyTable& t) {
  std::vector<std::string> bad;
  for (const auto& r : t.rows) {
    auto pct = [](const std::optional<double>& v) { return !v || (*v >= 0.0 && *v <= 100.0); };
    if (!pct(r.ac_minority) || !pct(r.ac_majority) || !pct(r.accuracy)) {
      bad.push_back("accuracy outside [0, 100] for loss " + r.loss);
    }
    if (!(r.auc >= 0.0 && r.auc <= 1.0)) bad.push_back("AUC outside [0, 1] for loss " + r.loss);
  }
  return bad;
}

void print_summary(const RunReport& r) {
  const auto& m = r.metrics;
  std::printf("accuracy %.2f%%  auc %.4f", m.accuracy, m.auc);
  if (m.ac_minority) std::printf("  ac_minority %.2f%%  ac_majority %.2f%%", *m.ac_minority, *m.ac_majority);
  std::printf("  realized_gamma %g", r.realized_gamma);
  if (r.mean_monitor_cs) std::printf("  monitor_cs %.4f", *r.mean_monitor_cs);
  if (r.detection_round) std::printf("  detected_at %d", *r.detection_round);
  std::printf("  (%.1fs)\n", r.wall_time_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with a class-composition monitor and Ratio Loss"};
  app.require_subcommand(1);

  Common run_c;
  auto* run = app.add_subcommand("run", "single experiment; writes report.json and rounds.csv");
  add_common(run, run_c);

  Common cmp_c;
  std::vector<std::string> cmp_losses{"ce", "focal", "ghmc", "ratio"};
  std::vector<double> cmp_gammas{1, 10, 50, 100};
  int cmp_seeds = 5;
  auto* compare = app.add_subcommand("compare", "losses x imbalance ratios; writes comparison.csv");
  add_common(compare, cmp_c);
  compare->add_option("--losses", cmp_losses, "loss kinds")->delimiter(',');
  compare->add_option("--gammas", cmp_gammas, "global imbalance ratios")->delimiter(',');
  compare->add_option("--seeds", cmp_seeds, "runs per cell");

  Common mm_c;
  std::vector<std::string> mm_losses{"ce", "focal", "ghmc", "ratio", "mse", "mfe"};
  std::vector<std::string> mm_ranges{"2-2", "3-3", "4-4", "5-5"};
  int mm_seeds = 5;
  auto* mismatch = app.add_subcommand("mismatch", "classes-per-client levels; writes comparison.csv");
  add_common(mismatch, mm_c);
  mismatch->add_option("--losses", mm_losses, "loss kinds")->delimiter(',');
  mismatch->add_option("--ranges", mm_ranges, "classes per client, MIN-MAX")->delimiter(',');
  mismatch->add_option("--seeds", mm_seeds, "runs per cell");

  Common ack_c;
  std::vector<int> ack_rounds{10, 30, 45};
  int ack_seeds = 5;
  auto* ack = app.add_subcommand("acknowledge", "balanced replacement at given rounds; writes comparison.csv");
  add_common(ack, ack_c);
  ack->add_option("--rounds", ack_rounds, "acknowledgment rounds")->delimiter(',');
  ack->add_option("--seeds", ack_seeds, "runs per cell");

  Common me_c;
  std::vector<double> me_thresholds = kThresholdGrid;
  auto* meval = app.add_subcommand("monitor-eval", "monitor accuracy per round and per threshold");
  add_common(meval, me_c);
  meval->add_option("--thresholds", me_thresholds, "ratio thresholds to score")->delimiter(',');

  Common hl_c;
  int hl_per_class = 32;
  auto* diag = app.add_subcommand("diag-hl", "hidden-layer similarity per round and class; writes hl.csv");
  add_common(diag, hl_c);
  diag->add_option("--per-class", hl_per_class, "training samples per class");

  Common sw_c;
  std::string sw_param = "all";
  int sw_seeds = 1;
  auto* sweep = app.add_subcommand("sweep", "threshold, alpha and beta grids");
  add_common(sweep, sw_c);
  sweep->add_option("--param", sw_param, "t_ra, alpha, beta or all")
      ->check(CLI::IsMember({"t_ra", "alpha", "beta", "all"}));
  sweep->add_option("--seeds", sw_seeds, "runs per grid point");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg = load(run_c);
      RunReport r = run_experiment(cfg);
      write_report(r, cfg.output_dir);
      print_summary(r);
      return run_c.check ? report_violations(check_report(r)) : 0;
    }
    if (*compare) {
      ExperimentConfig cfg = load(cmp_c);
      auto t = compare_losses(cfg, parse_losses(cmp_losses), cmp_gammas, {cmp_seeds, true});
      write_text(std::filesystem::path(cfg.output_dir) / "comparison.csv", t.csv());
      return cmp_c.check ? report_violations(check_table(t)) : 0;
    }
    if (*mismatch) {
      ExperimentConfig cfg = load(mm_c);
      auto t = mismatch_study(cfg, parse_ranges(mm_ranges), parse_losses(mm_losses), {mm_seeds, true});
      write_text(std::filesystem::path(cfg.output_dir) / "comparison.csv", t.csv());
      return mm_c.check ? report_violations(check_table(t)) : 0;
    }
    if (*ack) {
      ExperimentConfig cfg = load(ack_c);
      auto t = acknowledgment_study(cfg, ack_rounds, {ack_seeds, true});
      write_text(std::filesystem::path(cfg.output_dir) / "comparison.csv", t.csv());
      return ack_c.check ? report_violations(check_table(t)) : 0;
    }
    if (*meval) {
      ExperimentConfig cfg = load(me_c);
      MonitorEval e = monitor_eval(cfg, me_thresholds);
      write_report(e.report, cfg.output_dir);
      write_text(std::filesystem::path(cfg.output_dir) / "thresholds.csv", e.csv());
      print_summary(e.report);
      return me_c.check ? report_violations(check_report(e.report)) : 0;
    }
    if (*diag) {
      ExperimentConfig cfg = load(hl_c);
      auto rows = hl_diagnostic(cfg, hl_per_class);
      write_text(std::filesystem::path(cfg.output_dir) / "hl.csv", hl_csv(rows));
      return 0;
    }
    if (*sweep) {
      ExperimentConfig cfg = load(sw_c);
      for (const auto& [file, csv] : preset_sweeps(cfg, sw_param, {sw_seeds, true})) {
        write_text(std::filesystem::path(cfg.output_dir) / file, csv);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
