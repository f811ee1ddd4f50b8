#pragma once

// Multi-run studies built on run_experiment. Each cell is averaged over
// consecutive seeds starting at the base config's seed; per-seed rows are
// kept next to the mean rows.

#include <optional>
#include <string>
#include <vector>

#include "fedbalance/config.hpp"
#include "fedbalance/experiment.hpp"

namespace fedbalance {

// Ratio Loss is loaded by the monitor's decision (or from the start when the
// base config says so); every other loss trains from round 1 without
// mitigation.
ExperimentConfig with_loss(const ExperimentConfig& base, LossKind kind);

struct CellRow {
  std::string study;
  std::string loss;
  double gamma = 1.0;
  int classes_min = 0;
  int classes_max = 0;
  std::optional<int> acknowledgment_round;
  std::optional<std::uint64_t> seed;  // empty on mean rows
  std::optional<double> ac_minority;
  std::optional<double> ac_majority;
  double accuracy = 0.0;
  double auc = 0.0;
  double realized_gamma = 1.0;
  double mean_client_cs = 1.0;
  std::optional<double> detection_round;  // mean over seeds that detected
};

struct StudyTable {
  std::vector<CellRow> rows;

  std::vector<CellRow> means() const;
  std::string csv() const;
};

struct StudyOptions {
  int seeds = 5;
  bool verbose = false;  // one stderr line per finished run
};

StudyTable compare_losses(const ExperimentConfig& base, const std::vector<LossKind>& kinds,
                          const std::vector<double>& gammas, const StudyOptions& opts = {});

struct ClassRange {
  int min = 1;
  int max = 1;
};

StudyTable mismatch_study(const ExperimentConfig& base, const std::vector<ClassRange>& ranges,
                          const std::vector<LossKind>& kinds, const StudyOptions& opts = {});

// Balanced replacement from each listed round on; the loss stays as in `base`.
StudyTable acknowledgment_study(const ExperimentConfig& base, const std::vector<int>& rounds,
                                const StudyOptions& opts = {});

struct ThresholdScore {
  double threshold = 0.0;
  double mean_cs = 0.0;
  double var_cs = 0.0;  // population variance over rounds
  std::vector<double> per_round;
};

struct MonitorEval {
  RunReport report;
  std::vector<ThresholdScore> thresholds;

  std::string csv() const;  // threshold,mean_cs,var_cs
};

// One training run; a shadow monitor per threshold watches the same rounds.
MonitorEval monitor_eval(const ExperimentConfig& cfg, const std::vector<double>& thresholds);

inline const std::vector<double> kThresholdGrid{1.00, 1.05, 1.10, 1.15, 1.20, 1.25,
                                                1.30, 1.40, 1.50, 2.00, 5.00};
inline const std::vector<double> kAlphaGrid{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 5.0};
inline const std::vector<double> kBetaGrid{0.02, 0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.20, 0.30};
inline constexpr double kSweepGamma = 50.0;

struct SweepRow {
  std::string param;  // "alpha" or "beta"
  double value = 0.0;
  std::optional<double> ac_minority;
  double auc = 0.0;
};

// Ratio Loss runs over one hyperparameter grid, the other held at the base
// value; means over seeds.
std::vector<SweepRow> ratio_sweep(const ExperimentConfig& base, const std::string& param,
                                  const std::vector<double>& grid, const StudyOptions& opts = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);  // param,value,ac_minority,auc

// The preset grids at kSweepGamma. `param` is "t_ra", "alpha", "beta" or
// "all"; returns (file name, CSV) pairs.
std::vector<std::pair<std::string, std::string>> preset_sweeps(ExperimentConfig base,
                                                               const std::string& param,
                                                               const StudyOptions& opts = {});

struct HlRow {
  int round = 0;
  int class_id = 0;
  int samples = 0;
  double mean_cosine = 0.0;
  double dot_variation = 0.0;
};

// Per round and class, pairwise statistics of the hidden-layer outputs of the
// current global model on up to `per_class` training samples.
std::vector<HlRow> hl_diagnostic(const ExperimentConfig& cfg, int per_class);
std::string hl_csv(const std::vector<HlRow>& rows);

}  // namespace fedbalance
