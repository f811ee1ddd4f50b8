#pragma once

// Composition monitor.
//
// Each round the monitor feeds every class of a small auxiliary set to the
// previous global model G_t, one class at a time, and records the resulting
// one-step change of the output-layer link weights. Comparing those per-class
// signatures with the aggregated change G_{t+1} - G_t yields an estimate of
// how many samples of each class took part in the round. The only client
// metadata used is the summed sample count.
//
// Sign convention: for a class-p probe, row p of the update is non-negative
// (the class pulls its own output up) and the rows of every other output are
// non-positive. The ratios below therefore come out negative; the filter
// compares magnitudes while the count equation keeps the signs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedbalance/data.hpp"
#include "fedbalance/federation.hpp"
#include "fedbalance/losses.hpp"
#include "fedbalance/nn.hpp"

namespace fedbalance {

struct AuxiliaryData {
  std::vector<Eigen::MatrixXd> per_class;  // class p: d x n_a^p
  std::string provenance;

  int class_count() const { return static_cast<int>(per_class.size()); }
  int count(int p) const { return static_cast<int>(per_class.at(static_cast<std::size_t>(p)).cols()); }
  void validate(int class_count) const;
};

AuxiliaryData make_auxiliary(const Dataset& data, std::span<const int> indices,
                             std::string provenance);

struct ProbeResult {
  // class_deltas[p]: output-layer update (Q x s) from class p's samples.
  std::vector<Eigen::MatrixXd> class_deltas;
};

// class_deltas[p] = -lr * mean over class-p auxiliary samples of the
// cross-entropy gradient of W at G_t. The model is not modified.
ProbeResult probe(const MlpModel& g_t, const AuxiliaryData& aux, double learning_rate);

inline constexpr double kRatioDenominatorFloor = 1e-12;

struct RatioMatrix {
  Eigen::MatrixXd values;                                  // Q x s
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> valid;  // false: denominator ~ 0
};

// values(p, i) = (Q - 1) * own / (sum over the other classes' updates of W(p, i)).
RatioMatrix ratio_matrix(const ProbeResult& probe);

// Per class, ascending indices i with valid |Ra(p, i)| > threshold.
std::vector<std::vector<int>> filter_weights(const RatioMatrix& ra, double threshold);

struct CompositionEstimate {
  int round = 0;
  std::vector<double> counts;          // N_hat_p >= 0
  std::vector<int> contributing;       // weights that produced each N_hat_p
  std::vector<bool> low_confidence;    // no usable weight; fallback total / Q
  std::vector<bool> clamped;           // negative solution clamped to 0
  std::optional<double> cs_vs_truth;
};

struct EstimateOptions {
  // Divides the observed aggregate delta, e.g. by the number of local epochs.
  double delta_divisor = 1.0;
};

// Solves, per class p and surviving weight i,
//   own * N + (total - N) * own / Ra = n_a^p * K * (W^{G_{t+1}} - W^{G_t})(p, i)
// for N, then averages over i.
CompositionEstimate estimate_counts(const ProbeResult& probe, const RatioMatrix& ra,
                                    const std::vector<std::vector<int>>& surviving,
                                    const RoundDelta& delta, const AuxiliaryData& aux,
                                    const EstimateOptions& opts = {});

struct DetectionConfig {
  int window = 3;             // consecutive matching rounds before acknowledging
  double similarity = 0.95;   // CS between successive imbalanced estimates
  double imbalance = 5.0;     // max / min of the estimate that counts as imbalanced
};

enum class DetectionStatus { Quiet, Alerted };

struct DetectionState {
  DetectionConfig cfg;
  std::vector<std::vector<double>> history;  // recent estimates, newest last
  std::optional<std::vector<double>> last_imbalanced;
  int consecutive_hits = 0;
  DetectionStatus status = DetectionStatus::Quiet;
};

// Classes whose estimate is below max / cfg.imbalance.
std::vector<int> minority_signature(const std::vector<double>& counts, double imbalance);

std::pair<DetectionState, Decision> update_detection(DetectionState state,
                                                     const CompositionEstimate& est);

// ra_p = |mean of Ra(p, i)| over the given indices (all valid entries when
// `indices` is null). Classes with no entries get 1.
RatioVector ratio_vector_from(const RatioMatrix& ra,
                              const std::vector<std::vector<int>>* indices = nullptr,
                              int round = 0);

struct HlSimilarity {
  int class_id = 0;
  int samples = 0;
  double mean_cosine = 0.0;   // over all pairs of HL outputs Y
  double dot_variation = 0.0; // std / mean of the pairwise dot products
};

// Uses at most `max_per_class` samples of each class.
std::vector<HlSimilarity> hl_similarity_diagnostic(const MlpModel& model, const Dataset& data,
                                                   int max_per_class);
// Same statistics for an explicit set of Y columns (s x n).
HlSimilarity hl_pair_statistics(const Eigen::MatrixXd& hl_outputs);

struct MonitorConfig {
  double ratio_threshold = 1.25;  // T_Ra
  DetectionConfig detection;
  int aux_per_class = 32;
  bool divide_by_local_epochs = true;
  bool ratios_from_surviving = false;
};

struct MonitorRecord {
  int round = 0;
  CompositionEstimate estimate;
  RatioVector ratios;
  DetectionStatus status = DetectionStatus::Quiet;
  int consecutive_hits = 0;
  Decision decision = Decision::NoAction;
};

// Ties the steps together in the order the server runs them each round.
class CompositionMonitor {
 public:
  CompositionMonitor(AuxiliaryData aux, MonitorConfig cfg, double learning_rate,
                     int local_epochs);

  MonitorRecord observe(const MlpModel& g_t, const MlpModel& g_t1, const RoundDelta& delta);
  MonitorHook hook();

  const std::vector<MonitorRecord>& records() const { return records_; }
  const DetectionState& detection() const { return detection_; }
  const AuxiliaryData& auxiliary() const { return aux_; }

 private:
  AuxiliaryData aux_;
  MonitorConfig cfg_;
  double learning_rate_;
  int local_epochs_;
  DetectionState detection_;
  std::vector<MonitorRecord> records_;
};

}  // namespace fedbalance
