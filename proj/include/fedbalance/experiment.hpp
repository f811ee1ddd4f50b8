#pragma once

// End-to-end runs: data preparation, the federated loop with the monitor in
// the server position, final metrics on the held-out split, and reports.
//
// AUC is macro one-vs-rest ROC AUC from the Mann-Whitney rank statistic
// (ties count one half); classes without positives or negatives in the test
// split are skipped and listed. The same definition is written into every
// report header.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbalance/config.hpp"
#include "fedbalance/data.hpp"
#include "fedbalance/federation.hpp"
#include "fedbalance/metrics.hpp"
#include "fedbalance/monitor.hpp"

namespace fedbalance {

inline constexpr const char* kAucDefinition =
    "macro one-vs-rest ROC AUC, Mann-Whitney rank statistic, ties count 0.5, "
    "classes lacking positives or negatives skipped";

struct PreparedData {
  Dataset train;
  Dataset test;
  std::vector<int> aux_indices;  // into train
  std::vector<int> pool;         // train indices the partition may hand out
  // Synthetic runs carve the test split out of `train`; these are its
  // indices there. Empty when the test split is a separate file.
  std::vector<int> test_indices;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

// Partition of the prepared pool, including per-client feature offsets.
std::vector<ClientShard> make_shards(const ExperimentConfig& cfg, const PreparedData& data,
                                     double global_ratio);

struct RoundRecord {
  int round = 0;
  std::vector<int> selected;
  double mean_client_loss = 0.0;
  std::vector<std::int64_t> composition;  // ground truth
  bool mitigation_active = false;
  bool balanced_data = false;  // after the acknowledgment round
  // Monitor output; empty when the monitor is off.
  std::vector<double> estimate;
  std::optional<double> cs_vs_truth;
  std::vector<int> contributing;
  int low_confidence = 0;
  int clamped = 0;
  std::vector<double> ratios;
  std::string status;
  int consecutive_hits = 0;
  std::string decision;
};

struct FinalMetrics {
  std::optional<double> ac_minority;
  std::optional<double> ac_majority;
  double accuracy = 0.0;
  double auc = 0.0;
  std::vector<int> auc_skipped;
  std::vector<double> per_class_accuracy;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<RoundRecord> rounds;
  FinalMetrics metrics;
  double target_gamma = 1.0;
  double realized_gamma = 1.0;     // over every client shard
  double mean_client_cs = 1.0;     // mean CS_j of shard vs global composition
  std::optional<int> detection_round;
  std::optional<double> mean_monitor_cs;
  double wall_time_seconds = 0.0;
  MlpModel final_model;  // not serialized
};

struct RunOptions {
  // Called after every round with (G_t, G_{t+1}, summary).
  std::function<void(const MlpModel&, const MlpModel&, const RoundSummary&)> observer;
};

RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

nlohmann::json to_json(const RunReport& report, bool include_wall_time = true);
std::string rounds_csv(const RunReport& report);
// Writes report.json and rounds.csv into `dir`.
void write_report(const RunReport& report, const std::filesystem::path& dir);

// Invariant violations worth failing a --check run for; empty when clean.
std::vector<std::string> check_report(const RunReport& report);

}  // namespace fedbalance
