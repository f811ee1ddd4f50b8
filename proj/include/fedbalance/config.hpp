#pragma once

// Declarative experiment description. A run is a pure function of this
// struct; every stochastic component draws from a stream derived from `seed`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbalance/data.hpp"
#include "fedbalance/federation.hpp"
#include "fedbalance/losses.hpp"
#include "fedbalance/monitor.hpp"
#include "fedbalance/nn.hpp"

namespace fedbalance {

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" or "mnist"
  SyntheticSpec synthetic;
  // Directory holding the four IDX files under their usual MNIST names.
  std::string mnist_dir = "data/mnist5k";
  int test_per_class = 100;     // synthetic only; MNIST uses the t10k files
  double feature_shift = 0.0;   // stddev of a per-client feature offset, 0 = off
};

struct ModelConfig {
  std::vector<int> hidden{128, 64};
  Activation activation = Activation::ReLU;
};

enum class ApplyFrom { Detection, Start, Never };

std::string to_string(ApplyFrom a);
ApplyFrom apply_from_from_string(const std::string& name);

struct MitigationConfig {
  ApplyFrom apply_from = ApplyFrom::Detection;
  LossConfig loss = [] {
    LossConfig l;
    l.kind = LossKind::Ratio;
    return l;
  }();
};

struct MonitorSettings {
  bool enabled = true;
  MonitorConfig monitor;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DatasetConfig dataset;
  ModelConfig model;
  PartitionPlan partition;  // partition.seed is derived from `seed`
  RoundConfig rounds;       // rounds.seed is derived from `seed`
  LossConfig loss;
  MitigationConfig mitigation;
  MonitorSettings monitor;
  // From this round on, the clients train on a balanced twin of the
  // partition (same class sets, ratio 1).
  std::optional<int> acknowledgment_round;
  std::vector<std::string> metrics{"ac_minority", "ac_majority", "accuracy", "auc"};

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
// Unknown keys are rejected so typos do not silently fall back to defaults.
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

}  // namespace fedbalance
