#pragma once

// Round-based FedAvg simulation. Clients train locally from the broadcast
// global model and upload a weight delta plus their total sample count;
// nothing else leaves the client.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedbalance/data.hpp"
#include "fedbalance/losses.hpp"
#include "fedbalance/nn.hpp"

namespace fedbalance {

enum class Selection { FixedFirstRound, UniformRandom };

std::string to_string(Selection s);
Selection selection_from_string(const std::string& name);

struct RoundConfig {
  int clients_total = 100;
  int clients_selected = 20;  // K
  int local_epochs = 1;
  int batch_size = 32;
  double learning_rate = 0.001;
  int rounds_total = 30;
  Selection selection = Selection::UniformRandom;
  std::uint64_t seed = 0;
  int workers = 1;  // client training threads
  // Rescales each batch gradient to at most this L2 norm; 0 leaves it alone.
  double max_grad_norm = 0.0;

  void validate() const;
};

struct ClientUpdate {
  int client_id = 0;
  ParameterSet weight_delta;  // local_model - global_model
  std::int64_t total_samples = 0;
};

// Aggregated change of the output-layer link weights for one round.
struct RoundDelta {
  int round = 0;
  Eigen::MatrixXd last_layer_delta;  // W^{G_{t+1}} - W^{G_t}, Q x s
  std::int64_t sum_total_samples = 0;
  int client_count = 0;  // K
};

// Sorted ascending. FixedFirstRound returns round 1's draw for every round.
std::vector<int> select_clients(int round, const RoundConfig& cfg);

struct LocalResult {
  ClientUpdate update;
  double mean_loss = 0.0;
};

// local_epochs passes of mini-batch SGD over the shard, starting from
// `global`. Batch order is a seeded shuffle per (seed, round, client, epoch).
LocalResult local_train(const MlpModel& global, const Dataset& data, const ClientShard& shard,
                        const LossConfig& loss, const RatioVector* ratios,
                        const RoundConfig& cfg, int round);

struct Aggregate {
  MlpModel model;
  RoundDelta delta;
};

// Unweighted mean of the deltas, summed in ascending client_id order.
Aggregate fedavg(std::vector<ClientUpdate> updates, const MlpModel& global, int round);

enum class Decision { NoAction, LoadRatioLoss };

struct MonitorVerdict {
  Decision decision = Decision::NoAction;
  std::optional<RatioVector> ratios;  // broadcast with the next global model
};

// Called after aggregation with (G_t, G_{t+1}, round delta).
using MonitorHook =
    std::function<MonitorVerdict(const MlpModel&, const MlpModel&, const RoundDelta&)>;

struct FederationState {
  const Dataset* data = nullptr;
  std::vector<ClientShard> shards;
  MlpModel global;
  std::optional<MlpModel> previous;  // G_t of the last completed round
  int round = 0;                     // rounds completed
  LossConfig loss;                   // loss clients use this round
  LossConfig mitigation_loss;        // loaded on LoadRatioLoss
  std::optional<RatioVector> ratios;
  bool mitigation_active = false;
};

struct RoundSummary {
  int round = 0;
  std::vector<int> selected;
  double mean_client_loss = 0.0;
  std::vector<std::int64_t> composition;  // ground truth of the selected shards
  RoundDelta delta;
  MonitorVerdict verdict;
  bool mitigation_active = false;  // loss used during this round
};

RoundSummary run_round(FederationState& state, const RoundConfig& cfg,
                       const MonitorHook* hook = nullptr);

}  // namespace fedbalance
