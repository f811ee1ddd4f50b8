#include "fedbalance/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "fedbalance/errors.hpp"
#include "fedbalance/rng.hpp"

namespace fedbalance {

std::string to_string(Selection s) {
  return s == Selection::FixedFirstRound ? "fixed_first_round" : "uniform_random";
}

Selection selection_from_string(const std::string& name) {
  if (name == "fixed_first_round") return Selection::FixedFirstRound;
  if (name == "uniform_random") return Selection::UniformRandom;
  throw ConfigError("unknown client selection '" + name + "'");
}

void RoundConfig::validate() const {
  if (clients_total < 1) throw ConfigError("rounds: clients_total must be >= 1");
  if (clients_selected < 1 || clients_selected > clients_total) {
    throw ConfigError("rounds: need 1 <= clients_selected <= clients_total");
  }
  if (local_epochs < 0) throw ConfigError("rounds: local_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("rounds: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("rounds: learning_rate must be > 0");
  }
  if (rounds_total < 0) throw ConfigError("rounds: rounds_total must be >= 0");
  if (workers < 1) throw ConfigError("rounds: workers must be >= 1");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("rounds: max_grad_norm must be >= 0");
}

std::vector<int> select_clients(int round, const RoundConfig& cfg) {
  cfg.validate();
  const int draw_round = cfg.selection == Selection::FixedFirstRound ? 1 : round;
  Rng rng(derive_seed(cfg.seed, {0x5e1ec7, static_cast<std::uint64_t>(draw_round)}));
  std::vector<int> ids(static_cast<std::size_t>(cfg.clients_total));
  std::iota(ids.begin(), ids.end(), 0);
  for (int k = 0; k < cfg.clients_selected; ++k) {
    std::uniform_int_distribution<int> pick(k, cfg.clients_total - 1);
    std::swap(ids[static_cast<std::size_t>(k)], ids[static_cast<std::size_t>(pick(rng))]);
  }
  ids.resize(static_cast<std::size_t>(cfg.clients_selected));
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

// Classes this client holds fewer of than its largest class.
std::vector<int> local_minority(const ClientShard& shard) {
  int top = *std::max_element(shard.per_class_counts.begin(), shard.per_class_counts.end());
  std::vector<int> out;
  for (std::size_t p = 0; p < shard.per_class_counts.size(); ++p) {
    int n = shard.per_class_counts[p];
    if (n > 0 && n < top) out.push_back(static_cast<int>(p));
  }
  return out;
}

}  // namespace

LocalResult local_train(const MlpModel& global, const Dataset& data, const ClientShard& shard,
                        const LossConfig& loss, const RatioVector* ratios,
                        const RoundConfig& cfg, int round) {
  if (shard.indices.empty()) {
    throw ConfigError("local_train: client " + std::to_string(shard.client_id) + " has no samples");
  }
  LossConfig effective = loss;
  if (loss.kind == LossKind::Mfe && !loss.minority_set) {
    auto mine = local_minority(shard);
    if (mine.empty()) {
      effective.kind = LossKind::Mse;
    } else {
      effective.minority_set = std::move(mine);
    }
  }
  std::optional<GhmcDensity> density;
  if (effective.kind == LossKind::Ghmc) density.emplace(effective.ghmc_bins, effective.ghmc_momentum);
  const bool shifted = shard.feature_offset.size() > 0;
  if (shifted && shard.feature_offset.size() != data.dim()) {
    throw StructuralError("local_train: feature offset length does not match data");
  }

  MlpModel model = global;
  std::vector<int> order = shard.indices;
  double loss_sum = 0.0;
  long batches = 0;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(shard.client_id),
                                   static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const int> idx(order.data() + start, end - start);
      Eigen::MatrixXd x = data.gather(idx);
      if (shifted) x.colwise() += shard.feature_offset;
      std::vector<int> y = data.gather_labels(idx);
      ForwardTrace trace = forward(model, x);
      BatchLoss bl = batch_loss(effective, trace.probs, y, ratios, density ? &*density : nullptr);
      if (!std::isfinite(bl.loss) || !bl.grad_logits.allFinite()) {
        throw NumericError("non-finite loss at round " + std::to_string(round) + ", client " +
                           std::to_string(shard.client_id) + ", batch " + std::to_string(batches));
      }
      GradientSet grads = backward(model, trace, bl.grad_logits);
      if (cfg.max_grad_norm > 0.0) {
        double norm = grads.l2_norm();
        if (norm > cfg.max_grad_norm) grads *= cfg.max_grad_norm / norm;
      }
      sgd_step(model, grads, cfg.learning_rate);
      loss_sum += bl.loss;
      ++batches;
    }
  }
  LocalResult out;
  out.update.client_id = shard.client_id;
  out.update.weight_delta = difference(model, global);
  out.update.total_samples = static_cast<std::int64_t>(shard.indices.size());
  out.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
  return out;
}

Aggregate fedavg(std::vector<ClientUpdate> updates, const MlpModel& global, int round) {
  if (updates.empty()) throw StructuralError("fedavg: no updates");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  ParameterSet mean = ParameterSet::zeros_like(global);
  std::int64_t samples = 0;
  for (const auto& u : updates) {
    if (!u.weight_delta.congruent_with(global)) {
      throw StructuralError("fedavg: update from client " + std::to_string(u.client_id) +
                            " does not match the global model");
    }
    mean += u.weight_delta;
    samples += u.total_samples;
  }
  mean *= 1.0 / static_cast<double>(updates.size());

  Aggregate out{global, {}};
  apply_delta(out.model, mean);
  out.delta.round = round;
  out.delta.last_layer_delta = out.model.output_weights() - global.output_weights();
  out.delta.sum_total_samples = samples;
  out.delta.client_count = static_cast<int>(updates.size());

  const Eigen::MatrixXd& expect = mean.weights.back();
  double scale = 1.0 + global.output_weights().cwiseAbs().maxCoeff();
  if ((out.delta.last_layer_delta - expect).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw NumericError("fedavg: aggregated delta diverges from the mean of client deltas");
  }
  return out;
}

RoundSummary run_round(FederationState& state, const RoundConfig& cfg, const MonitorHook* hook) {
  if (!state.data) throw StructuralError("run_round: state has no dataset");
  const int t = state.round + 1;
  RoundSummary summary;
  summary.round = t;
  summary.selected = select_clients(t, cfg);
  for (int id : summary.selected) {
    if (id >= static_cast<int>(state.shards.size())) {
      throw ConfigError("run_round: selected client " + std::to_string(id) + " has no shard");
    }
  }

  const LossConfig& loss = state.mitigation_active ? state.mitigation_loss : state.loss;
  summary.mitigation_active = state.mitigation_active;
  RatioVector fallback = RatioVector::uniform(state.data->class_count);
  const RatioVector* ratios = state.ratios ? &*state.ratios : &fallback;

  const std::size_t k = summary.selected.size();
  std::vector<LocalResult> results(k);
  auto train_one = [&](std::size_t i) {
    results[i] = local_train(state.global, *state.data,
                             state.shards[static_cast<std::size_t>(summary.selected[i])], loss,
                             ratios, cfg, t);
  };
  const auto workers = static_cast<std::size_t>(std::min<int>(cfg.workers, static_cast<int>(k)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < k; ++i) train_one(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < k; i += workers) train_one(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<ClientUpdate> updates;
  updates.reserve(k);
  double loss_sum = 0.0;
  std::vector<ClientShard> chosen;
  for (std::size_t i = 0; i < k; ++i) {
    loss_sum += results[i].mean_loss;
    updates.push_back(std::move(results[i].update));
    chosen.push_back(state.shards[static_cast<std::size_t>(summary.selected[i])]);
  }
  summary.mean_client_loss = loss_sum / static_cast<double>(k);
  summary.composition = composition(chosen);

  Aggregate agg = fedavg(std::move(updates), state.global, t);
  state.previous = std::move(state.global);
  state.global = std::move(agg.model);
  state.round = t;
  summary.delta = agg.delta;

  if (hook && *hook) {
    summary.verdict = (*hook)(*state.previous, state.global, agg.delta);
    if (summary.verdict.ratios) state.ratios = summary.verdict.ratios;
    if (summary.verdict.decision == Decision::LoadRatioLoss) state.mitigation_active = true;
  }
  return summary;
}

}  // namespace fedbalance
