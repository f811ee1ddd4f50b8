#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fedbalance/data.hpp"
#include "fedbalance/errors.hpp"
#include "fedbalance/federation.hpp"
#include "helpers.hpp"

using namespace fedbalance;

namespace {

ClientUpdate update_of(const MlpModel& g, int id, double fill) {
  ClientUpdate u;
  u.client_id = id;
  u.weight_delta = ParameterSet::zeros_like(g);
  for (auto& w : u.weight_delta.weights) w.setConstant(fill);
  for (auto& b : u.weight_delta.biases) b.setConstant(fill);
  u.total_samples = 10;
  return u;
}

struct Small {
  Dataset data;
  std::vector<ClientShard> shards;
  MlpModel model;

  Small() {
    SyntheticSpec spec;
    spec.class_count = 4;
    spec.dim = 6;
    spec.per_class = 60;
    data = make_synthetic(spec, 3);
    PartitionPlan plan;
    plan.num_clients = 6;
    plan.classes_min = 2;
    plan.classes_max = 3;
    plan.samples_per_class = 10;
    plan.seed = 2;
    shards = partition(data, plan);
    model = init_model({6, {8}, Activation::ReLU, 4}, 5);
  }
};

}  // namespace

TEST_CASE("client selection") {
  RoundConfig cfg;
  cfg.clients_total = 10;
  cfg.clients_selected = 10;
  auto all = select_clients(1, cfg);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  cfg.clients_total = 100;
  cfg.clients_selected = 20;
  cfg.selection = Selection::FixedFirstRound;
  auto r1 = select_clients(1, cfg);
  CHECK(r1.size() == 20);
  CHECK(std::set<int>(r1.begin(), r1.end()).size() == 20);
  for (int t = 2; t <= 30; ++t) CHECK(select_clients(t, cfg) == r1);

  cfg.selection = Selection::UniformRandom;
  bool differs = false;
  for (int t = 2; t <= 30; ++t) {
    auto r = select_clients(t, cfg);
    CHECK(r.size() == 20);
    CHECK(std::is_sorted(r.begin(), r.end()));
    CHECK(std::set<int>(r.begin(), r.end()).size() == 20);
    CHECK(r == select_clients(t, cfg));
    differs |= r != select_clients(1, cfg);
  }
  CHECK(differs);

  cfg.clients_selected = 101;
  CHECK_THROWS_AS(select_clients(1, cfg), ConfigError);
  cfg.clients_selected = 0;
  CHECK_THROWS_AS(select_clients(1, cfg), ConfigError);
}

TEST_CASE("local training") {
  Small s;
  RoundConfig cfg;
  cfg.learning_rate = 0.1;

  SUBCASE("no epochs leave the model untouched") {
    cfg.local_epochs = 0;
    auto r = local_train(s.model, s.data, s.shards[0], LossConfig{}, nullptr, cfg, 1);
    CHECK(r.update.weight_delta.max_abs() == 0.0);
    CHECK(r.update.total_samples == s.shards[0].total());
  }

  SUBCASE("one sample is one gradient step") {
    ClientShard one;
    one.client_id = 0;
    one.indices = {7};
    one.per_class_counts.assign(4, 0);
    one.per_class_counts[static_cast<std::size_t>(s.data.labels[7])] = 1;
    auto r = local_train(s.model, s.data, one, LossConfig{}, nullptr, cfg, 1);
    std::vector<int> idx{7};
    auto trace = forward(s.model, s.data.gather(idx));
    auto bl = batch_loss(LossConfig{}, trace.probs, s.data.gather_labels(idx));
    auto g = backward(s.model, trace, bl.grad_logits);
    for (std::size_t k = 0; k < g.weights.size(); ++k) {
      CHECK((r.update.weight_delta.weights[k] + cfg.learning_rate * g.weights[k]).cwiseAbs().maxCoeff() < 1e-14);
      CHECK((r.update.weight_delta.biases[k] + cfg.learning_rate * g.biases[k]).cwiseAbs().maxCoeff() < 1e-14);
    }
  }

  SUBCASE("clipping bounds every step") {
    ClientShard one;
    one.client_id = 0;
    one.indices = {7};
    one.per_class_counts.assign(4, 0);
    one.per_class_counts[static_cast<std::size_t>(s.data.labels[7])] = 1;
    cfg.max_grad_norm = 1e-3;
    auto r = local_train(s.model, s.data, one, LossConfig{}, nullptr, cfg, 1);
    CHECK(r.update.weight_delta.l2_norm() == doctest::Approx(cfg.learning_rate * 1e-3));
  }

  SUBCASE("same inputs give the same delta") {
    cfg.local_epochs = 2;
    cfg.batch_size = 4;
    auto a = local_train(s.model, s.data, s.shards[1], LossConfig{}, nullptr, cfg, 3);
    auto b = local_train(s.model, s.data, s.shards[1], LossConfig{}, nullptr, cfg, 3);
    for (std::size_t k = 0; k < a.update.weight_delta.weights.size(); ++k)
      CHECK(a.update.weight_delta.weights[k] == b.update.weight_delta.weights[k]);
  }

  SUBCASE("non-finite loss is reported") {
    MlpModel bad = s.model;
    bad.layers.back().weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(local_train(bad, s.data, s.shards[0], LossConfig{}, nullptr, cfg, 1), NumericError);
  }

  SUBCASE("empty shard") {
    ClientShard none;
    none.per_class_counts.assign(4, 0);
    CHECK_THROWS_AS(local_train(s.model, s.data, none, LossConfig{}, nullptr, cfg, 1), ConfigError);
  }
}

TEST_CASE("client update carries exactly three fields") {
  Small s;
  ClientUpdate u = update_of(s.model, 3, 0.5);
  auto [id, delta, total] = u;
  CHECK(id == 3);
  CHECK(delta.congruent_with(s.model));
  CHECK(total == 10);
}

TEST_CASE("fedavg") {
  Small s;
  SUBCASE("identical deltas") {
    auto agg = fedavg({update_of(s.model, 0, 0.25), update_of(s.model, 1, 0.25), update_of(s.model, 2, 0.25)}, s.model, 1);
    CHECK((agg.model.output_weights() - s.model.output_weights()).cwiseAbs().maxCoeff() == doctest::Approx(0.25));
    CHECK(agg.delta.client_count == 3);
    CHECK(agg.delta.sum_total_samples == 30);
  }
  SUBCASE("opposite deltas cancel") {
    auto agg = fedavg({update_of(s.model, 0, 0.5), update_of(s.model, 1, -0.5)}, s.model, 1);
    CHECK(agg.delta.last_layer_delta.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("mean of 1 and 3") {
    auto agg = fedavg({update_of(s.model, 0, 1.0), update_of(s.model, 1, 3.0)}, s.model, 1);
    CHECK((agg.delta.last_layer_delta.array() - 2.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("order does not matter") {
    std::mt19937_64 rng(9);
    std::vector<ClientUpdate> ups;
    for (int j = 0; j < 6; ++j) {
      auto u = update_of(s.model, j, 0.0);
      for (auto& w : u.weight_delta.weights) w = testutil::random_matrix(int(w.rows()), int(w.cols()), rng);
      ups.push_back(u);
    }
    auto a = fedavg(ups, s.model, 1);
    std::shuffle(ups.begin(), ups.end(), rng);
    auto b = fedavg(ups, s.model, 1);
    CHECK(a.delta.last_layer_delta == b.delta.last_layer_delta);
    CHECK(flatten(a.model) == flatten(b.model));
  }
  SUBCASE("mismatched shape") {
    auto other = init_model({6, {5}, Activation::ReLU, 4}, 1);
    CHECK_THROWS_AS(fedavg({update_of(other, 0, 1.0)}, s.model, 1), StructuralError);
    CHECK_THROWS_AS(fedavg({}, s.model, 1), StructuralError);
  }
}

TEST_CASE("one selected client matches local training") {
  Small s;
  RoundConfig cfg;
  cfg.clients_total = 6;
  cfg.clients_selected = 1;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 4;
  FederationState st;
  st.data = &s.data;
  st.shards = s.shards;
  st.global = s.model;
  auto summary = run_round(st, cfg);
  int id = summary.selected.at(0);
  auto local = local_train(s.model, s.data, s.shards[static_cast<std::size_t>(id)], LossConfig{}, nullptr, cfg, 1);
  MlpModel expect = s.model;
  apply_delta(expect, local.update.weight_delta);
  auto a = flatten(st.global), b = flatten(expect);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  CHECK(st.previous.has_value());
  CHECK(flatten(*st.previous) == flatten(s.model));
  CHECK(flatten(*st.previous) != flatten(st.global));
  CHECK(summary.composition == composition(std::span(&s.shards[static_cast<std::size_t>(id)], 1)));
}

TEST_CASE("hook sees the models around aggregation and can switch the loss") {
  Small s;
  RoundConfig cfg;
  cfg.clients_total = 6;
  cfg.clients_selected = 3;
  cfg.learning_rate = 0.1;
  FederationState st;
  st.data = &s.data;
  st.shards = s.shards;
  st.global = s.model;
  st.mitigation_loss.kind = LossKind::Ratio;
  int calls = 0;
  MonitorHook hook = [&](const MlpModel& g_t, const MlpModel& g_t1, const RoundDelta& d) {
    ++calls;
    CHECK((g_t1.output_weights() - g_t.output_weights() - d.last_layer_delta).cwiseAbs().maxCoeff() < 1e-12);
    MonitorVerdict v;
    v.decision = calls == 2 ? Decision::LoadRatioLoss : Decision::NoAction;
    v.ratios = RatioVector::uniform(4, 2.0);
    return v;
  };
  CHECK_FALSE(run_round(st, cfg, &hook).mitigation_active);
  CHECK_FALSE(run_round(st, cfg, &hook).mitigation_active);
  CHECK(st.mitigation_active);
  CHECK(run_round(st, cfg, &hook).mitigation_active);
  CHECK(st.ratios->ra == std::vector<double>(4, 2.0));
  CHECK(st.round == 3);
}

TEST_CASE("threaded training matches serial") {
  Small s;
  RoundConfig cfg;
  cfg.clients_total = 6;
  cfg.clients_selected = 6;
  FederationState a, b;
  a.data = b.data = &s.data;
  a.shards = b.shards = s.shards;
  a.global = b.global = s.model;
  run_round(a, cfg);
  cfg.workers = 3;
  run_round(b, cfg);
  CHECK(flatten(a.global) == flatten(b.global));
}
