#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "fedbalance/config.hpp"
#include "fedbalance/errors.hpp"
#include "fedbalance/experiment.hpp"
#include "fedbalance/metrics.hpp"
#include "fedbalance/studies.hpp"

using namespace fedbalance;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.name = "small";
  cfg.dataset.synthetic.per_class = 200;
  cfg.dataset.synthetic.dim = 16;
  cfg.dataset.test_per_class = 50;
  cfg.model.hidden = {24};
  cfg.partition.num_clients = 10;
  cfg.partition.classes_min = 3;
  cfg.partition.classes_max = 5;
  cfg.partition.samples_per_class = 20;
  cfg.partition.global_ratio = 10;
  cfg.partition.minority_classes = {2, 4, 7};
  cfg.rounds.clients_total = 10;
  cfg.rounds.clients_selected = 5;
  cfg.rounds.rounds_total = 4;
  cfg.rounds.learning_rate = 0.05;
  return cfg;
}

Predictions preds_of(Eigen::MatrixXd scores, std::vector<int> labels) {
  Predictions p;
  p.scores = std::move(scores);
  p.labels = std::move(labels);
  for (Eigen::Index i = 0; i < p.scores.cols(); ++i) {
    Eigen::Index best;
    p.scores.col(i).maxCoeff(&best);
    p.predicted.push_back(static_cast<int>(best));
  }
  return p;
}

}  // namespace

TEST_CASE("config defaults") {
  ExperimentConfig cfg;
  CHECK(cfg.monitor.monitor.ratio_threshold == 1.25);
  CHECK(cfg.mitigation.loss.alpha == 1.0);
  CHECK(cfg.mitigation.loss.beta == 0.1);
  CHECK(cfg.mitigation.loss.kind == LossKind::Ratio);
  CHECK(cfg.mitigation.apply_from == ApplyFrom::Detection);
  CHECK(cfg.rounds.clients_selected == 20);
  CHECK(cfg.rounds.batch_size == 32);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config JSON round trip and strictness") {
  ExperimentConfig cfg = small_config();
  cfg.acknowledgment_round = 3;
  cfg.rounds.max_grad_norm = 5.0;
  cfg.loss.kind = LossKind::Focal;
  auto j = to_json(cfg);
  auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.acknowledgment_round == 3);

  auto bad = j;
  bad["rounds"]["learning_rat"] = 0.1;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = j;
  bad["mystery"] = 1;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = j;
  bad["loss"]["kind"] = "hinge";
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);

  auto path = fs::temp_directory_path() / "fedbalance_bad_config.json";
  { std::ofstream(path) << "{ not json"; }
  CHECK_THROWS_AS(load_config(path), ParseError);
  fs::remove(path);

  cfg.rounds.clients_total = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("accuracy metrics") {
  // Class 0: 2 of 2 right, class 1: 1 of 2, class 2: 0 of 1.
  Eigen::MatrixXd s(3, 5);
  s << 0.8, 0.6, 0.1, 0.5, 0.2,
       0.1, 0.2, 0.8, 0.1, 0.7,
       0.1, 0.2, 0.1, 0.4, 0.1;
  auto p = preds_of(s, {0, 0, 1, 1, 2});
  auto per = per_class_accuracy(p, 4);
  CHECK(per[0] == 100.0);
  CHECK(per[1] == 50.0);
  CHECK(per[2] == 0.0);
  CHECK(std::isnan(per[3]));
  std::vector<int> minority{2};
  CHECK(ac_minority(p, minority) == 0.0);
  CHECK(ac_majority(p, minority) == doctest::Approx(75.0));
  CHECK(overall_accuracy(p) == doctest::Approx(60.0));
  std::vector<int> outside{3};
  CHECK_THROWS_AS(mean_class_accuracy(p, outside), IndexError);
  auto no_class2 = preds_of(s.leftCols(4), {0, 0, 1, 1});
  std::vector<int> absent{2};
  CHECK_THROWS_AS(mean_class_accuracy(no_class2, absent), ConfigError);
}

TEST_CASE("AUC") {
  SUBCASE("separable scores give 1 and inverted ones 1 - auc") {
    Eigen::MatrixXd s(2, 4);
    s << 0.9, 0.8, 0.3, 0.1,
         0.1, 0.2, 0.7, 0.9;
    std::vector<int> y{0, 0, 1, 1};
    CHECK(auc_macro_ovr(s, y).macro == 1.0);
    Eigen::MatrixXd flip = s.colwise().reverse().eval();
    CHECK(auc_macro_ovr(flip, y).macro == doctest::Approx(0.0));
  }
  SUBCASE("ties count one half") {
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(2, 4, 0.5);
    std::vector<int> y{0, 1, 0, 1};
    CHECK(auc_macro_ovr(s, y).macro == doctest::Approx(0.5));
  }
  SUBCASE("random scores sit near one half") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> c(0, 4);
    Eigen::MatrixXd s(5, 10000);
    std::vector<int> y;
    for (int i = 0; i < 10000; ++i) {
      for (int k = 0; k < 5; ++k) s(k, i) = u(rng);
      y.push_back(c(rng));
    }
    CHECK(std::abs(auc_macro_ovr(s, y).macro - 0.5) < 0.02);
  }
  SUBCASE("pairwise oracle and inversion") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> c(0, 2);
    Eigen::MatrixXd s(3, 60);
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
      for (int k = 0; k < 3; ++k) s(k, i) = std::round(u(rng) * 10) / 10;
      y.push_back(c(rng));
    }
    double macro = 0;
    for (int k = 0; k < 3; ++k) {
      double wins = 0, pairs = 0;
      for (int a = 0; a < 60; ++a)
        for (int b = 0; b < 60; ++b)
          if (y[static_cast<std::size_t>(a)] == k && y[static_cast<std::size_t>(b)] != k) {
            pairs += 1;
            wins += s(k, a) > s(k, b) ? 1.0 : s(k, a) == s(k, b) ? 0.5 : 0.0;
          }
      macro += wins / pairs;
    }
    double got = auc_macro_ovr(s, y).macro;
    CHECK(got == doctest::Approx(macro / 3).epsilon(1e-12));
    Eigen::MatrixXd neg = -s;
    CHECK(auc_macro_ovr(neg, y).macro == doctest::Approx(1.0 - got).epsilon(1e-12));
  }
  SUBCASE("classes without negatives are skipped") {
    Eigen::MatrixXd s(3, 2);
    s << 0.6, 0.4, 0.3, 0.5, 0.1, 0.1;
    std::vector<int> y{0, 1};
    auto r = auc_macro_ovr(s, y);
    CHECK(r.skipped == std::vector<int>{2});
    std::vector<int> one{0, 0};
    CHECK_THROWS_AS(auc_macro_ovr(s, one), UndefinedInputError);
  }
}

TEST_CASE("prepared splits do not overlap") {
  auto cfg = small_config();
  auto data = prepare_data(cfg);
  std::set<int> test(data.test_indices.begin(), data.test_indices.end());
  std::set<int> aux(data.aux_indices.begin(), data.aux_indices.end());
  CHECK(test.size() == 500);
  for (int i : data.aux_indices) CHECK(test.count(i) == 0);
  for (int i : data.pool) {
    CHECK(test.count(i) == 0);
    CHECK(aux.count(i) == 0);
  }
  auto shards = make_shards(cfg, data, cfg.partition.global_ratio);
  for (const auto& s : shards)
    for (int i : s.indices) CHECK(test.count(i) == 0);
}

TEST_CASE("small run: determinism, report contents, checks") {
  auto cfg = small_config();
  auto a = run_experiment(cfg);
  auto b = run_experiment(cfg);
  CHECK(to_json(a, false).dump() == to_json(b, false).dump());
  CHECK(rounds_csv(a) == rounds_csv(b));

  auto j = to_json(a);
  CHECK(j["format"] == "fedbalance-report");
  CHECK(j["rounds"].size() == 4);
  CHECK(j.contains("config"));
  CHECK(j["metrics"].contains("auc"));
  CHECK(j["metrics"].contains("ac_minority"));
  CHECK(a.rounds.front().estimate.size() == 10);
  CHECK(a.realized_gamma == doctest::Approx(10.0).epsilon(0.1));
  CHECK(check_report(a).empty());

  auto csv = rounds_csv(a);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  auto dir = fs::temp_directory_path() / "fedbalance_small_run";
  fs::remove_all(dir);
  write_report(a, dir);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "rounds.csv"));
  fs::remove_all(dir);

  RunReport broken = a;
  broken.metrics.auc = 1.5;
  broken.rounds.pop_back();
  CHECK(check_report(broken).size() >= 2);

  cfg.seed = 2;
  auto c = run_experiment(cfg);
  CHECK(to_json(c, false).dump() != to_json(a, false).dump());
}

TEST_CASE("balanced synthetic training learns") {
  auto cfg = small_config();
  cfg.partition.global_ratio = 1;
  cfg.partition.minority_classes.clear();
  cfg.partition.classes_min = cfg.partition.classes_max = 10;
  cfg.partition.samples_per_class = 10;
  cfg.rounds.rounds_total = 10;
  cfg.rounds.learning_rate = 0.3;
  cfg.rounds.local_epochs = 3;
  cfg.monitor.enabled = false;
  cfg.mitigation.apply_from = ApplyFrom::Never;
  auto r = run_experiment(cfg);
  CHECK(r.metrics.accuracy > 90.0);
  CHECK_FALSE(r.metrics.ac_minority.has_value());
}

TEST_CASE("study tables") {
  auto cfg = small_config();
  cfg.rounds.rounds_total = 2;
  StudyOptions opts;
  opts.seeds = 2;
  auto t = compare_losses(cfg, {LossKind::CrossEntropy, LossKind::Ratio}, {10.0}, opts);
  CHECK(t.rows.size() == 4);
  CHECK(t.means().size() == 2);
  auto csv = t.csv();
  CHECK(csv.rfind("study,loss,gamma,classes_min,classes_max,acknowledgment_round,seed,", 0) == 0);
  CHECK_THROWS_AS(compare_losses(cfg, {LossKind::CrossEntropy}, {10.0}, opts), ConfigError);

  auto ratio = with_loss(cfg, LossKind::Ratio);
  CHECK(ratio.loss.kind == LossKind::CrossEntropy);
  CHECK(ratio.mitigation.apply_from == ApplyFrom::Detection);
  auto focal = with_loss(cfg, LossKind::Focal);
  CHECK(focal.loss.kind == LossKind::Focal);
  CHECK(focal.mitigation.apply_from == ApplyFrom::Never);

  auto sweep = ratio_sweep(cfg, "alpha", {0.5, 1.0}, {1, false});
  CHECK(sweep.size() == 2);
  CHECK(sweep_csv(sweep).rfind("param,value,ac_minority,auc\n", 0) == 0);
}
