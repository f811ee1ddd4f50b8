#include "fedbalance/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "fedbalance/errors.hpp"

namespace fedbalance {

Predictions predict(const MlpModel& model, const Dataset& test) {
  Predictions p;
  p.scores = forward(model, test.features).probs;
  p.labels = test.labels;
  p.predicted.resize(test.labels.size());
  for (Eigen::Index i = 0; i < p.scores.cols(); ++i) {
    Eigen::Index best = 0;
    p.scores.col(i).maxCoeff(&best);
    p.predicted[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return p;
}

std::vector<double> per_class_accuracy(const Predictions& preds, int class_count) {
  std::vector<long> hit(static_cast<std::size_t>(class_count), 0), seen(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < preds.labels.size(); ++i) {
    int y = preds.labels[i];
    if (y < 0 || y >= class_count) throw IndexError("per_class_accuracy: label out of range");
    ++seen[static_cast<std::size_t>(y)];
    if (preds.predicted[i] == y) ++hit[static_cast<std::size_t>(y)];
  }
  std::vector<double> out(static_cast<std::size_t>(class_count), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < out.size(); ++c)
    if (seen[c]) out[c] = 100.0 * static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
  return out;
}

double mean_class_accuracy(const Predictions& preds, std::span<const int> classes) {
  if (classes.empty()) throw ConfigError("class accuracy: empty class set");
  int q = static_cast<int>(preds.scores.rows());
  auto acc = per_class_accuracy(preds, q);
  double sum = 0.0;
  for (int c : classes) {
    if (c < 0 || c >= q) throw IndexError("class accuracy: class " + std::to_string(c) + " out of range");
    double a = acc[static_cast<std::size_t>(c)];
    if (std::isnan(a)) throw ConfigError("class accuracy: class " + std::to_string(c) + " has no test samples");
    sum += a;
  }
  return sum / static_cast<double>(classes.size());
}

double ac_minority(const Predictions& preds, std::span<const int> minority_classes) {
  return mean_class_accuracy(preds, minority_classes);
}

double ac_majority(const Predictions& preds, std::span<const int> minority_classes) {
  std::set<int> minor(minority_classes.begin(), minority_classes.end());
  std::vector<int> rest;
  for (int c = 0; c < static_cast<int>(preds.scores.rows()); ++c)
    if (!minor.count(c)) rest.push_back(c);
  return mean_class_accuracy(preds, rest);
}

double overall_accuracy(const Predictions& preds) {
  if (preds.labels.empty()) throw ConfigError("accuracy: empty test set");
  long hit = 0;
  for (std::size_t i = 0; i < preds.labels.size(); ++i) hit += preds.predicted[i] == preds.labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(preds.labels.size());
}

AucResult auc_macro_ovr(const Eigen::MatrixXd& scores, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(scores.cols());
  if (labels.size() != n) throw StructuralError("auc: score columns and labels differ in length");
  AucResult out;
  double sum = 0.0;
  int used = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  for (Eigen::Index c = 0; c < scores.rows(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores(c, static_cast<Eigen::Index>(a)) < scores(c, static_cast<Eigen::Index>(b)); });
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && scores(c, static_cast<Eigen::Index>(order[j + 1])) == scores(c, static_cast<Eigen::Index>(order[i]))) ++j;
      double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    double pos = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == c) {
        pos += 1.0;
        rank_sum += rank[i];
      }
    }
    double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) {
      out.skipped.push_back(static_cast<int>(c));
      continue;
    }
    sum += (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
    ++used;
  }
  if (used == 0) throw UndefinedInputError("auc: no class has both positives and negatives");
  out.macro = sum / used;
  return out;
}

}  // namespace fedbalance
