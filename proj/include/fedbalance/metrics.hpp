#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbalance/data.hpp"
#include "fedbalance/nn.hpp"

namespace fedbalance {

struct Predictions {
  Eigen::MatrixXd scores;  // Q x N softmax outputs
  std::vector<int> labels;
  std::vector<int> predicted;
};

Predictions predict(const MlpModel& model, const Dataset& test);

// Accuracy of each class in percent; NaN for classes absent from the labels.
std::vector<double> per_class_accuracy(const Predictions& preds, int class_count);

// Mean per-class accuracy (percent) over the given classes.
double mean_class_accuracy(const Predictions& preds, std::span<const int> classes);
double ac_minority(const Predictions& preds, std::span<const int> minority_classes);
// Every class that is not in `minority_classes`.
double ac_majority(const Predictions& preds, std::span<const int> minority_classes);
double overall_accuracy(const Predictions& preds);

struct AucResult {
  double macro = 0.0;
  std::vector<int> skipped;  // classes lacking positives or negatives
};

// Macro one-vs-rest ROC AUC. Per class the Mann-Whitney statistic with average
// ranks, so a tied positive/negative pair counts 0.5. scores: Q x N.
AucResult auc_macro_ovr(const Eigen::MatrixXd& scores, std::span<const int> labels);

}  // namespace fedbalance
