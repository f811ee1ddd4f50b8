#pragma once

// Loss functions on softmax outputs. Every loss reports its value and the
// gradient with respect to the logits, so it plugs straight into backward().

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedbalance {

enum class LossKind { CrossEntropy, Ratio, Focal, Ghmc, Mse, Mfe };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& name);

// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

// Per-class gradient-magnitude ratios broadcast with the global model.
struct RatioVector {
  std::vector<double> ra;
  int round_updated = 0;

  static RatioVector uniform(int class_count, double value = 1.0);
  void validate(int class_count) const;
};

struct LossConfig {
  LossKind kind = LossKind::CrossEntropy;
  double alpha = 1.0;
  double beta = 0.1;
  double focal_gamma = 2.0;
  int ghmc_bins = 10;
  double ghmc_momentum = 0.75;
  // MFE positives. When unset, each client derives its own set from local
  // counts (classes it holds fewer of than its largest class).
  std::optional<std::vector<int>> minority_set;

  void validate(int class_count) const;
};

struct SampleLoss {
  double loss = 0.0;
  Eigen::VectorXd grad_logits;
  bool clamped = false;  // probs[p] fell below kProbabilityFloor
};

SampleLoss ce_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class);

// (alpha + beta * ratios.ra[p]) * CE
SampleLoss ratio_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class,
                      const RatioVector& ratios, const LossConfig& cfg);

// -(1 - f_p)^gamma * log f_p
SampleLoss focal_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class,
                      double gamma);

// sum_k (f_k - onehot_k)^2
SampleLoss mse_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class);

// Batch-level loss. grad_logits column i is scaled so that averaging the
// columns (which is what backward() does) yields d(loss)/d(logits_i).
struct BatchLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad_logits;  // Q x n
  Eigen::VectorXd weights;      // per-sample weights where the loss uses them
  int clamped = 0;
};

// Exponential moving average of GHM bin counts carried across batches.
class GhmcDensity {
 public:
  GhmcDensity(int bins, double momentum);
  // Returns the smoothed count for each bin given this batch's counts.
  std::vector<double> update(const std::vector<int>& counts);
  int bins() const { return static_cast<int>(acc_.size()); }

 private:
  std::vector<double> acc_;
  double momentum_;
  bool seeded_ = false;
};

// Equal-width bins over g = |f_p - 1| in [0, 1]. Each sample's CE is weighted
// by 1 / (bin density), rescaled so weights average to 1 over the batch.
// With `density` the bin counts are smoothed across batches.
BatchLoss ghmc_loss(const Eigen::MatrixXd& probs, std::span<const int> labels,
                    const LossConfig& cfg, GhmcDensity* density = nullptr);

// Mean squared error over minority samples plus mean squared error over the
// rest. An empty group contributes 0.
BatchLoss mfe_loss(const Eigen::MatrixXd& probs, std::span<const int> labels,
                   std::span<const int> minority_set);

// Dispatch on cfg.kind. `ratios` is required for LossKind::Ratio.
BatchLoss batch_loss(const LossConfig& cfg, const Eigen::MatrixXd& probs,
                     std::span<const int> labels, const RatioVector* ratios = nullptr,
                     GhmcDensity* density = nullptr);

}  // namespace fedbalance
