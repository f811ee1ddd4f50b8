#include "fedbalance/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fedbalance/errors.hpp"

namespace fedbalance {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Ratio: return "ratio";
    case LossKind::Focal: return "focal";
    case LossKind::Ghmc: return "ghmc";
    case LossKind::Mse: return "mse";
    case LossKind::Mfe: return "mfe";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "ratio") return LossKind::Ratio;
  if (name == "focal") return LossKind::Focal;
  if (name == "ghmc") return LossKind::Ghmc;
  if (name == "mse") return LossKind::Mse;
  if (name == "mfe") return LossKind::Mfe;
  throw ConfigError("unknown loss kind '" + name + "'");
}

RatioVector RatioVector::uniform(int class_count, double value) {
  return RatioVector{std::vector<double>(static_cast<std::size_t>(class_count), value), 0};
}

void RatioVector::validate(int class_count) const {
  if (static_cast<int>(ra.size()) != class_count) {
    throw StructuralError("ratio vector has " + std::to_string(ra.size()) +
                          " entries, expected " + std::to_string(class_count));
  }
  for (double r : ra) {
    if (!std::isfinite(r) || r < 0.0) throw NumericError("ratio vector entries must be finite and >= 0");
  }
}

void LossConfig::validate(int class_count) const {
  if (!(alpha > 0.0)) throw ConfigError("loss: alpha must be > 0");
  if (!(beta >= 0.0)) throw ConfigError("loss: beta must be >= 0");
  if (!(focal_gamma >= 0.0)) throw ConfigError("loss: focal_gamma must be >= 0");
  if (ghmc_bins < 1) throw ConfigError("loss: ghmc_bins must be >= 1");
  if (!(ghmc_momentum >= 0.0 && ghmc_momentum < 1.0)) {
    throw ConfigError("loss: ghmc_momentum must lie in [0, 1)");
  }
  if (kind == LossKind::Mfe && minority_set) {
    if (minority_set->empty()) throw ConfigError("loss: MFE minority set is empty");
    for (int c : *minority_set) {
      if (c < 0 || c >= class_count) {
        throw ConfigError("loss: MFE minority class " + std::to_string(c) + " is not a class");
      }
    }
  }
}

namespace {

void check_class(Eigen::Index q, int p) {
  if (p < 0 || p >= q) {
    throw IndexError("loss: class " + std::to_string(p) + " outside [0, " +
                     std::to_string(q) + ")");
  }
}

}  // namespace

SampleLoss ce_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class) {
  check_class(probs.size(), true_class);
  SampleLoss s;
  double f = probs(true_class);
  s.clamped = f < kProbabilityFloor;
  s.loss = -std::log(std::max(f, kProbabilityFloor));
  s.grad_logits = probs;
  s.grad_logits(true_class) -= 1.0;
  return s;
}

SampleLoss ratio_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class,
                      const RatioVector& ratios, const LossConfig& cfg) {
  if (ratios.ra.size() != static_cast<std::size_t>(probs.size())) {
    throw StructuralError("ratio_loss: ratio vector length does not match class count");
  }
  SampleLoss s = ce_loss(probs, true_class);
  double coeff = cfg.alpha + cfg.beta * ratios.ra[static_cast<std::size_t>(true_class)];
  s.loss *= coeff;
  s.grad_logits *= coeff;
  return s;
}

SampleLoss focal_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class,
                      double gamma) {
  check_class(probs.size(), true_class);
  SampleLoss s;
  double f = probs(true_class);
  s.clamped = f < kProbabilityFloor;
  double fc = std::max(f, kProbabilityFloor);
  double miss = 1.0 - f;
  double log_f = std::log(fc);
  s.loss = -std::pow(miss, gamma) * log_f;
  // f * dL/df; the gamma term vanishes as f -> 1 for every gamma > 0.
  double scaled = -std::pow(miss, gamma);
  if (gamma > 0.0 && miss > 0.0) scaled += gamma * std::pow(miss, gamma - 1.0) * f * log_f;
  s.grad_logits = -scaled * probs;
  s.grad_logits(true_class) += scaled;
  return s;
}

SampleLoss mse_loss(const Eigen::Ref<const Eigen::VectorXd>& probs, int true_class) {
  check_class(probs.size(), true_class);
  SampleLoss s;
  Eigen::VectorXd diff = probs;
  diff(true_class) -= 1.0;
  s.loss = diff.squaredNorm();
  Eigen::VectorXd g = 2.0 * diff;
  double fg = probs.dot(g);
  s.grad_logits = (probs.array() * (g.array() - fg)).matrix();
  return s;
}

GhmcDensity::GhmcDensity(int bins, double momentum)
    : acc_(static_cast<std::size_t>(bins), 0.0), momentum_(momentum) {
  if (bins < 1) throw ConfigError("ghmc: bins must be >= 1");
}

std::vector<double> GhmcDensity::update(const std::vector<int>& counts) {
  if (counts.size() != acc_.size()) throw StructuralError("ghmc: bin count mismatch");
  for (std::size_t b = 0; b < acc_.size(); ++b) {
    if (!seeded_) {
      acc_[b] = counts[b];
    } else {
      acc_[b] = momentum_ * acc_[b] + (1.0 - momentum_) * counts[b];
    }
  }
  seeded_ = true;
  return acc_;
}

BatchLoss ghmc_loss(const Eigen::MatrixXd& probs, std::span<const int> labels,
                    const LossConfig& cfg, GhmcDensity* density) {
  const Eigen::Index n = probs.cols();
  if (n == 0) throw StructuralError("ghmc_loss: empty batch");
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw StructuralError("ghmc_loss: label count does not match batch");
  }
  const int bins = cfg.ghmc_bins;
  std::vector<int> bin_of(static_cast<std::size_t>(n));
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    check_class(probs.rows(), labels[i]);
    double g = std::clamp(1.0 - probs(labels[i], i), 0.0, 1.0);
    int b = std::min(bins - 1, static_cast<int>(g * bins));
    bin_of[i] = b;
    ++counts[b];
  }
  std::vector<double> dens(counts.begin(), counts.end());
  if (density) dens = density->update(counts);

  BatchLoss out;
  out.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.weights(i) = 1.0 / dens[bin_of[i]];
  out.weights *= static_cast<double>(n) / out.weights.sum();

  out.grad_logits.resize(probs.rows(), n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    SampleLoss s = ce_loss(probs.col(i), labels[i]);
    out.clamped += s.clamped;
    total += out.weights(i) * s.loss;
    out.grad_logits.col(i) = out.weights(i) * s.grad_logits;
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

BatchLoss mfe_loss(const Eigen::MatrixXd& probs, std::span<const int> labels,
                   std::span<const int> minority_set) {
  const Eigen::Index n = probs.cols();
  if (n == 0) throw StructuralError("mfe_loss: empty batch");
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw StructuralError("mfe_loss: label count does not match batch");
  }
  if (minority_set.empty()) throw ConfigError("mfe_loss: minority set is empty");
  for (int c : minority_set) {
    if (c < 0 || c >= probs.rows()) {
      throw ConfigError("mfe_loss: minority class " + std::to_string(c) + " is not a class");
    }
  }
  auto is_minority = [&](int c) {
    return std::find(minority_set.begin(), minority_set.end(), c) != minority_set.end();
  };
  int n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += is_minority(labels[i]);
  const int n_neg = static_cast<int>(n) - n_pos;

  BatchLoss out;
  out.grad_logits.resize(probs.rows(), n);
  out.weights.resize(n);
  double fne = 0.0, fpe = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    SampleLoss s = mse_loss(probs.col(i), labels[i]);
    bool pos = is_minority(labels[i]);
    double group = pos ? n_pos : n_neg;
    (pos ? fne : fpe) += s.loss / group;
    out.weights(i) = static_cast<double>(n) / group;
    out.grad_logits.col(i) = out.weights(i) * s.grad_logits;
  }
  out.loss = fne + fpe;
  return out;
}

BatchLoss batch_loss(const LossConfig& cfg, const Eigen::MatrixXd& probs,
                     std::span<const int> labels, const RatioVector* ratios,
                     GhmcDensity* density) {
  const Eigen::Index n = probs.cols();
  if (n == 0) throw StructuralError("batch_loss: empty batch");
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw StructuralError("batch_loss: label count does not match batch");
  }
  switch (cfg.kind) {
    case LossKind::Ghmc: return ghmc_loss(probs, labels, cfg, density);
    case LossKind::Mfe:
      if (!cfg.minority_set) throw ConfigError("batch_loss: MFE needs a minority set");
      return mfe_loss(probs, labels, *cfg.minority_set);
    case LossKind::Ratio:
      if (!ratios) throw ConfigError("batch_loss: ratio loss needs a ratio vector");
      break;
    default: break;
  }
  BatchLoss out;
  out.grad_logits.resize(probs.rows(), n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    SampleLoss s;
    switch (cfg.kind) {
      case LossKind::CrossEntropy: s = ce_loss(probs.col(i), labels[i]); break;
      case LossKind::Ratio: s = ratio_loss(probs.col(i), labels[i], *ratios, cfg); break;
      case LossKind::Focal: s = focal_loss(probs.col(i), labels[i], cfg.focal_gamma); break;
      case LossKind::Mse: s = mse_loss(probs.col(i), labels[i]); break;
      default: break;
    }
    out.clamped += s.clamped;
    total += s.loss;
    out.grad_logits.col(i) = s.grad_logits;
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace fedbalance
