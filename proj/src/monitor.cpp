#include "fedbalance/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedbalance/errors.hpp"

namespace fedbalance {

void AuxiliaryData::validate(int classes) const {
  if (class_count() != classes) {
    throw ConfigError("auxiliary data covers " + std::to_string(class_count()) + " classes, model has " +
                      std::to_string(classes));
  }
  for (int p = 0; p < classes; ++p) {
    if (count(p) < 1) throw ConfigError("auxiliary data has no samples of class " + std::to_string(p));
  }
}

AuxiliaryData make_auxiliary(const Dataset& data, std::span<const int> indices,
                             std::string provenance) {
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(data.class_count));
  for (int i : indices) by_class[static_cast<std::size_t>(data.labels.at(static_cast<std::size_t>(i)))].push_back(i);
  AuxiliaryData aux;
  aux.provenance = std::move(provenance);
  for (const auto& group : by_class) aux.per_class.push_back(data.gather(group));
  aux.validate(data.class_count);
  return aux;
}

ProbeResult probe(const MlpModel& g_t, const AuxiliaryData& aux, double learning_rate) {
  const int q = g_t.class_count();
  aux.validate(q);
  ProbeResult out;
  out.class_deltas.reserve(static_cast<std::size_t>(q));
  for (int p = 0; p < q; ++p) {
    ForwardTrace trace = forward(g_t, aux.per_class[static_cast<std::size_t>(p)]);
    Eigen::MatrixXd coeff = trace.probs;
    coeff.row(p).array() -= 1.0;
    // Sum of per-sample last_layer_gradient over the class.
    Eigen::MatrixXd grad = coeff * trace.hl_output().transpose();
    out.class_deltas.push_back(-(learning_rate / aux.count(p)) * grad);
  }
  return out;
}

RatioMatrix ratio_matrix(const ProbeResult& pr) {
  const auto q = static_cast<Eigen::Index>(pr.class_deltas.size());
  if (q < 2) throw ConfigError("ratio_matrix: need at least two classes");
  const Eigen::Index s = pr.class_deltas.front().cols();
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(q, s);
  for (const auto& d : pr.class_deltas) {
    if (d.rows() != q || d.cols() != s) throw StructuralError("ratio_matrix: probe shapes differ");
    total += d;
  }
  RatioMatrix ra;
  ra.values = Eigen::MatrixXd::Zero(q, s);
  ra.valid.setConstant(q, s, false);
  for (Eigen::Index p = 0; p < q; ++p) {
    const auto& own = pr.class_deltas[static_cast<std::size_t>(p)];
    for (Eigen::Index i = 0; i < s; ++i) {
      double others = total(p, i) - own(p, i);
      if (std::abs(others) < kRatioDenominatorFloor) continue;
      ra.values(p, i) = static_cast<double>(q - 1) * own(p, i) / others;
      ra.valid(p, i) = std::isfinite(ra.values(p, i));
    }
  }
  return ra;
}

std::vector<std::vector<int>> filter_weights(const RatioMatrix& ra, double threshold) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(ra.values.rows()));
  for (Eigen::Index p = 0; p < ra.values.rows(); ++p)
    for (Eigen::Index i = 0; i < ra.values.cols(); ++i)
      if (ra.valid(p, i) && std::abs(ra.values(p, i)) > threshold)
        out[static_cast<std::size_t>(p)].push_back(static_cast<int>(i));
  return out;
}

CompositionEstimate estimate_counts(const ProbeResult& pr, const RatioMatrix& ra,
                                    const std::vector<std::vector<int>>& surviving,
                                    const RoundDelta& delta, const AuxiliaryData& aux,
                                    const EstimateOptions& opts) {
  const int q = static_cast<int>(pr.class_deltas.size());
  if (static_cast<int>(surviving.size()) != q || aux.class_count() != q) {
    throw StructuralError("estimate_counts: class count mismatch");
  }
  if (delta.last_layer_delta.rows() != q ||
      delta.last_layer_delta.cols() != pr.class_deltas.front().cols()) {
    throw StructuralError("estimate_counts: round delta does not match probe shape");
  }
  if (delta.client_count < 1 || delta.sum_total_samples < 1) {
    throw ConfigError("estimate_counts: round delta needs K >= 1 and a positive sample total");
  }
  if (!(opts.delta_divisor > 0.0)) throw ConfigError("estimate_counts: delta_divisor must be > 0");

  const double total = static_cast<double>(delta.sum_total_samples);
  CompositionEstimate est;
  est.round = delta.round;
  est.counts.assign(static_cast<std::size_t>(q), 0.0);
  est.contributing.assign(static_cast<std::size_t>(q), 0);
  est.low_confidence.assign(static_cast<std::size_t>(q), false);
  est.clamped.assign(static_cast<std::size_t>(q), false);

  for (int p = 0; p < q; ++p) {
    const auto& own_delta = pr.class_deltas[static_cast<std::size_t>(p)];
    const double rhs_scale = static_cast<double>(aux.count(p)) * delta.client_count / opts.delta_divisor;
    double sum = 0.0;
    int used = 0;
    for (int i : surviving[static_cast<std::size_t>(p)]) {
      if (!ra.valid(p, i)) continue;
      const double own = own_delta(p, i);
      const double other = own / ra.values(p, i);
      const double coeff = own - other;
      if (std::abs(coeff) < 1e-12) continue;
      const double rhs = rhs_scale * delta.last_layer_delta(p, i);
      sum += (rhs - total * other) / coeff;
      ++used;
    }
    auto& n_hat = est.counts[static_cast<std::size_t>(p)];
    est.contributing[static_cast<std::size_t>(p)] = used;
    if (used == 0) {
      est.low_confidence[static_cast<std::size_t>(p)] = true;
      n_hat = total / q;
      continue;
    }
    n_hat = sum / used;
    if (!std::isfinite(n_hat)) {
      est.low_confidence[static_cast<std::size_t>(p)] = true;
      n_hat = total / q;
    } else if (n_hat < 0.0) {
      est.clamped[static_cast<std::size_t>(p)] = true;
      n_hat = 0.0;
    }
  }
  return est;
}

std::vector<int> minority_signature(const std::vector<double>& counts, double imbalance) {
  std::vector<int> out;
  if (counts.empty()) return out;
  double top = *std::max_element(counts.begin(), counts.end());
  for (std::size_t p = 0; p < counts.size(); ++p)
    if (counts[p] * imbalance <= top) out.push_back(static_cast<int>(p));
  return out;
}

namespace {

bool is_imbalanced(const std::vector<double>& counts, double threshold) {
  double top = *std::max_element(counts.begin(), counts.end());
  double low = *std::min_element(counts.begin(), counts.end());
  if (top <= 0.0) return false;
  return low <= 0.0 || top / low >= threshold;
}

}  // namespace

std::pair<DetectionState, Decision> update_detection(DetectionState state,
                                                     const CompositionEstimate& est) {
  if (est.counts.empty()) throw StructuralError("update_detection: empty estimate");
  const auto& v = est.counts;
  state.history.push_back(v);
  const auto keep = static_cast<std::size_t>(std::max(1, state.cfg.window));
  if (state.history.size() > keep) state.history.erase(state.history.begin());

  if (!is_imbalanced(v, state.cfg.imbalance)) {
    state.consecutive_hits = 0;
    state.last_imbalanced.reset();
  } else {
    bool continues = false;
    if (state.last_imbalanced) {
      const auto& prev = *state.last_imbalanced;
      continues = cosine_similarity(v, prev) >= state.cfg.similarity &&
                  minority_signature(v, state.cfg.imbalance) ==
                      minority_signature(prev, state.cfg.imbalance);
    }
    state.consecutive_hits = continues ? state.consecutive_hits + 1 : 1;
    state.last_imbalanced = v;
  }
  Decision d = Decision::NoAction;
  if (state.consecutive_hits >= state.cfg.window) {
    state.status = DetectionStatus::Alerted;
    d = Decision::LoadRatioLoss;
  }
  return {std::move(state), d};
}

RatioVector ratio_vector_from(const RatioMatrix& ra, const std::vector<std::vector<int>>* indices,
                              int round) {
  const auto q = ra.values.rows();
  RatioVector out;
  out.round_updated = round;
  out.ra.assign(static_cast<std::size_t>(q), 1.0);
  for (Eigen::Index p = 0; p < q; ++p) {
    double sum = 0.0;
    int n = 0;
    if (indices) {
      for (int i : (*indices)[static_cast<std::size_t>(p)]) {
        if (!ra.valid(p, i)) continue;
        sum += ra.values(p, i);
        ++n;
      }
    } else {
      for (Eigen::Index i = 0; i < ra.values.cols(); ++i) {
        if (!ra.valid(p, i)) continue;
        sum += ra.values(p, i);
        ++n;
      }
    }
    if (n > 0) out.ra[static_cast<std::size_t>(p)] = std::abs(sum / n);
  }
  return out;
}

HlSimilarity hl_pair_statistics(const Eigen::MatrixXd& y) {
  HlSimilarity h;
  h.samples = static_cast<int>(y.cols());
  if (y.cols() < 2) {
    h.mean_cosine = 1.0;
    return h;
  }
  Eigen::MatrixXd gram = y.transpose() * y;
  double cos_sum = 0.0;
  long cos_pairs = 0;
  std::vector<double> dots;
  for (Eigen::Index a = 0; a < y.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < y.cols(); ++b) {
      dots.push_back(gram(a, b));
      double na = gram(a, a), nb = gram(b, b);
      if (na > 0.0 && nb > 0.0) {
        cos_sum += gram(a, b) / std::sqrt(na * nb);
        ++cos_pairs;
      }
    }
  }
  h.mean_cosine = cos_pairs ? cos_sum / static_cast<double>(cos_pairs) : 0.0;
  double mean = std::accumulate(dots.begin(), dots.end(), 0.0) / static_cast<double>(dots.size());
  double var = 0.0;
  for (double d : dots) var += (d - mean) * (d - mean);
  var /= static_cast<double>(dots.size());
  h.dot_variation = mean != 0.0 ? std::sqrt(var) / std::abs(mean) : 0.0;
  return h;
}

std::vector<HlSimilarity> hl_similarity_diagnostic(const MlpModel& model, const Dataset& data,
                                                   int max_per_class) {
  if (max_per_class < 1) throw ConfigError("hl diagnostic: max_per_class must be >= 1");
  std::vector<HlSimilarity> out;
  auto groups = data.indices_by_class();
  for (int p = 0; p < data.class_count; ++p) {
    auto& g = groups[static_cast<std::size_t>(p)];
    if (g.empty()) continue;
    if (static_cast<int>(g.size()) > max_per_class) g.resize(static_cast<std::size_t>(max_per_class));
    ForwardTrace trace = forward(model, data.gather(g));
    HlSimilarity h = hl_pair_statistics(trace.hl_output());
    h.class_id = p;
    out.push_back(h);
  }
  return out;
}

CompositionMonitor::CompositionMonitor(AuxiliaryData aux, MonitorConfig cfg, double learning_rate,
                                       int local_epochs)
    : aux_(std::move(aux)),
      cfg_(cfg),
      learning_rate_(learning_rate),
      local_epochs_(local_epochs) {
  detection_.cfg = cfg_.detection;
}

MonitorRecord CompositionMonitor::observe(const MlpModel& g_t, const MlpModel& g_t1,
                                          const RoundDelta& delta) {
  (void)g_t1;  // the delta already carries W^{G_{t+1}} - W^{G_t}
  ProbeResult pr = probe(g_t, aux_, learning_rate_);
  RatioMatrix ra = ratio_matrix(pr);
  auto surviving = filter_weights(ra, cfg_.ratio_threshold);
  EstimateOptions opts;
  if (cfg_.divide_by_local_epochs && local_epochs_ > 1) opts.delta_divisor = local_epochs_;

  MonitorRecord rec;
  rec.round = delta.round;
  rec.estimate = estimate_counts(pr, ra, surviving, delta, aux_, opts);
  rec.ratios = ratio_vector_from(ra, cfg_.ratios_from_surviving ? &surviving : nullptr, delta.round);
  auto [next, decision] = update_detection(std::move(detection_), rec.estimate);
  detection_ = std::move(next);
  rec.status = detection_.status;
  rec.consecutive_hits = detection_.consecutive_hits;
  rec.decision = decision;
  records_.push_back(rec);
  return rec;
}

MonitorHook CompositionMonitor::hook() {
  return [this](const MlpModel& g_t, const MlpModel& g_t1, const RoundDelta& delta) {
    MonitorRecord rec = observe(g_t, g_t1, delta);
    return MonitorVerdict{rec.decision, rec.ratios};
  };
}

}  // namespace fedbalance
