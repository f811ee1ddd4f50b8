#include <numeric>
#include <random>

#include "fedbalance/data.hpp"
#include "fedbalance/rng.hpp"

namespace fedbalance {

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::vector<std::vector<int>> Dataset::indices_by_class() const {
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(class_count));
  for (int i = 0; i < size(); ++i) groups[static_cast<std::size_t>(labels[i])].push_back(i);
  return groups;
}

Eigen::MatrixXd Dataset::gather(std::span<const int> indices) const {
  Eigen::MatrixXd out(features.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    int i = indices[k];
    if (i < 0 || i >= size()) throw IndexError("dataset index " + std::to_string(i) + " out of range");
    out.col(static_cast<Eigen::Index>(k)) = features.col(i);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= size()) throw IndexError("dataset index " + std::to_string(i) + " out of range");
    out.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw StructuralError("dataset is empty");
  if (features.cols() != static_cast<Eigen::Index>(labels.size())) {
    throw StructuralError("dataset: feature columns do not match label count");
  }
  if (class_count < 2) throw ConfigError("dataset: class_count must be >= 2");
  for (int y : labels) {
    if (y < 0 || y >= class_count) throw StructuralError("dataset: label out of range");
  }
  if (features.size() && (features.minCoeff() < 0.0 || features.maxCoeff() > 1.0)) {
    throw StructuralError("dataset: features must lie in [0, 1]");
  }
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.class_count < 2) throw ConfigError("synthetic: class_count must be >= 2");
  if (spec.dim < 1) throw ConfigError("synthetic: dim must be >= 1");
  if (spec.per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
  if (!(spec.separation > 0.0)) throw ConfigError("synthetic: separation must be > 0");
  if (!(spec.noise_stddev >= 0.0)) throw ConfigError("synthetic: noise_stddev must be >= 0");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int q = spec.class_count, d = spec.dim;

  Eigen::MatrixXd means(d, q);
  double min_dist = 0.0;
  while (min_dist <= 0.0) {
    for (int c = 0; c < q; ++c)
      for (int r = 0; r < d; ++r) means(r, c) = normal(rng);
    min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < q; ++a)
      for (int b = a + 1; b < q; ++b) min_dist = std::min(min_dist, (means.col(a) - means.col(b)).norm());
  }
  means *= spec.separation / min_dist;

  Dataset ds;
  ds.class_count = q;
  ds.features.resize(d, static_cast<Eigen::Index>(q) * spec.per_class);
  ds.labels.reserve(static_cast<std::size_t>(q) * spec.per_class);
  Eigen::Index col = 0;
  for (int c = 0; c < q; ++c) {
    for (int k = 0; k < spec.per_class; ++k, ++col) {
      for (int r = 0; r < d; ++r) ds.features(r, col) = means(r, c) + spec.noise_stddev * normal(rng);
      ds.labels.push_back(c);
    }
  }
  double lo = ds.features.minCoeff(), hi = ds.features.maxCoeff();
  double span = hi > lo ? hi - lo : 1.0;
  ds.features = ((ds.features.array() - lo) / span).matrix();
  return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_per_class(const Dataset& data,
                                                              int per_class,
                                                              std::uint64_t seed,
                                                              std::span<const int> pool) {
  if (per_class < 0) throw ConfigError("split_per_class: per_class must be >= 0");
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(data.class_count));
  if (pool.empty()) {
    groups = data.indices_by_class();
  } else {
    for (int i : pool) groups[static_cast<std::size_t>(data.labels.at(static_cast<std::size_t>(i)))].push_back(i);
  }
  Rng rng(seed);
  std::vector<int> taken, rest;
  for (int c = 0; c < data.class_count; ++c) {
    auto& g = groups[static_cast<std::size_t>(c)];
    if (static_cast<int>(g.size()) < per_class) {
      throw ConfigError("split_per_class: class " + std::to_string(c) + " has " +
                        std::to_string(g.size()) + " samples, need " + std::to_string(per_class));
    }
    std::shuffle(g.begin(), g.end(), rng);
    taken.insert(taken.end(), g.begin(), g.begin() + per_class);
    rest.insert(rest.end(), g.begin() + per_class, g.end());
  }
  std::sort(taken.begin(), taken.end());
  std::sort(rest.begin(), rest.end());
  return {std::move(taken), std::move(rest)};
}

std::int64_t ClientShard::total() const {
  return std::accumulate(per_class_counts.begin(), per_class_counts.end(), std::int64_t{0});
}

double imbalance_ratio(std::span<const std::int64_t> counts) {
  if (counts.empty()) throw ConfigError("imbalance_ratio: no counts");
  auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi <= 0) throw ConfigError("imbalance_ratio: all counts are zero");
  if (*lo == 0) return kExtremeImbalance;
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

double local_imbalance(const ClientShard& shard) {
  if (shard.total() <= 0) throw ConfigError("local_imbalance: shard is empty");
  std::vector<std::int64_t> c(shard.per_class_counts.begin(), shard.per_class_counts.end());
  return imbalance_ratio(c);
}

std::vector<std::int64_t> composition(std::span<const ClientShard> shards) {
  if (shards.empty()) throw ConfigError("composition: no shards");
  std::vector<std::int64_t> v(shards.front().per_class_counts.size(), 0);
  for (const auto& s : shards) {
    if (s.per_class_counts.size() != v.size()) throw StructuralError("composition: class count mismatch");
    for (std::size_t p = 0; p < v.size(); ++p) v[p] += s.per_class_counts[p];
  }
  return v;
}

double global_imbalance(std::span<const ClientShard> shards) {
  auto v = composition(shards);
  return imbalance_ratio(v);
}

std::vector<double> client_similarities(std::span<const ClientShard> shards) {
  auto v = composition(shards);
  std::vector<double> out;
  out.reserve(shards.size());
  for (const auto& s : shards) {
    out.push_back(cosine_similarity(std::span<const int>(s.per_class_counts),
                                    std::span<const std::int64_t>(v)));
  }
  return out;
}

}  // namespace fedbalance
