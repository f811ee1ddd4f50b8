#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedbalance/errors.hpp"

namespace fedbalance {

struct Dataset {
  Eigen::MatrixXd features;  // d x N, one column per sample, values in [0, 1]
  std::vector<int> labels;   // N
  int class_count = 0;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.rows()); }
  std::vector<int> class_counts() const;
  // Indices grouped by label, each group in ascending order.
  std::vector<std::vector<int>> indices_by_class() const;
  Eigen::MatrixXd gather(std::span<const int> indices) const;
  std::vector<int> gather_labels(std::span<const int> indices) const;
  void validate() const;
};

// IDX files as distributed for MNIST (big-endian headers, magic 0x803 for
// images and 0x801 for labels). Pixels are scaled to [0, 1].
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

struct SyntheticSpec {
  int class_count = 10;
  int dim = 32;
  int per_class = 500;
  double separation = 10.0;  // minimum distance between class means
  double noise_stddev = 1.0;
};

// Gaussian blobs, one mean per class, then one affine map of all features
// into [0, 1] (same scale on every axis, so the geometry is preserved).
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct ClientShard {
  int client_id = 0;
  std::vector<int> indices;           // into the source Dataset
  std::vector<int> per_class_counts;  // N_p^j
  // Per-client feature shift added during local training; empty when off.
  Eigen::VectorXd feature_offset;
  std::int64_t total() const;
};

struct PartitionPlan {
  int num_clients = 100;
  int classes_min = 1;
  int classes_max = 10;
  int samples_per_class = 50;  // per client, for each majority class it holds
  double global_ratio = 1.0;   // target majority:minority ratio
  std::vector<int> minority_classes;
  std::uint64_t seed = 0;

  void validate(int class_count) const;
};

// Splits the pool (all of `data` when empty) across clients without
// replacement. Class sets per client are drawn at random from
// [classes_min, classes_max], spreading classes evenly over clients. Each
// minority class receives round(max majority total / global_ratio) samples
// in total, divided over the clients that hold it.
std::vector<ClientShard> partition(const Dataset& data, const PartitionPlan& plan,
                                   std::span<const int> pool = {});

// Class-stratified split of [0, data.size()): `per_class` indices of every
// class are drawn into the first result, the rest into the second.
std::pair<std::vector<int>, std::vector<int>> split_per_class(const Dataset& data,
                                                              int per_class,
                                                              std::uint64_t seed,
                                                              std::span<const int> pool = {});

inline constexpr double kExtremeImbalance = std::numeric_limits<double>::infinity();

// max / min over the given counts; +inf when the smallest count is zero.
double imbalance_ratio(std::span<const std::int64_t> counts);
double local_imbalance(const ClientShard& shard);
// V = [sum_j N_1^j, ..., sum_j N_Q^j]
std::vector<std::int64_t> composition(std::span<const ClientShard> shards);
double global_imbalance(std::span<const ClientShard> shards);

template <typename A, typename B>
double cosine_similarity(std::span<const A> u, std::span<const B> v) {
  if (u.size() != v.size()) throw StructuralError("cosine_similarity: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double a = static_cast<double>(u[i]), b = static_cast<double>(v[i]);
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) throw UndefinedInputError("cosine_similarity: zero vector");
  double cs = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(cs, -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
  return cosine_similarity(std::span<const double>(u), std::span<const double>(v));
}

// CS_j between each shard's composition and the global composition.
std::vector<double> client_similarities(std::span<const ClientShard> shards);

}  // namespace fedbalance
