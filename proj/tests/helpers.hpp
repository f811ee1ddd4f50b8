#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "fedbalance/nn.hpp"

namespace testutil {

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline fedbalance::MlpModel random_model(int in, std::vector<int> hidden, int q, std::uint64_t seed,
                                         fedbalance::Activation act = fedbalance::Activation::ReLU) {
  auto m = fedbalance::init_model({in, std::move(hidden), act, q}, seed);
  std::mt19937_64 rng(seed ^ 0xabcdef);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& l : m.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b)));
}

}  // namespace testutil
