#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

// Test-side randomness, deliberately independent of dap::RngStream.
namespace testing_support {

struct Draws {
  explicit Draws(unsigned seed) : gen(seed) {}

  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(gen); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }

  Eigen::VectorXd vec(Eigen::Index n, double sd = 1.0) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(sd);
    return v;
  }

  std::mt19937_64 gen;
};

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace testing_support
