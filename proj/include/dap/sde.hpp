#pragma once

#include "dap/common.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dap {

// Discrete variance-preserving schedule. Steps are 1-based: beta(1) is the
// first forward step, beta(T) the last. alpha_bar(0) == 1 by convention.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  // Default sampler schedule (1000 steps, beta 1e-4 .. 0.02).
  static NoiseSchedule make_default();

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  double beta_start() const { return betas_.front(); }
  double beta_end() const { return betas_.back(); }

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// Deterministic Gaussian source. A stream is identified by a seed plus an
// optional key path (class, trajectory, step, ...); distinct keys give
// statistically independent streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : RngStream(seed, {}) {}
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> key);

  RngStream child(std::initializer_list<std::uint64_t> key) const;

  double normal() { return normal_(engine_); }
  Vec normal_vec(Eigen::Index n);
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

struct NoisedSample {
  Vec xt;
  Vec eps;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, eps ~ N(0, I). t in [0, T].
NoisedSample forward_noise(const NoiseSchedule& schedule, const Vec& x0, int t, RngStream& rng);

// Same map with a caller-supplied eps (used to replay or zero the noise).
Vec forward_noise_with(const NoiseSchedule& schedule, const Vec& x0, int t, const Vec& eps);

enum class StepRule {
  // (2 - sqrt(1 - beta_t)) x_t + beta_t * score + sqrt(beta_t) z
  algorithm1,
  // Exact DDPM posterior mean with posterior variance beta_tilde.
  posterior,
};

const char* to_string(StepRule rule);
StepRule parse_step_rule(const std::string& s);

// Score implied by an eps prediction at step t: -eps / sqrt(1 - abar_t).
Vec eps_to_score(const NoiseSchedule& schedule, const Vec& eps_pred, int t);

// One reverse step x_t -> x_{t-1}. No noise is injected at t == 1.
Vec ancestral_step(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t,
                   RngStream& rng, StepRule rule = StepRule::algorithm1);

// Same step with an explicit standard-normal draw z (ignored at t == 1).
Vec ancestral_step_with(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t,
                        const Vec& z, StepRule rule = StepRule::algorithm1);

// Denoised estimate (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Vec x0_estimate(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t);

}  // namespace dap
