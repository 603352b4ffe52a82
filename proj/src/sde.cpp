#include "dap/sde.hpp"

#include <cmath>
#include <limits>

namespace dap {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  alpha_bars_.reserve(betas_.size());
  double prod = 1.0;
  for (double b : betas_) {
    prod *= 1.0 - b;
    alpha_bars_.push_back(prod);
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  require(steps >= 2, "schedule needs at least 2 steps");
  require(std::isfinite(beta_start) && std::isfinite(beta_end), "schedule bounds must be finite");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "schedule bounds must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double span = beta_end - beta_start;
  for (int i = 0; i < steps; ++i) {
    betas[static_cast<std::size_t>(i)] = beta_start + span * static_cast<double>(i) / (steps - 1);
  }
  betas.back() = beta_end;
  NoiseSchedule out(std::move(betas));
  // x0_estimate divides by sqrt(abar_T); an underflowed product is unusable.
  require(out.alpha_bars_.back() > std::numeric_limits<double>::min(),
          "schedule: alpha_bar underflows to zero; lower beta_end or the step count");
  return out;
}

NoiseSchedule NoiseSchedule::make_default() { return linear(1000, 1e-4, 0.02); }

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw ValidationError("step " + std::to_string(t) + " out of range");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps()) throw ValidationError("step " + std::to_string(t) + " out of range");
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

RngStream::RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : key) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  key_ = h;
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  engine_.seed(seq);
}

RngStream RngStream::child(std::initializer_list<std::uint64_t> key) const {
  RngStream out(key_, key);
  return out;
}

Vec RngStream::normal_vec(Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal_(engine_);
  return v;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

NoisedSample forward_noise(const NoiseSchedule& schedule, const Vec& x0, int t, RngStream& rng) {
  const double abar = schedule.alpha_bar(t);
  NoisedSample out;
  out.eps = rng.normal_vec(x0.size());
  out.xt = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * out.eps;
  return out;
}

Vec forward_noise_with(const NoiseSchedule& schedule, const Vec& x0, int t, const Vec& eps) {
  require_same_dim(x0, eps, "forward_noise");
  const double abar = schedule.alpha_bar(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

const char* to_string(StepRule rule) {
  switch (rule) {
    case StepRule::algorithm1: return "algorithm1";
    case StepRule::posterior: return "posterior";
  }
  return "?";
}

StepRule parse_step_rule(const std::string& s) {
  if (s == "algorithm1") return StepRule::algorithm1;
  if (s == "posterior") return StepRule::posterior;
  throw ValidationError("unknown step rule '" + s + "'");
}

Vec eps_to_score(const NoiseSchedule& schedule, const Vec& eps_pred, int t) {
  return -eps_pred / std::sqrt(1.0 - schedule.alpha_bar(t));
}

Vec ancestral_step_with(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t,
                        const Vec& z, StepRule rule) {
  require_same_dim(x_t, eps_pred, "ancestral_step");
  const double beta = schedule.beta(t);
  const double abar = schedule.alpha_bar(t);
  const double sigma_eps = std::sqrt(1.0 - abar);

  Vec out;
  double noise_scale = 0.0;
  if (rule == StepRule::algorithm1) {
    // beta * score == -(beta / sqrt(1 - abar)) * eps
    out = (2.0 - std::sqrt(1.0 - beta)) * x_t - (beta / sigma_eps) * eps_pred;
    noise_scale = std::sqrt(beta);
  } else {
    out = (x_t - (beta / sigma_eps) * eps_pred) / std::sqrt(1.0 - beta);
    const double abar_prev = schedule.alpha_bar(t - 1);
    noise_scale = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
  }
  if (t > 1) {
    require_same_dim(x_t, z, "ancestral_step noise");
    out += noise_scale * z;
  }
  return out;
}

Vec ancestral_step(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t,
                   RngStream& rng, StepRule rule) {
  if (t > 1) return ancestral_step_with(schedule, x_t, eps_pred, t, rng.normal_vec(x_t.size()), rule);
  return ancestral_step_with(schedule, x_t, eps_pred, t, Vec(), rule);
}

Vec x0_estimate(const NoiseSchedule& schedule, const Vec& x_t, const Vec& eps_pred, int t) {
  require_same_dim(x_t, eps_pred, "x0_estimate");
  const double abar = schedule.alpha_bar(t);
  return (x_t - std::sqrt(1.0 - abar) * eps_pred) / std::sqrt(abar);
}

}  // namespace dap
