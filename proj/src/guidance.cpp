#include "dap/guidance.hpp"

#include <cmath>
#include <numeric>

namespace dap {

const char* to_string(GuidanceTarget target) {
  return target == GuidanceTarget::noisy_state ? "noisy" : "x0";
}

GuidanceTarget parse_guidance_target(const std::string& s) {
  if (s == "noisy") return GuidanceTarget::noisy_state;
  if (s == "x0") return GuidanceTarget::denoised_estimate;
  throw ValidationError("unknown guidance target '" + s + "' (expected noisy or x0)");
}

void GuidanceConfig::validate(const NoiseSchedule& schedule) const {
  require(std::isfinite(gamma) && gamma >= 0.0, "gamma must be a non-negative number");
  require(t_stop >= 0 && t_stop <= schedule.steps(),
          "t_stop must lie in [0, " + std::to_string(schedule.steps()) + "]");
  require(reference_batch >= 1, "reference batch must be at least 1");
  dap::validate(kernel);
}

// ---------------------------------------------------------------------------

ReferenceBank::ReferenceBank(const LabeledDataset& train, int reference_batch, std::uint64_t seed,
                             FeatureMap map, bool frozen_noise)
    : map_(std::move(map)), seed_(seed), frozen_noise_(frozen_noise) {
  require(reference_batch >= 1, "reference batch must be at least 1");
  require(!train.empty(), "reference bank: empty training set");
  map_.check_input_dim(train.dim());
  for (int label : train.classes) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.labels[i] == label) idx.push_back(i);
    }
    if (idx.empty()) continue;
    const std::size_t n = std::min(idx.size(), static_cast<std::size_t>(reference_batch));
    RngStream rng(seed, {0xBA4CULL, static_cast<std::uint64_t>(label)});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    Entry e;
    e.clean.resize(train.dim(), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) e.clean.col(static_cast<Eigen::Index>(i)) = train.samples[idx[i]];
    if (frozen_noise_) {
      RngStream noise(seed, {0xF207ULL, static_cast<std::uint64_t>(label)});
      e.frozen_eps.resize(e.clean.rows(), e.clean.cols());
      for (Eigen::Index c = 0; c < e.clean.cols(); ++c) e.frozen_eps.col(c) = noise.normal_vec(e.clean.rows());
    }
    entries_.emplace(label, std::move(e));
  }
}

ReferenceBank::Entry& ReferenceBank::entry(int label) {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw ValidationError("reference bank has no class " + std::to_string(label));
  return it->second;
}

const Mat& ReferenceBank::clean(int label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw ValidationError("reference bank has no class " + std::to_string(label));
  return it->second.clean;
}

const Mat& ReferenceBank::noised(int label, int t, const NoiseSchedule& schedule) {
  Entry& e = entry(label);
  if (t == 0) return e.clean;
  if (e.noised_t == t) return e.noised;
  const double abar = schedule.alpha_bar(t);
  if (frozen_noise_) {
    e.noised = std::sqrt(abar) * e.clean + std::sqrt(1.0 - abar) * e.frozen_eps;
  } else {
    RngStream noise(seed_, {0x401CULL, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(t)});
    Mat eps(e.clean.rows(), e.clean.cols());
    for (Eigen::Index c = 0; c < eps.cols(); ++c) eps.col(c) = noise.normal_vec(eps.rows());
    e.noised = std::sqrt(abar) * e.clean + std::sqrt(1.0 - abar) * eps;
  }
  e.noised_t = t;
  return e.noised;
}

const Mat& ReferenceBank::features(int label, int t, const NoiseSchedule& schedule) {
  Entry& e = entry(label);
  if (e.features_t == t) return e.features;
  const Mat& x = noised(label, t, schedule);
  e.features = map_.apply_batch(x, {t, label});
  e.features_t = t;
  return e.features;
}

const Mat& ReferenceBank::clean_features(int label, int t) {
  Entry& e = entry(label);
  if (e.clean_features_t == t) return e.clean_features;
  e.clean_features = map_.apply_batch(e.clean, {t, label});
  e.clean_features_t = t;
  return e.clean_features;
}

// ---------------------------------------------------------------------------

namespace {

Mat to_columns(const VecList& list) {
  require(!list.empty(), "empty reference list");
  Mat m(list.front().size(), static_cast<Eigen::Index>(list.size()));
  for (std::size_t i = 0; i < list.size(); ++i) {
    require_same_dim(list.front(), list[i], "references");
    m.col(static_cast<Eigen::Index>(i)) = list[i];
  }
  return m;
}

// Per-reference distance d_j and the weight w_j with
// grad_{fx} d_j = w_j * (fx - r_j). Vectorized over references.
void distance_terms(const KernelSpec& kernel, const Vec& fx, const Mat& refs, Eigen::ArrayXd& dist,
                    Eigen::ArrayXd& weight, Mat& diff) {
  diff = (-refs).colwise() + fx;
  const Eigen::ArrayXd sq = diff.colwise().squaredNorm().transpose().array();
  const Eigen::Index n = refs.cols();
  dist.resize(n);
  weight.resize(n);
  if (std::holds_alternative<LinearKernel>(kernel)) {
    dist = sq.sqrt();
    for (Eigen::Index j = 0; j < n; ++j) weight[j] = dist[j] < kSingularDistance ? 0.0 : 1.0 / dist[j];
  } else {
    const double s2 = std::get<RbfKernel>(kernel).bandwidth * std::get<RbfKernel>(kernel).bandwidth;
    const Eigen::ArrayXd e = (-sq / (2.0 * s2)).exp();
    dist = (2.0 - 2.0 * e).max(0.0).sqrt();
    for (Eigen::Index j = 0; j < n; ++j) {
      weight[j] = (dist[j] < kSingularDistance || std::sqrt(sq[j]) < kSingularDistance)
                      ? 0.0
                      : e[j] / (s2 * dist[j]);
    }
  }
}

}  // namespace

double representativeness_energy(const KernelSpec& kernel, const Vec& x_features, const Mat& ref_features,
                                 Exec exec) {
  require(ref_features.cols() > 0, "representativeness_energy: no references");
  require(ref_features.rows() == x_features.size(), "representativeness_energy: dimension mismatch");
  if (exec == Exec::serial) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < ref_features.cols(); ++j) {
      acc += induced_distance(kernel, x_features, ref_features.col(j));
    }
    return acc / static_cast<double>(ref_features.cols());
  }
  require_finite(x_features, "x");
  Eigen::ArrayXd dist, weight;
  Mat diff;
  distance_terms(kernel, x_features, ref_features, dist, weight, diff);
  return dist.mean();
}

double representativeness_energy(const GuidanceConfig& cfg, const FeatureMap& map, const Vec& x,
                                 const VecList& refs, const FeatureContext& ctx) {
  const Mat r = to_columns(refs);
  require(r.rows() == x.size(), "representativeness_energy: dimension mismatch");
  return representativeness_energy(cfg.kernel, map.apply(x, ctx), map.apply_batch(r, ctx), Exec::serial);
}

Vec guidance_gradient(const KernelSpec& kernel, const FeatureMap& map, const Vec& x, const Mat& ref_features,
                      const FeatureContext& ctx, Exec exec) {
  require(ref_features.cols() > 0, "guidance_gradient: no references");
  const Vec fx = map.apply(x, ctx);
  require(ref_features.rows() == fx.size(), "guidance_gradient: feature dimension mismatch");
  const double inv_n = 1.0 / static_cast<double>(ref_features.cols());
  Vec grad_f = Vec::Zero(fx.size());
  if (exec == Exec::serial) {
    for (Eigen::Index j = 0; j < ref_features.cols(); ++j) {
      grad_f += induced_distance_grad(kernel, fx, ref_features.col(j));
    }
  } else {
    require_finite(fx, "features");
    Eigen::ArrayXd dist, weight;
    Mat diff;
    distance_terms(kernel, fx, ref_features, dist, weight, diff);
    grad_f = diff * weight.matrix();
  }
  grad_f *= inv_n;
  return -map.pullback(x, ctx, grad_f);
}

Vec guidance_gradient(const GuidanceConfig& cfg, const FeatureMap& map, const Vec& x_t, const VecList& refs_t,
                      const FeatureContext& ctx) {
  const Mat r = to_columns(refs_t);
  require(r.rows() == x_t.size(), "guidance_gradient: dimension mismatch");
  return guidance_gradient(cfg.kernel, map, x_t, map.apply_batch(r, ctx), ctx, Exec::serial);
}

// ---------------------------------------------------------------------------

Vec guided_step(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                const FeatureMap& map, const Mat* ref_features, int label, const Vec& x_t, int t,
                RngStream& rng, StepCounters* counters) {
  const Vec eps = score.eps(x_t, t, label);
  Vec next = ancestral_step(schedule, x_t, eps, t, rng, cfg.step_rule);
  if (!cfg.guides(t)) {
    if (counters) ++counters->unguided;
    if (!next.allFinite()) throw NumericalError("reverse step " + std::to_string(t) + " produced non-finite values");
    return next;
  }
  require(ref_features != nullptr, "guided_step: no reference features for step " + std::to_string(t));
  const FeatureContext ctx{t, label};
  const Vec at = cfg.target == GuidanceTarget::noisy_state ? x_t : x0_estimate(schedule, x_t, eps, t);
  next += cfg.gamma * guidance_gradient(cfg.kernel, map, at, *ref_features, ctx, Exec::parallel);
  if (!next.allFinite()) {
    throw NumericalError("guided step " + std::to_string(t) + " produced non-finite values (gamma too large?)");
  }
  if (counters) ++counters->guided;
  return next;
}

Vec guided_step(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                ReferenceBank& bank, int label, const Vec& x_t, int t, RngStream& rng, StepCounters* counters) {
  const Mat* feats = nullptr;
  if (cfg.guides(t)) {
    feats = cfg.target == GuidanceTarget::noisy_state ? &bank.features(label, t, schedule)
                                                       : &bank.clean_features(label, t);
  }
  return guided_step(cfg, schedule, score, bank.feature_map(), feats, label, x_t, t, rng, counters);
}

RngStream trajectory_stream(std::uint64_t seed, int label, int index) {
  return RngStream(seed, {0x7247ULL, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index)});
}

SampleResult sample_distilled(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                              ReferenceBank& bank, int label, int ipc, std::uint64_t seed, Exec exec) {
  require(ipc >= 1, "ipc must be at least 1");
  cfg.validate(schedule);
  require(bank.has_class(label), "reference bank has no class " + std::to_string(label));
  const auto n = static_cast<std::size_t>(ipc);
  std::vector<RngStream> rngs;
  rngs.reserve(n);
  SampleResult out;
  out.samples.resize(n);
  out.counters.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rngs.push_back(trajectory_stream(seed, label, static_cast<int>(i)));
    out.samples[i] = rngs.back().normal_vec(score.dim());
  }
  const FeatureMap& map = bank.feature_map();
  for (int t = schedule.steps(); t >= 1; --t) {
    const Mat* feats = nullptr;
    if (cfg.guides(t)) {
      feats = cfg.target == GuidanceTarget::noisy_state ? &bank.features(label, t, schedule)
                                                         : &bank.clean_features(label, t);
    }
    const auto count = static_cast<std::ptrdiff_t>(n);
    if (exec == Exec::parallel) {
      FirstError err;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(i);
        err.run([&] {
          out.samples[k] = guided_step(cfg, schedule, score, map, feats, label, out.samples[k], t, rngs[k],
                                       &out.counters[k]);
        });
      }
      err.rethrow();
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        out.samples[k] = guided_step(cfg, schedule, score, map, feats, label, out.samples[k], t, rngs[k],
                                     &out.counters[k]);
      }
    }
  }
  for (const Vec& x : out.samples) {
    if (!x.allFinite()) throw NumericalError("sampler produced non-finite values (gamma too large?)");
  }
  return out;
}

VecList sample_unguided(const NoiseSchedule& schedule, const ScoreModel& score, int label, int n,
                        std::uint64_t seed, StepRule rule, Exec exec) {
  require(n >= 1, "sample count must be at least 1");
  VecList out(static_cast<std::size_t>(n));
  auto run = [&](int i) {
    RngStream rng = trajectory_stream(seed, label, i);
    Vec x = rng.normal_vec(score.dim());
    for (int t = schedule.steps(); t >= 1; --t) x = ancestral_step(schedule, x, score.eps(x, t, label), t, rng, rule);
    out[static_cast<std::size_t>(i)] = std::move(x);
  };
  if (exec == Exec::parallel) {
    FirstError err;
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) err.run([&] { run(i); });
    err.rethrow();
  } else {
    for (int i = 0; i < n; ++i) run(i);
  }
  return out;
}

}  // namespace dap
