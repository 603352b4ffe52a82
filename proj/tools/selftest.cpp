#include "commands.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

namespace dap::cli {

namespace {

using Check = std::function<std::string()>;  // empty string: pass

Vec random_vec(RngStream& rng, int d, double scale = 1.0) { return scale * rng.normal_vec(d); }

std::string metric_axioms() {
  RngStream rng(11, {1});
  for (const KernelSpec& k : {KernelSpec{LinearKernel{}}, KernelSpec{RbfKernel{1.0}}}) {
    for (int i = 0; i < 2000; ++i) {
      const Vec x = random_vec(rng, 3, 2.0), y = random_vec(rng, 3, 2.0), z = random_vec(rng, 3, 2.0);
      const double dxy = induced_distance(k, x, y), dyx = induced_distance(k, y, x);
      if (dxy < 0.0) return "negative distance";
      if (std::abs(dxy - dyx) > 1e-12) return "asymmetric distance";
      if (induced_distance(k, x, x) > 1e-9) return "d(x,x) != 0";
      if (dxy > induced_distance(k, x, z) + induced_distance(k, z, y) + 1e-9) return "triangle inequality";
    }
  }
  return {};
}

std::string factorization() {
  RngStream rng(11, {2});
  const FeatureMap id;
  for (int i = 0; i < 2000; ++i) {
    const Vec x = random_vec(rng, 4), y = random_vec(rng, 4);
    if (std::abs(induced_distance(LinearKernel{}, x, y) - factorized_distance(id, FeatureNorm::euclidean, x, y)) > 1e-9) {
      return "linear-kernel distance differs from identity-map distance";
    }
  }
  return {};
}

std::string gradient_fd() {
  RngStream rng(11, {3});
  DenoiserShape shape;
  shape.hidden = {16, 16};
  shape.time_dim = 8;
  const DenoiserModel model(shape, 5);
  const std::vector<FeatureMap> maps = {FeatureMap{}, FeatureMap(make_random_projection(3, 2, 9)),
                                        FeatureMap(DenoiserHidden{1}, &model)};
  for (const FeatureMap& map : maps) {
    for (const KernelSpec& k : {KernelSpec{LinearKernel{}}, KernelSpec{RbfKernel{1.0}}}) {
      for (int trial = 0; trial < 5; ++trial) {
        const FeatureContext ctx{1 + static_cast<int>(rng.below(50)), static_cast<int>(rng.below(4))};
        const Vec x = random_vec(rng, 2);
        Mat refs(2, 6);
        for (Eigen::Index j = 0; j < refs.cols(); ++j) refs.col(j) = random_vec(rng, 2);
        const Mat rf = map.apply_batch(refs, ctx);
        const Vec g = guidance_gradient(k, map, x, rf, ctx);
        const double h = 1e-5;
        Vec fd(2);
        for (int i = 0; i < 2; ++i) {
          Vec xp = x, xm = x;
          xp[i] += h;
          xm[i] -= h;
          fd[i] = -(representativeness_energy(k, map.apply(xp, ctx), rf) -
                    representativeness_energy(k, map.apply(xm, ctx), rf)) / (2 * h);
        }
        if ((g - fd).norm() > 1e-4 * std::max(1.0, fd.norm())) return "gradient mismatch for " + to_string(map.spec());
      }
    }
  }
  return {};
}

std::string zero_guidance() {
  const NoiseSchedule sched = NoiseSchedule::linear(100, 1e-3, 0.2);
  const GmmSpec spec = rings_and_blobs();
  const AnalyticScore score(spec, sched);
  RngStream rng(11, {4});
  const LabeledDataset train = spec.sample(50, rng);
  GuidanceConfig cfg;
  cfg.t_stop = 10;
  for (int variant = 0; variant < 2; ++variant) {
    GuidanceConfig c = cfg;
    if (variant == 0) c.gamma = 0.0; else c.t_stop = sched.steps();
    ReferenceBank bank(train, 16, 3, FeatureMap{});
    const SampleResult r = sample_distilled(c, sched, score, bank, 1, 4, 21, Exec::serial);
    const VecList u = sample_unguided(sched, score, 1, 4, 21, c.step_rule, Exec::serial);
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (r.samples[i] != u[i]) return "guided sampler differs from unguided";
      if (r.counters[i].guided != 0) return "guidance branch evaluated";
    }
  }
  return {};
}

std::string mmd_oracle() {
  RngStream rng(11, {5});
  VecList a, b;
  for (int i = 0; i < 20; ++i) a.push_back(random_vec(rng, 2));
  for (int i = 0; i < 15; ++i) b.push_back(random_vec(rng, 2, 1.5));
  const KernelSpec k = RbfKernel{1.0};
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) xx += kernel_eval(k, a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) yy += kernel_eval(k, b[i], b[j]);
  for (const Vec& x : a)
    for (const Vec& y : b) xy += kernel_eval(k, x, y);
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  const double naive = xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2 * xy / (m * n);
  if (std::abs(naive - mmd2_unbiased(k, a, b)) > 1e-10) return "MMD estimator differs from double loop";
  return {};
}

std::string round_trip() {
  const NoiseSchedule sched = NoiseSchedule::make_default();
  RngStream rng(11, {6});
  for (int t : {1, 10, 500, 1000}) {
    const Vec x0 = random_vec(rng, 3);
    const NoisedSample ns = forward_noise(sched, x0, t, rng);
    if ((x0_estimate(sched, ns.xt, ns.eps, t) - x0).norm() > 1e-10) {
      return "forward noise / x0 estimate round trip";
    }
  }
  DistilledSet set = distill_random(rings_and_blobs().sample(20, rng), 3, 4);
  std::istringstream in(container_bytes(set));
  if (container_bytes(read_container(in)) != container_bytes(set)) return "container round trip";
  return {};
}

}  // namespace

int cmd_selftest(std::ostream& log) {
  const std::vector<std::pair<std::string, Check>> checks = {
      {"metric axioms", metric_axioms},   {"kernel factorization", factorization},
      {"guidance gradient", gradient_fd}, {"zero-guidance reduction", zero_guidance},
      {"MMD estimator", mmd_oracle},      {"round trips", round_trip},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    std::string err;
    try {
      err = check();
    } catch (const std::exception& e) {
      err = std::string("threw: ") + e.what();
    }
    log << (err.empty() ? "PASS " : "FAIL ") << name << (err.empty() ? "" : ": " + err) << "\n";
    if (!err.empty()) ++failures;
  }
  return failures;
}

}  // namespace dap::cli
