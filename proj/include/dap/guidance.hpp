#pragma once

#include "dap/common.hpp"
#include "dap/dataset.hpp"
#include "dap/kernels.hpp"
#include "dap/scores.hpp"
#include "dap/sde.hpp"

#include <map>
#include <string>

namespace dap {

// Where the representativeness gradient is evaluated.
enum class GuidanceTarget {
  noisy_state,        // on x_t against references noised to step t (default)
  denoised_estimate,  // on x0_estimate(x_t) against clean references
};

const char* to_string(GuidanceTarget target);
GuidanceTarget parse_guidance_target(const std::string& s);

struct GuidanceConfig {
  double gamma = 0.005;
  // Guidance runs for steps t > t_stop: t_stop == T disables it, 0 guides every step.
  int t_stop = 100;
  KernelSpec kernel = LinearKernel{};
  FeatureMapSpec feature_map = IdentityMap{};
  // References per class (capped by the class size).
  int reference_batch = 256;
  // Reuse one noise draw per reference across steps instead of redrawing.
  bool frozen_ref_noise = false;
  GuidanceTarget target = GuidanceTarget::noisy_state;
  StepRule step_rule = StepRule::algorithm1;

  void validate(const NoiseSchedule& schedule) const;
  bool guides(int t) const { return gamma > 0.0 && t > t_stop; }
};

// Per-class training references and their noised, featurized versions. Noise
// for (class, t) comes from its own stream keyed by the bank seed, so the
// content is independent of access order. Only the most recent step of each
// class is cached; the sampler walks every class in lockstep from T to 1.
class ReferenceBank {
 public:
  ReferenceBank(const LabeledDataset& train, int reference_batch, std::uint64_t seed, FeatureMap map = {},
                bool frozen_noise = false);

  bool has_class(int label) const { return entries_.count(label) != 0; }
  const FeatureMap& feature_map() const { return map_; }
  std::uint64_t seed() const { return seed_; }

  // Selected clean references of a class, one per column.
  const Mat& clean(int label) const;
  // References noised to step t (t == 0 returns the clean set).
  const Mat& noised(int label, int t, const NoiseSchedule& schedule);
  // phi applied to noised(label, t), evaluated with context (t, label).
  const Mat& features(int label, int t, const NoiseSchedule& schedule);
  // phi applied to the clean references, evaluated with context (t, label).
  const Mat& clean_features(int label, int t);

 private:
  struct Entry {
    Mat clean;
    Mat frozen_eps;
    int noised_t = -1;
    Mat noised;
    int features_t = -1;
    Mat features;
    int clean_features_t = -1;
    Mat clean_features;
  };
  Entry& entry(int label);

  std::map<int, Entry> entries_;
  FeatureMap map_;
  std::uint64_t seed_;
  bool frozen_noise_;
};

// Mean kernel-induced distance from phi(x) to the reference features.
// log p(R | x) = -gamma * energy + const.
double representativeness_energy(const KernelSpec& kernel, const Vec& x_features, const Mat& ref_features,
                                 Exec exec = Exec::serial);

double representativeness_energy(const GuidanceConfig& cfg, const FeatureMap& map, const Vec& x,
                                 const VecList& refs, const FeatureContext& ctx = {});

// -grad_x of the energy, with the gradient carried back through phi. Terms with
// distance below kSingularDistance contribute zero.
Vec guidance_gradient(const KernelSpec& kernel, const FeatureMap& map, const Vec& x, const Mat& ref_features,
                      const FeatureContext& ctx = {}, Exec exec = Exec::serial);

Vec guidance_gradient(const GuidanceConfig& cfg, const FeatureMap& map, const Vec& x_t, const VecList& refs_t,
                      const FeatureContext& ctx = {});

struct StepCounters {
  long guided = 0;
  long unguided = 0;
};

// One reverse step with optional representativeness guidance. `ref_features`
// must hold the bank features for (label, t) whenever cfg.guides(t).
Vec guided_step(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                const FeatureMap& map, const Mat* ref_features, int label, const Vec& x_t, int t,
                RngStream& rng, StepCounters* counters = nullptr);

Vec guided_step(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                ReferenceBank& bank, int label, const Vec& x_t, int t, RngStream& rng,
                StepCounters* counters = nullptr);

struct SampleResult {
  VecList samples;
  std::vector<StepCounters> counters;  // one per trajectory
};

// The stream driving trajectory `index` of class `label`.
RngStream trajectory_stream(std::uint64_t seed, int label, int index);

// ipc guided trajectories from x_T ~ N(0, I), run T -> 1 in lockstep so the
// bank's per-step references are computed once per class.
SampleResult sample_distilled(const GuidanceConfig& cfg, const NoiseSchedule& schedule, const ScoreModel& score,
                              ReferenceBank& bank, int label, int ipc, std::uint64_t seed,
                              Exec exec = Exec::parallel);

// Plain ancestral sampling with the same per-trajectory streams.
VecList sample_unguided(const NoiseSchedule& schedule, const ScoreModel& score, int label, int n,
                        std::uint64_t seed, StepRule rule = StepRule::algorithm1, Exec exec = Exec::parallel);

}  // namespace dap
