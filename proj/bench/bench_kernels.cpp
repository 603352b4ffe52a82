// Serial reference vs OpenMP paths of the hot kernels.
// Arg(0) runs the serial implementation, Arg(1) the parallel one.
#include "dap/distill.hpp"
#include "dap/eval.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

using namespace dap;

namespace {

Exec mode(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

VecList gaussian_batch(int n, int d, std::uint64_t seed) {
  RngStream rng(seed);
  VecList out;
  for (int i = 0; i < n; ++i) out.push_back(rng.normal_vec(d));
  return out;
}

void label(benchmark::State& state) {
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel x" + std::to_string(omp_get_max_threads()));
}

void BM_Gram(benchmark::State& state) {
  const VecList batch = gaussian_batch(512, 16, 1);
  for (auto _ : state) benchmark::DoNotOptimize(gram_matrix(RbfKernel{1.0}, batch, mode(state)));
  label(state);
}
BENCHMARK(BM_Gram)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_EnergyAndGradient(benchmark::State& state) {
  const VecList refs = gaussian_batch(4096, 16, 2);
  Mat feats(16, 4096);
  for (int j = 0; j < 4096; ++j) feats.col(j) = refs[j];
  const Vec x = gaussian_batch(1, 16, 3)[0];
  const FeatureMap id;
  for (auto _ : state) {
    benchmark::DoNotOptimize(representativeness_energy(RbfKernel{1.0}, x, feats, mode(state)));
    benchmark::DoNotOptimize(guidance_gradient(RbfKernel{1.0}, id, x, feats, {}, mode(state)));
  }
  label(state);
}
BENCHMARK(BM_EnergyAndGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_Mmd(benchmark::State& state) {
  const VecList a = gaussian_batch(800, 8, 4), b = gaussian_batch(800, 8, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mmd2_unbiased(RbfKernel{1.0}, a, b, mode(state)));
  label(state);
}
BENCHMARK(BM_Mmd)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_KnnAccuracy(benchmark::State& state) {
  const TaskData task = make_rings_and_blobs(250, 500, 7);
  const auto clf = fit_classifier(knn_classifier(5), task.train, 1);
  for (auto _ : state) benchmark::DoNotOptimize(accuracy(*clf, task.test, mode(state)));
  label(state);
}
BENCHMARK(BM_KnnAccuracy)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DistillIpc10(benchmark::State& state) {
  const TaskData task = make_rings_and_blobs(2000, 10, 7);
  const NoiseSchedule schedule = NoiseSchedule::make_default();
  const AnalyticScore score(*task.spec, schedule);
  GuidanceConfig cfg;
  cfg.t_stop = schedule.steps() / 10;
  for (auto _ : state) benchmark::DoNotOptimize(distill_dap(task.train, cfg, schedule, score, 10, 1, mode(state)));
  label(state);
}
BENCHMARK(BM_DistillIpc10)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
