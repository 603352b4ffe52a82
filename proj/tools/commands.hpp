#pragma once

#include "run_config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dap::cli {

// Output paths produced by a command, in the order they were written.
using Outputs = std::vector<std::string>;

Outputs cmd_distill(const RunConfig& cfg, std::ostream& log);

struct EvalOptions {
  std::vector<std::string> files;
  std::string test_path;         // empty: the task's own test split
  bool full_train_control = false;
};
Outputs cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log);

struct SweepPoint {
  std::string method;  // dap, unguided or random
  double gamma = 0.0;
  int t_stop = 0;
  std::uint64_t seed = 0;
  std::vector<double> accuracy;        // per classifier, in cfg.classifiers order
  std::vector<double> representativeness;  // per class
  std::vector<double> cov_trace;       // per class
  double mmd2 = 0.0;
  long guided_steps = 0;               // per trajectory
  double seconds = 0.0;                // wall-clock of the distillation call

  double mean_accuracy() const;
  double mean_representativeness() const;
  double mean_cov_trace() const;
};

// One point per (gamma, seed), plus one "random" point per seed.
std::vector<SweepPoint> run_gamma_sweep(const Workspace& ws, std::ostream& log);
// One point per (t_stop, seed) at cfg.guidance.gamma.
std::vector<SweepPoint> run_t_stop_sweep(const Workspace& ws, std::ostream& log);

struct GammaSummary {
  std::vector<double> gammas;
  std::vector<std::vector<double>> accuracy;  // [gamma][classifier], mean over seeds
  std::vector<std::vector<double>> accuracy_std;
  std::vector<double> representativeness;     // mean over classes and seeds
  std::vector<double> cov_trace;
  std::vector<double> random_accuracy;        // per classifier
  // Smallest gamma whose mean covariance trace is below half of gamma = 0;
  // negative when no grid point collapses.
  double collapse_gamma = -1.0;
  double best_gamma = 0.0;  // by accuracy averaged over classifiers
};
GammaSummary summarize_gamma(const RunConfig& cfg, const std::vector<SweepPoint>& points);

enum class Sweep { gamma, t_stop, both };
Sweep parse_sweep(const std::string& s);
Outputs cmd_ablate(const RunConfig& cfg, Sweep sweep, std::ostream& log);

Outputs cmd_scatter(const RunConfig& cfg, const std::string& set_path, const std::string& out_path, std::ostream& log);

Outputs cmd_train_denoiser(const RunConfig& cfg, const std::string& out_path, std::ostream& log);

// Quick property checks; returns the number of failures.
int cmd_selftest(std::ostream& log);

// Creates the directory (and parents) if needed.
void ensure_dir(const std::string& dir);
std::string join_path(const std::string& dir, const std::string& name);

}  // namespace dap::cli
