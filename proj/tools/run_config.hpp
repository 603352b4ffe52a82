#pragma once

#include "dap/distill.hpp"
#include "dap/eval.hpp"
#include "dap/guidance.hpp"
#include "dap/scores.hpp"
#include "dap/sde.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dap::cli {

// Flat "section.key" -> value table. Every recognised key has a default;
// unknown keys are rejected so typos do not silently fall back.
class ConfigTable {
 public:
  ConfigTable();

  // INI text with [section] headers; '#' and ';' start comments.
  void merge_ini_file(const std::string& path);
  void merge_ini(const std::string& text, const std::string& origin = "<string>");
  // "section.key=value"
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool is_default(const std::string& key) const;

  // Sorted "key=value" lines of every effective setting.
  std::string canonical() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

struct RunConfig {
  // [task]
  std::string task = "rings-and-blobs";  // rings-and-blobs | digits-pca | csv
  std::size_t train_per_class = 2000;
  std::size_t test_per_class = 1000;
  std::uint64_t data_seed = 7;
  std::string digits_csv = "data/digits.csv";
  int pca_components = 16;
  std::string train_path;
  std::string test_path;

  // [score]
  std::string backend = "analytic";  // analytic | denoiser
  std::string checkpoint;

  // [denoiser]
  TrainHyper train;

  // [schedule]
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // [guidance]
  GuidanceConfig guidance;
  std::string feature_map = "identity";  // identity | projection:<n_out> | hidden:<layer>
  std::uint64_t projection_seed = 0;

  // [run]
  std::vector<int> ipc = {10};
  std::vector<std::string> methods = {"dap", "unguided", "random"};
  std::vector<double> gamma_grid;
  std::vector<int> t_stop_grid;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir;
  int threads = 0;

  // [eval]
  std::vector<ClassifierSpec> classifiers = default_classifiers();
  std::vector<std::uint64_t> eval_seeds = {1, 2, 3};
  KernelSpec rep_kernel = LinearKernel{};
  KernelSpec mmd_kernel = RbfKernel{1.0};

  std::string canonical;  // canonical text of the table this was built from

  static RunConfig from_table(const ConfigTable& table);

  NoiseSchedule schedule() const;
  // Hash of the full configuration, optionally salted with an artifact key so
  // distinct outputs of one run get distinct fingerprints.
  std::string hash(const std::string& artifact = "") const;
  nlohmann::json to_json() const;
};

// Data, score model and bound feature map for one run. Owns everything the
// sampler points into.
struct Workspace {
  RunConfig config;
  TaskData task;
  NoiseSchedule schedule;
  std::unique_ptr<DenoiserModel> denoiser;
  std::unique_ptr<ScoreModel> score;
  FeatureMap feature_map;

  explicit Workspace(const RunConfig& cfg, bool need_score = true);
};

std::vector<int> parse_int_list(const std::string& text, const std::string& what);
std::vector<double> parse_double_list(const std::string& text, const std::string& what);

}  // namespace dap::cli
