#pragma once

#include "dap/common.hpp"
#include "dap/dataset.hpp"
#include "dap/distill.hpp"
#include "dap/kernels.hpp"
#include "dap/scores.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <string>

namespace dap {

enum class ClassifierKind { knn, softmax, mlp };

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::knn;
  int k = 5;          // knn
  int epochs = 200;   // softmax / mlp
  double lr = 0.5;    // softmax / mlp
  int hidden = 64;    // mlp
};

ClassifierSpec knn_classifier(int k = 5);
ClassifierSpec softmax_classifier();
ClassifierSpec mlp_classifier();
std::vector<ClassifierSpec> default_classifiers();

// "knn", "knn:3", "softmax", "mlp"
ClassifierSpec parse_classifier(const std::string& text);
std::string to_string(const ClassifierSpec& spec);

// A classifier trained from scratch on one dataset.
class TrainedClassifier {
 public:
  virtual ~TrainedClassifier() = default;
  virtual int predict(const Vec& x) const = 0;
};

std::unique_ptr<TrainedClassifier> fit_classifier(const ClassifierSpec& spec, const LabeledDataset& train,
                                                  std::uint64_t seed);

double accuracy(const TrainedClassifier& clf, const LabeledDataset& test, Exec exec = Exec::parallel);

struct AccuracyStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds (0 for one seed)
  std::vector<double> per_seed;
};

// Hard-label protocol: train on the distilled samples only, test on `test`.
AccuracyStats train_and_test(const ClassifierSpec& spec, const LabeledDataset& train_on, const LabeledDataset& test,
                             std::span<const std::uint64_t> seeds, Exec exec = Exec::parallel);
AccuracyStats train_and_test(const ClassifierSpec& spec, const DistilledSet& distilled, const LabeledDataset& test,
                             std::span<const std::uint64_t> seeds, Exec exec = Exec::parallel);

inline constexpr double kRepresentativenessCap = 1e6;

struct ClassRepresentativeness {
  int label = 0;
  double mean_distance = 0.0;
  double score = 0.0;  // 1 / mean_distance, capped
  bool saturated = false;
};

// Per class: 1 / mean distance d(phi(s), phi(r)) over distilled samples s and
// the class's training samples r (all of them, up to `max_refs`).
std::vector<ClassRepresentativeness> representativeness_score(const DistilledSet& distilled,
                                                              const LabeledDataset& train, const KernelSpec& kernel,
                                                              const FeatureMap& map = {},
                                                              std::size_t max_refs = 2000);

// Unbiased MMD^2 between samples xs and ys.
double mmd2_unbiased(const KernelSpec& kernel, std::span<const Vec> xs, std::span<const Vec> ys,
                     Exec exec = Exec::parallel);

// ||mu_a - mu_b||^2 + ||Sigma_a^(1/2) - Sigma_b^(1/2)||_F^2.
double gaussian_moment_distance(std::span<const Vec> a, std::span<const Vec> b);

// Trace of the sample covariance (n - 1 denominator).
double covariance_trace(std::span<const Vec> xs);

struct DiversityMetrics {
  std::vector<double> cov_trace;  // per class, in distilled.classes order
  std::vector<bool> collapsed;    // cov_trace below 1e-12
  double mmd2 = 0.0;
  double gauss_moment_distance = 0.0;
};

DiversityMetrics diversity_metrics(const DistilledSet& distilled, const LabeledDataset& train,
                                   const KernelSpec& kernel = RbfKernel{1.0}, std::size_t max_refs = 2000,
                                   Exec exec = Exec::parallel);

struct NllReport {
  bool available = false;
  double train = 0.0;
  double test = 0.0;
  double gap = 0.0;  // test - train
  std::string note;
};

// Exact mixture NLLs when an analytic spec is given; otherwise unavailable.
NllReport nll_report(const GmmSpec* spec, const LabeledDataset& train, const LabeledDataset& test);

struct EvalReport {
  std::string source;  // file name or run label
  std::string method;
  int ipc = 0;
  std::vector<std::pair<std::string, AccuracyStats>> accuracy;  // per classifier
  std::vector<ClassRepresentativeness> representativeness;
  DiversityMetrics diversity;
  std::optional<NllReport> nll;

  void validate() const;
  nlohmann::json to_json() const;
};

EvalReport evaluate(const DistilledSet& distilled, const LabeledDataset& train, const LabeledDataset& test,
                    std::span<const ClassifierSpec> classifiers, std::span<const std::uint64_t> seeds,
                    const KernelSpec& kernel = LinearKernel{});

// One row per (source, metric); columns source,method,ipc,metric,key,value,std.
void write_metrics_csv(std::ostream& out, std::span<const EvalReport> reports);
// One row per (source, classifier); columns source,method,ipc,classifier,mean,std,per_seed.
void write_accuracy_csv(std::ostream& out, std::span<const EvalReport> reports);

// Paired t statistic of a - b (needs >= 2 pairs).
double paired_t_statistic(std::span<const double> a, std::span<const double> b);
// One-sided 95% critical value of Student t with df degrees of freedom.
double t_critical_95(int df);

}  // namespace dap
