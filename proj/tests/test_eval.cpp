#include "dap/eval.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace dap;
using testing_support::Draws;

namespace {

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

DistilledSet as_set(const LabeledDataset& d, int per_class) {
  DistilledSet s;
  s.method = "test";
  s.classes = d.classes;
  s.ipc = per_class;
  s.dim = d.dim();
  for (int label : d.classes) {
    VecList xs = d.of_class(label);
    xs.resize(static_cast<std::size_t>(per_class));
    s.samples.push_back(xs);
  }
  return s;
}

LabeledDataset two_blobs(std::size_t n, double sep, unsigned seed) {
  Draws r(seed);
  LabeledDataset d;
  d.classes = {3, 8};
  for (std::size_t i = 0; i < n; ++i) {
    for (int c : {3, 8}) {
      Vec x = r.vec(2, 0.3);
      x[0] += c == 3 ? -sep : sep;
      d.samples.push_back(x);
      d.labels.push_back(c);
    }
  }
  return d;
}

double naive_mmd2(const KernelSpec& k, const VecList& x, const VecList& y) {
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (i != j) sxx += kernel_eval(k, x[i], x[j]);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (i != j) syy += kernel_eval(k, y[i], y[j]);
  for (const auto& a : x)
    for (const auto& b : y) sxy += kernel_eval(k, a, b);
  return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2 * sxy / (m * n);
}

}  // namespace

TEST(Classifiers, OneNearestNeighbourMatchesBruteForce) {
  const auto task = make_rings_and_blobs(100, 60, 4);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t j = 0; j < task.train.size(); ++j) {
      const double d = (task.test.samples[i] - task.train.samples[j]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (task.train.labels[best] == task.test.labels[i]) ++correct;
  }
  const double oracle = static_cast<double>(correct) / static_cast<double>(task.test.size());
  const auto stats = train_and_test(knn_classifier(1), task.train, task.test, kSeeds);
  EXPECT_DOUBLE_EQ(stats.mean, oracle);
  EXPECT_EQ(stats.std, 0.0);
}

TEST(Classifiers, KnnTieBreaks) {
  LabeledDataset train;
  train.classes = {0, 1};
  Vec a(1), b(1), q(1);
  a << -1.0;
  b << 2.0;
  train.samples = {a, b};
  train.labels = {0, 1};
  const auto clf = fit_classifier(knn_classifier(2), train, 1);
  q << 0.0;  // one vote each, class 0 is closer
  EXPECT_EQ(clf->predict(q), 0);
  q << 1.0;
  EXPECT_EQ(clf->predict(q), 1);
  q << 0.5;  // equal votes and equal summed distance: smaller label
  EXPECT_EQ(clf->predict(q), 0);
}

TEST(Classifiers, SeparableBlobsAreLearnedByEveryFamily) {
  const auto train = two_blobs(20, 3.0, 1), test = two_blobs(200, 3.0, 2);
  for (const auto& spec : default_classifiers()) {
    const auto s = train_and_test(spec, train, test, kSeeds);
    EXPECT_EQ(s.mean, 1.0) << to_string(spec);
    EXPECT_EQ(s.per_seed.size(), 3u);
  }
}

TEST(Classifiers, SingleClassTrainingSetRejected) {
  LabeledDataset one;
  one.classes = {0, 1};
  one.samples = {Vec::Zero(2), Vec::Ones(2)};
  one.labels = {0, 0};
  for (const auto& spec : default_classifiers()) EXPECT_THROW(fit_classifier(spec, one, 1), ValidationError);
}

TEST(Classifiers, DeterministicPerSeedWithSampleStd) {
  const auto task = make_rings_and_blobs(10, 200, 8);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  for (const auto& spec : default_classifiers()) {
    const auto a = train_and_test(spec, task.train, task.test, seeds);
    const auto b = train_and_test(spec, task.train, task.test, seeds, Exec::serial);
    EXPECT_EQ(a.per_seed, b.per_seed);
    double mean = 0.0, ss = 0.0;
    for (double v : a.per_seed) mean += v / 4.0;
    for (double v : a.per_seed) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(a.mean, mean, 1e-15);
    EXPECT_NEAR(a.std, std::sqrt(ss / 3.0), 1e-15);
    for (double v : a.per_seed) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Classifiers, ParseNames) {
  EXPECT_EQ(parse_classifier("knn").k, 5);
  EXPECT_EQ(parse_classifier("knn:3").k, 3);
  EXPECT_EQ(parse_classifier("mlp").hidden, 64);
  EXPECT_EQ(to_string(parse_classifier("softmax")), "softmax");
  EXPECT_THROW(parse_classifier("svm"), ValidationError);
  EXPECT_THROW(parse_classifier("knn:0"), ValidationError);
}

TEST(Representativeness, MatchesMeanDistanceOracle) {
  const auto task = make_rings_and_blobs(50, 10, 5);
  const auto set = as_set(task.test, 10);
  const auto reps = representativeness_score(set, task.train, LinearKernel{});
  for (std::size_t c = 0; c < set.classes.size(); ++c) {
    const auto refs = task.train.of_class(set.classes[c]);
    double acc = 0.0;
    for (const auto& s : set.samples[c])
      for (const auto& r : refs) acc += (s - r).norm();
    acc /= static_cast<double>(set.samples[c].size() * refs.size());
    EXPECT_NEAR(reps[c].mean_distance, acc, 1e-12);
    EXPECT_NEAR(reps[c].score, 1.0 / acc, 1e-10);
    EXPECT_GT(reps[c].score, 0.0);
    EXPECT_FALSE(reps[c].saturated);
  }
}

TEST(Representativeness, PermutationInvariant) {
  const auto task = make_rings_and_blobs(50, 10, 5);
  auto set = as_set(task.test, 10);
  const auto before = representativeness_score(set, task.train, RbfKernel{1.0});
  for (auto& cls : set.samples) std::reverse(cls.begin(), cls.end());
  const auto after = representativeness_score(set, task.train, RbfKernel{1.0});
  for (std::size_t c = 0; c < before.size(); ++c) EXPECT_NEAR(before[c].score, after[c].score, 1e-12);
}

TEST(Representativeness, ExactReferencesSaturateAtCap) {
  LabeledDataset train;
  train.classes = {0, 1};
  train.samples = {Vec::Zero(2), Vec::Ones(2)};
  train.labels = {0, 1};
  DistilledSet s;
  s.classes = {0, 1};
  s.ipc = 1;
  s.dim = 2;
  s.samples = {{Vec::Zero(2)}, {Vec::Ones(2)}};
  const auto reps = representativeness_score(s, train, LinearKernel{});
  for (const auto& r : reps) {
    EXPECT_TRUE(r.saturated);
    EXPECT_EQ(r.score, kRepresentativenessCap);
  }
}

TEST(Mmd, MatchesNaiveDoubleLoop) {
  Draws r(9);
  for (const KernelSpec& k : {KernelSpec{LinearKernel{}}, KernelSpec{RbfKernel{0.5}}, KernelSpec{RbfKernel{1.0}},
                              KernelSpec{RbfKernel{2.0}}}) {
    for (int trial = 0; trial < 10; ++trial) {
      VecList x, y;
      const int d = r.integer(1, 4);
      for (int i = 0, m = r.integer(2, 64); i < m; ++i) x.push_back(r.vec(d));
      for (int i = 0, n = r.integer(2, 64); i < n; ++i) y.push_back(r.vec(d) + Vec::Constant(d, 0.3));
      const double expect = naive_mmd2(k, x, y);
      EXPECT_NEAR(mmd2_unbiased(k, x, y, Exec::serial), expect, 1e-10);
      EXPECT_NEAR(mmd2_unbiased(k, x, y, Exec::parallel), expect, 1e-10);
    }
  }
}

TEST(Mmd, SameDistributionNearZeroAndRejectsTinySets) {
  const auto task = make_rings_and_blobs(300, 300, 2);
  const double same = mmd2_unbiased(RbfKernel{1.0}, task.train.samples, task.test.samples);
  VecList shifted = task.test.samples;
  for (auto& x : shifted) x[0] += 1.0;
  const double diff = mmd2_unbiased(RbfKernel{1.0}, task.train.samples, shifted);
  EXPECT_LT(std::abs(same), 0.01);
  EXPECT_GT(diff, 10 * std::abs(same));
  EXPECT_THROW(mmd2_unbiased(RbfKernel{1.0}, VecList{Vec::Zero(2)}, task.test.samples), ValidationError);
}

TEST(Moments, OneDimensionalClosedForm) {
  VecList a, b;
  for (double v : {1.0, 2.0, 4.0}) a.push_back(Vec::Constant(1, v));
  for (double v : {0.0, 0.0, 3.0, 5.0}) b.push_back(Vec::Constant(1, v));
  auto stats = [](const VecList& xs) {
    double m = 0, s = 0;
    for (const auto& x : xs) m += x[0] / static_cast<double>(xs.size());
    for (const auto& x : xs) s += (x[0] - m) * (x[0] - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(xs.size() - 1))};
  };
  const auto [ma, sa] = stats(a);
  const auto [mb, sb] = stats(b);
  EXPECT_NEAR(gaussian_moment_distance(a, b), (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb), 1e-12);
  EXPECT_NEAR(covariance_trace(a), sa * sa, 1e-12);
}

TEST(Diversity, IdenticalSetsAndCollapse) {
  const auto task = make_rings_and_blobs(40, 10, 6);
  EXPECT_NEAR(gaussian_moment_distance(task.train.samples, task.train.samples), 0.0, 1e-12);

  DistilledSet collapsed;
  collapsed.classes = {0, 1, 2, 3};
  collapsed.ipc = 5;
  collapsed.dim = 2;
  for (int c = 0; c < 4; ++c) collapsed.samples.push_back(VecList(5, Vec::Constant(2, c)));
  const auto m = diversity_metrics(collapsed, task.train);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(m.cov_trace[c], 0.0);
    EXPECT_TRUE(m.collapsed[c]);
  }
  const auto spread = diversity_metrics(as_set(task.train, 40), task.train);
  for (bool flag : spread.collapsed) EXPECT_FALSE(flag);
  EXPECT_NEAR(spread.gauss_moment_distance, 0.0, 1e-12);
  EXPECT_LT(std::abs(spread.mmd2), 0.02);

  collapsed.ipc = 1;
  for (auto& cls : collapsed.samples) cls.resize(1);
  EXPECT_THROW(diversity_metrics(collapsed, task.train), ValidationError);
}

TEST(Nll, ReportGapBehaviour) {
  const GmmSpec spec = rings_and_blobs();
  RngStream a(1), b(2);
  const auto train = spec.sample(2500, a), test = spec.sample(2500, b, Split::test);
  const auto same = nll_report(&spec, train, train);
  EXPECT_TRUE(same.available);
  EXPECT_EQ(same.gap, 0.0);
  const auto fresh = nll_report(&spec, train, test);
  EXPECT_LT(std::abs(fresh.gap), 0.1);
  auto shifted = test;
  for (auto& x : shifted.samples) x += Vec::Constant(2, 1.0);
  const auto moved = nll_report(&spec, train, shifted);
  EXPECT_GT(moved.gap, std::abs(fresh.gap) + 0.1);
  const auto none = nll_report(nullptr, train, test);
  EXPECT_FALSE(none.available);
  EXPECT_FALSE(none.note.empty());
}

TEST(Stats, PairedTAndCriticalValues) {
  const std::vector<double> a{0.80, 0.82, 0.79, 0.85, 0.81}, b{0.78, 0.80, 0.79, 0.80, 0.80};
  double mean = 0, ss = 0;
  for (int i = 0; i < 5; ++i) mean += (a[i] - b[i]) / 5;
  for (int i = 0; i < 5; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  EXPECT_NEAR(paired_t_statistic(a, b), mean / std::sqrt(ss / 4 / 5), 1e-12);
  EXPECT_THROW(paired_t_statistic(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  // Published one-sided 95% quantiles.
  EXPECT_NEAR(t_critical_95(1), 6.313752, 1e-6);
  EXPECT_NEAR(t_critical_95(4), 2.131847, 1e-6);
  EXPECT_NEAR(t_critical_95(29), 1.699127, 1e-6);
}

TEST(Report, CsvRowCountsAndJson) {
  const auto task = make_rings_and_blobs(30, 30, 3);
  const auto classifiers = default_classifiers();
  std::vector<EvalReport> reports;
  for (int k : {2, 5}) {
    auto r = evaluate(as_set(task.train, k), task.train, task.test, classifiers, kSeeds);
    r.source = "set" + std::to_string(k);
    r.nll = nll_report(&*task.spec, task.train, task.test);
    reports.push_back(r);
  }
  std::ostringstream acc, met;
  write_accuracy_csv(acc, reports);
  write_metrics_csv(met, reports);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(acc.str()), 1 + 2 * 3);
  // per report: 3 accuracy + 4 representativeness + 4 cov_trace + mmd2 + moment + 3 nll
  EXPECT_EQ(lines(met.str()), 1 + 2 * (3 + 4 + 4 + 2 + 3));
  const auto j = reports[0].to_json();
  EXPECT_TRUE(j.contains("accuracy"));
  EXPECT_EQ(j["representativeness"].size(), 4u);
  EXPECT_TRUE(j["nll"]["available"].get<bool>());
}
