#include "dap/eval.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace dap {

using nlohmann::json;

ClassifierSpec knn_classifier(int k) { return {ClassifierKind::knn, k, 0, 0.0, 0}; }
ClassifierSpec softmax_classifier() { return {ClassifierKind::softmax, 0, 200, 0.5, 0}; }
ClassifierSpec mlp_classifier() { return {ClassifierKind::mlp, 0, 300, 0.1, 64}; }

std::vector<ClassifierSpec> default_classifiers() {
  return {knn_classifier(5), softmax_classifier(), mlp_classifier()};
}

ClassifierSpec parse_classifier(const std::string& text) {
  if (text == "knn") return knn_classifier(5);
  if (text.rfind("knn:", 0) == 0) {
    int k = 0;
    try {
      k = std::stoi(text.substr(4));
    } catch (const std::exception&) {
      throw ValidationError("bad knn k in '" + text + "'");
    }
    require(k >= 1, "knn k must be positive");
    return knn_classifier(k);
  }
  if (text == "softmax") return softmax_classifier();
  if (text == "mlp") return mlp_classifier();
  throw ValidationError("unknown classifier '" + text + "' (knn[:k], softmax, mlp)");
}

std::string to_string(const ClassifierSpec& spec) {
  switch (spec.kind) {
    case ClassifierKind::knn: return "knn:" + std::to_string(spec.k);
    case ClassifierKind::softmax: return "softmax";
    case ClassifierKind::mlp: return "mlp";
  }
  return "?";
}

namespace {

struct Standardizer {
  Vec mean;
  Vec inv_std;

  explicit Standardizer(const LabeledDataset& d) {
    const Mat x = d.as_matrix();
    mean = x.rowwise().mean();
    const Vec var = (x.colwise() - mean).array().square().rowwise().mean();
    inv_std = var.unaryExpr([](double v) { return v > 1e-16 ? 1.0 / std::sqrt(v) : 1.0; });
  }
  Vec operator()(const Vec& x) const { return ((x - mean).array() * inv_std.array()).matrix(); }
  Mat batch(const Mat& xs) const { return (xs.colwise() - mean).array().colwise() * inv_std.array(); }
};

Mat one_hot(const LabeledDataset& d) {
  Mat y = Mat::Zero(static_cast<Eigen::Index>(d.classes.size()), static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) y(d.class_index(d.labels[i]), static_cast<Eigen::Index>(i)) = 1.0;
  return y;
}

// Column-wise softmax, stabilized.
Mat softmax_cols(const Mat& logits) {
  Mat p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  return p.array().rowwise() / p.colwise().sum().array();
}

class KnnClassifier final : public TrainedClassifier {
 public:
  KnnClassifier(const LabeledDataset& train, int k) : train_(train.as_matrix()), labels_(train.labels), k_(k) {}

  int predict(const Vec& x) const override {
    const Eigen::ArrayXd d2 = (train_.colwise() - x).colwise().squaredNorm().transpose().array();
    std::vector<int> order(static_cast<std::size_t>(d2.size()));
    std::iota(order.begin(), order.end(), 0);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(k_), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
    // Majority vote; ties go to the class with the smaller summed distance.
    std::vector<std::pair<int, std::pair<int, double>>> votes;
    for (std::size_t i = 0; i < k; ++i) {
      const int label = labels_[static_cast<std::size_t>(order[i])];
      auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == label; });
      if (it == votes.end()) {
        votes.push_back({label, {1, std::sqrt(d2[order[i]])}});
      } else {
        ++it->second.first;
        it->second.second += std::sqrt(d2[order[i]]);
      }
    }
    const auto best = std::min_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
      if (a.second.first != b.second.first) return a.second.first > b.second.first;
      if (a.second.second != b.second.second) return a.second.second < b.second.second;
      return a.first < b.first;
    });
    return best->first;
  }

 private:
  Mat train_;
  std::vector<int> labels_;
  int k_;
};

class SoftmaxClassifier final : public TrainedClassifier {
 public:
  SoftmaxClassifier(const LabeledDataset& train, const ClassifierSpec& spec, std::uint64_t seed)
      : scale_(train), classes_(train.classes) {
    const Mat x = scale_.batch(train.as_matrix());
    const Mat y = one_hot(train);
    const auto c = y.rows();
    RngStream rng(seed, {0x50F7ULL});
    w_ = Mat(c, x.rows());
    for (Eigen::Index i = 0; i < w_.size(); ++i) w_.data()[i] = 0.01 * rng.normal();
    b_ = Vec::Zero(c);
    const double n = static_cast<double>(x.cols());
    for (int e = 0; e < spec.epochs; ++e) {
      const Mat p = softmax_cols((w_ * x).colwise() + b_);
      const Mat g = (p - y) / n;
      w_ -= spec.lr * g * x.transpose();
      b_ -= spec.lr * g.rowwise().sum();
    }
    if (!w_.allFinite()) throw NumericalError("softmax regression diverged");
  }

  int predict(const Vec& x) const override {
    Eigen::Index arg = 0;
    ((w_ * scale_(x)) + b_).maxCoeff(&arg);
    return classes_[static_cast<std::size_t>(arg)];
  }

 private:
  Standardizer scale_;
  std::vector<int> classes_;
  Mat w_;
  Vec b_;
};

class MlpClassifier final : public TrainedClassifier {
 public:
  MlpClassifier(const LabeledDataset& train, const ClassifierSpec& spec, std::uint64_t seed)
      : scale_(train), classes_(train.classes) {
    const Mat x = scale_.batch(train.as_matrix());
    const Mat y = one_hot(train);
    const auto c = y.rows();
    const auto h = static_cast<Eigen::Index>(spec.hidden);
    RngStream rng(seed, {0x3119ULL});
    auto init = [&](Eigen::Index rows, Eigen::Index cols) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      Mat m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
      return m;
    };
    w1_ = init(h, x.rows());
    b1_ = Vec::Zero(h);
    w2_ = init(c, h);
    b2_ = Vec::Zero(c);
    Mat vw1 = Mat::Zero(w1_.rows(), w1_.cols()), vw2 = Mat::Zero(w2_.rows(), w2_.cols());
    Vec vb1 = Vec::Zero(h), vb2 = Vec::Zero(c);
    const double n = static_cast<double>(x.cols());
    constexpr double momentum = 0.9;
    for (int e = 0; e < spec.epochs; ++e) {
      const Mat a = ((w1_ * x).colwise() + b1_).array().tanh();
      const Mat p = softmax_cols((w2_ * a).colwise() + b2_);
      const Mat g2 = (p - y) / n;
      Mat g1 = w2_.transpose() * g2;
      g1.array() *= 1.0 - a.array().square();
      vw2 = momentum * vw2 - spec.lr * g2 * a.transpose();
      vb2 = momentum * vb2 - spec.lr * g2.rowwise().sum();
      vw1 = momentum * vw1 - spec.lr * g1 * x.transpose();
      vb1 = momentum * vb1 - spec.lr * g1.rowwise().sum();
      w2_ += vw2;
      b2_ += vb2;
      w1_ += vw1;
      b1_ += vb1;
    }
    if (!w1_.allFinite() || !w2_.allFinite()) throw NumericalError("mlp classifier diverged");
  }

  int predict(const Vec& x) const override {
    const Vec a = ((w1_ * scale_(x)) + b1_).array().tanh();
    Eigen::Index arg = 0;
    ((w2_ * a) + b2_).maxCoeff(&arg);
    return classes_[static_cast<std::size_t>(arg)];
  }

 private:
  Standardizer scale_;
  std::vector<int> classes_;
  Mat w1_, w2_;
  Vec b1_, b2_;
};

}  // namespace

std::unique_ptr<TrainedClassifier> fit_classifier(const ClassifierSpec& spec, const LabeledDataset& train,
                                                  std::uint64_t seed) {
  train.validate();
  require(!train.empty(), "classifier: empty training set");
  require(unique_labels(train.labels).size() >= 2,
          "classifier: degenerate training set (fewer than two classes present)");
  switch (spec.kind) {
    case ClassifierKind::knn:
      require(spec.k >= 1, "knn k must be positive");
      return std::make_unique<KnnClassifier>(train, spec.k);
    case ClassifierKind::softmax:
      require(spec.epochs >= 0 && spec.lr >= 0.0, "softmax: bad hyperparameters");
      return std::make_unique<SoftmaxClassifier>(train, spec, seed);
    case ClassifierKind::mlp:
      require(spec.epochs >= 0 && spec.lr >= 0.0 && spec.hidden >= 1, "mlp: bad hyperparameters");
      return std::make_unique<MlpClassifier>(train, spec, seed);
  }
  throw ValidationError("unknown classifier kind");
}

double accuracy(const TrainedClassifier& clf, const LabeledDataset& test, Exec exec) {
  require(!test.empty(), "accuracy: empty test set");
  const auto n = static_cast<std::ptrdiff_t>(test.size());
  long correct = 0;
  if (exec == Exec::parallel) {
    FirstError err;
#pragma omp parallel for reduction(+ : correct) schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      err.run([&] {
        if (clf.predict(test.samples[k]) == test.labels[k]) ++correct;
      });
    }
    err.rethrow();
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (clf.predict(test.samples[k]) == test.labels[k]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

AccuracyStats train_and_test(const ClassifierSpec& spec, const LabeledDataset& train_on, const LabeledDataset& test,
                             std::span<const std::uint64_t> seeds, Exec exec) {
  require(!seeds.empty(), "train_and_test: no seeds");
  require(train_on.dim() == test.dim(), "train_and_test: dimension mismatch between train and test");
  AccuracyStats s;
  for (std::uint64_t seed : seeds) s.per_seed.push_back(accuracy(*fit_classifier(spec, train_on, seed), test, exec));
  const double n = static_cast<double>(s.per_seed.size());
  s.mean = std::accumulate(s.per_seed.begin(), s.per_seed.end(), 0.0) / n;
  const auto [lo, hi] = std::minmax_element(s.per_seed.begin(), s.per_seed.end());
  if (s.per_seed.size() > 1 && *lo != *hi) {
    double ss = 0.0;
    for (double a : s.per_seed) ss += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

AccuracyStats train_and_test(const ClassifierSpec& spec, const DistilledSet& distilled, const LabeledDataset& test,
                             std::span<const std::uint64_t> seeds, Exec exec) {
  distilled.validate();
  return train_and_test(spec, distilled.to_dataset(), test, seeds, exec);
}

// ---------------------------------------------------------------------------

std::vector<ClassRepresentativeness> representativeness_score(const DistilledSet& distilled,
                                                              const LabeledDataset& train, const KernelSpec& kernel,
                                                              const FeatureMap& map, std::size_t max_refs) {
  distilled.validate();
  require(distilled.dim == train.dim(), "representativeness: dimension mismatch");
  std::vector<ClassRepresentativeness> out;
  for (std::size_t c = 0; c < distilled.classes.size(); ++c) {
    const int label = distilled.classes[c];
    VecList refs = train.of_class(label);
    require(!refs.empty(), "representativeness: class " + std::to_string(label) + " has no training samples");
    if (refs.size() > max_refs) refs.resize(max_refs);
    const FeatureContext ctx{1, label};
    Mat rf(map.apply(refs.front(), ctx).size(), static_cast<Eigen::Index>(refs.size()));
    for (std::size_t j = 0; j < refs.size(); ++j) rf.col(static_cast<Eigen::Index>(j)) = map.apply(refs[j], ctx);
    double acc = 0.0;
    for (const Vec& s : distilled.samples[c]) acc += representativeness_energy(kernel, map.apply(s, ctx), rf, Exec::parallel);
    ClassRepresentativeness r;
    r.label = label;
    r.mean_distance = acc / static_cast<double>(distilled.samples[c].size());
    if (r.mean_distance <= 1.0 / kRepresentativenessCap) {
      r.score = kRepresentativenessCap;
      r.saturated = true;
    } else {
      r.score = 1.0 / r.mean_distance;
    }
    out.push_back(r);
  }
  return out;
}

double mmd2_unbiased(const KernelSpec& kernel, std::span<const Vec> xs, std::span<const Vec> ys, Exec exec) {
  require(xs.size() >= 2 && ys.size() >= 2, "mmd: need at least two samples on each side");
  const auto m = xs.size();
  const auto n = ys.size();
  // Row partials are summed serially so the parallel result does not depend on
  // the thread count.
  std::vector<double> rxx(m, 0.0), rxy(m, 0.0), ryy(n, 0.0);
  auto row_x = [&](std::size_t i) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) a += kernel_eval(kernel, xs[i], xs[j]);
    }
    for (std::size_t j = 0; j < n; ++j) b += kernel_eval(kernel, xs[i], ys[j]);
    rxx[i] = a;
    rxy[i] = b;
  };
  auto row_y = [&](std::size_t i) {
    double a = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) a += kernel_eval(kernel, ys[i], ys[j]);
    }
    ryy[i] = a;
  };
  if (exec == Exec::parallel) {
    FirstError err;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      err.run([&] { row_x(static_cast<std::size_t>(i)); });
    }
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      err.run([&] { row_y(static_cast<std::size_t>(i)); });
    }
    err.rethrow();
  } else {
    for (std::size_t i = 0; i < m; ++i) row_x(i);
    for (std::size_t i = 0; i < n; ++i) row_y(i);
  }
  const double sxx = std::accumulate(rxx.begin(), rxx.end(), 0.0);
  const double sxy = std::accumulate(rxy.begin(), rxy.end(), 0.0);
  const double syy = std::accumulate(ryy.begin(), ryy.end(), 0.0);
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  return sxx / (dm * (dm - 1.0)) + syy / (dn * (dn - 1.0)) - 2.0 * sxy / (dm * dn);
}

namespace {

void moments(std::span<const Vec> xs, Vec& mean, Mat& cov) {
  require(xs.size() >= 2, "covariance needs at least two samples");
  const auto d = xs.front().size();
  mean = Vec::Zero(d);
  for (const Vec& x : xs) {
    require(x.size() == d, "covariance: dimension mismatch");
    mean += x;
  }
  mean /= static_cast<double>(xs.size());
  cov = Mat::Zero(d, d);
  for (const Vec& x : xs) cov += (x - mean) * (x - mean).transpose();
  cov /= static_cast<double>(xs.size() - 1);
}

Mat psd_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(a);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance square root failed");
  const Vec s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double covariance_trace(std::span<const Vec> xs) {
  Vec mean;
  Mat cov;
  moments(xs, mean, cov);
  return cov.trace();
}

double gaussian_moment_distance(std::span<const Vec> a, std::span<const Vec> b) {
  Vec ma, mb;
  Mat ca, cb;
  moments(a, ma, ca);
  moments(b, mb, cb);
  require(ma.size() == mb.size(), "moment distance: dimension mismatch");
  return (ma - mb).squaredNorm() + (psd_sqrt(ca) - psd_sqrt(cb)).squaredNorm();
}

DiversityMetrics diversity_metrics(const DistilledSet& distilled, const LabeledDataset& train,
                                   const KernelSpec& kernel, std::size_t max_refs, Exec exec) {
  distilled.validate();
  require(distilled.ipc >= 2, "diversity: need at least two samples per class (covariance undefined)");
  require(distilled.dim == train.dim(), "diversity: dimension mismatch");
  DiversityMetrics m;
  VecList all;
  for (const VecList& cls : distilled.samples) {
    const double tr = covariance_trace(cls);
    m.cov_trace.push_back(tr);
    m.collapsed.push_back(tr < 1e-12);
    all.insert(all.end(), cls.begin(), cls.end());
  }
  VecList refs;
  const std::size_t per_class = std::max<std::size_t>(1, max_refs / std::max<std::size_t>(1, train.classes.size()));
  for (int label : train.classes) {
    VecList cls = train.of_class(label);
    if (cls.size() > per_class) cls.resize(per_class);
    refs.insert(refs.end(), cls.begin(), cls.end());
  }
  m.mmd2 = mmd2_unbiased(kernel, all, refs, exec);
  m.gauss_moment_distance = gaussian_moment_distance(all, train.samples);
  return m;
}

NllReport nll_report(const GmmSpec* spec, const LabeledDataset& train, const LabeledDataset& test) {
  NllReport r;
  if (spec == nullptr) {
    r.note = "no tractable likelihood for the learned denoiser; NLL reported only for analytic tasks";
    return r;
  }
  require(train.dim() == spec->dim() && test.dim() == spec->dim(), "nll: dimension mismatch");
  r.available = true;
  r.train = gmm_nll(*spec, train);
  r.test = gmm_nll(*spec, test);
  r.gap = r.test - r.train;
  r.note = "exact mixture NLL (nats per sample)";
  return r;
}

// ---------------------------------------------------------------------------

void EvalReport::validate() const {
  for (const auto& [name, acc] : accuracy) {
    require(acc.mean >= 0.0 && acc.mean <= 1.0, "report: accuracy out of [0,1] for " + name);
    require(acc.std >= 0.0 && std::isfinite(acc.std), "report: bad accuracy std for " + name);
  }
  for (const auto& r : representativeness) require(std::isfinite(r.score) && r.score > 0.0, "report: bad representativeness");
  for (double t : diversity.cov_trace) require(std::isfinite(t) && t >= 0.0, "report: bad covariance trace");
  require(std::isfinite(diversity.mmd2) && std::isfinite(diversity.gauss_moment_distance), "report: non-finite diversity");
}

json EvalReport::to_json() const {
  json j;
  j["source"] = source;
  j["method"] = method;
  j["ipc"] = ipc;
  for (const auto& [name, acc] : accuracy) {
    j["accuracy"][name] = {{"mean", acc.mean}, {"std", acc.std}, {"per_seed", acc.per_seed}};
  }
  for (const auto& r : representativeness) {
    j["representativeness"].push_back(
        {{"class", r.label}, {"score", r.score}, {"mean_distance", r.mean_distance}, {"saturated", r.saturated}});
  }
  j["diversity"] = {{"cov_trace", diversity.cov_trace},
                    {"collapsed", diversity.collapsed},
                    {"mmd2", diversity.mmd2},
                    {"gauss_moment_distance", diversity.gauss_moment_distance}};
  if (nll) {
    j["nll"] = {{"available", nll->available}, {"train", nll->train}, {"test", nll->test}, {"gap", nll->gap},
                {"note", nll->note}};
  }
  return j;
}

EvalReport evaluate(const DistilledSet& distilled, const LabeledDataset& train, const LabeledDataset& test,
                    std::span<const ClassifierSpec> classifiers, std::span<const std::uint64_t> seeds,
                    const KernelSpec& kernel) {
  EvalReport rep;
  rep.method = distilled.method;
  rep.ipc = distilled.ipc;
  for (const ClassifierSpec& c : classifiers) rep.accuracy.emplace_back(to_string(c), train_and_test(c, distilled, test, seeds));
  rep.representativeness = representativeness_score(distilled, train, kernel);
  if (distilled.ipc >= 2) rep.diversity = diversity_metrics(distilled, train);
  rep.validate();
  return rep;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "source,method,ipc,metric,key,value,std\n";
  for (const EvalReport& r : reports) {
    const std::string head = r.source + "," + r.method + "," + std::to_string(r.ipc) + ",";
    for (const auto& [name, acc] : r.accuracy) out << head << "accuracy," << name << "," << num(acc.mean) << "," << num(acc.std) << "\n";
    for (const auto& c : r.representativeness) {
      out << head << "representativeness," << c.label << "," << num(c.score) << ",\n";
    }
    for (std::size_t i = 0; i < r.diversity.cov_trace.size(); ++i) {
      out << head << "cov_trace," << r.representativeness.at(i).label << "," << num(r.diversity.cov_trace[i]) << ",\n";
    }
    out << head << "mmd2,," << num(r.diversity.mmd2) << ",\n";
    out << head << "gauss_moment_distance,," << num(r.diversity.gauss_moment_distance) << ",\n";
    if (r.nll && r.nll->available) {
      out << head << "nll,train," << num(r.nll->train) << ",\n";
      out << head << "nll,test," << num(r.nll->test) << ",\n";
      out << head << "nll,gap," << num(r.nll->gap) << ",\n";
    }
  }
}

void write_accuracy_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "source,method,ipc,classifier,mean,std,per_seed\n";
  for (const EvalReport& r : reports) {
    for (const auto& [name, acc] : r.accuracy) {
      out << r.source << "," << r.method << "," << r.ipc << "," << name << "," << num(acc.mean) << "," << num(acc.std) << ",";
      for (std::size_t i = 0; i < acc.per_seed.size(); ++i) out << (i ? ";" : "") << num(acc.per_seed[i]);
      out << "\n";
    }
  }
}

double paired_t_statistic(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "paired t: need at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) return mean > 0.0 ? std::numeric_limits<double>::infinity()
                                   : (mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
  return mean / (sd / std::sqrt(n));
}

double t_critical_95(int df) {
  require(df >= 1, "t critical value needs df >= 1");
  boost::math::students_t dist(df);
  return boost::math::quantile(boost::math::complement(dist, 0.05));
}

}  // namespace dap
