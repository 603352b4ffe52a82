#include "dap/distill.hpp"
#include "dap/guidance.hpp"
#include "dap/scores.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace dap;
using testing_support::Draws;
using testing_support::rel_err;

namespace {

GmmSpec single_gaussian(const Vec& mean, const Vec& var) {
  GmmSpec s;
  s.classes.push_back({0, 1.0, {{1.0, mean, var}}});
  return s;
}

// Central difference of log p_t, the oracle for every score check.
Vec fd_score(const GmmSpec& spec, std::optional<int> label, const Vec& x, double abar, double h = 1e-4) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (gmm_log_density(spec, label, xp, abar) - gmm_log_density(spec, label, xm, abar)) / (2 * h);
  }
  return g;
}

DenoiserShape small_shape(int data_dim, std::vector<int> hidden, Activation act = Activation::tanh) {
  DenoiserShape s;
  s.data_dim = data_dim;
  s.class_labels = {0, 3, 7};
  s.time_dim = 6;
  s.hidden = std::move(hidden);
  s.activation = act;
  return s;
}

void randomize(DenoiserModel& m, Draws& r, double scale) {
  for (auto& L : m.mutable_layers()) {
    for (Eigen::Index i = 0; i < L.weight.size(); ++i) L.weight.data()[i] = r.normal(scale);
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias[i] = r.normal(scale);
  }
}

}  // namespace

TEST(Gmm, ValidateRejectsBadSpecs) {
  GmmSpec s = single_gaussian(Vec::Zero(2), Vec::Ones(2));
  EXPECT_NO_THROW(s.validate());
  auto bad = s;
  bad.classes[0].components[0].var[1] = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.classes[0].components[0].weight = 0.7;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.classes[0].components.push_back({0.0, Vec::Zero(3), Vec::Ones(3)});
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.classes.push_back(bad.classes[0]);
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_NO_THROW(rings_and_blobs().validate());
}

TEST(GmmEps, SingleGaussianClosedForm) {
  Vec mu(2), var(2);
  mu << 1.0, -2.0;
  var << 1.0, 1.0;
  const GmmSpec spec = single_gaussian(mu, var);
  const auto sched = NoiseSchedule::make_default();
  Draws r(1);
  for (int t : {1, 10, 300, 1000}) {
    const Vec x = r.vec(2, 2.0);
    const double abar = sched.alpha_bar(t);
    // Sigma = I makes the noised covariance I as well.
    const Vec score = -(x - std::sqrt(abar) * mu);
    const Vec eps = -std::sqrt(1 - abar) * score;
    EXPECT_LT((gmm_eps(spec, sched, 0, x, t) - eps).norm(), 1e-13);
    EXPECT_LT((gmm_eps(spec, sched, std::nullopt, x, t) - eps).norm(), 1e-13);
  }
}

TEST(GmmEps, SingleGaussianAnisotropic) {
  Vec mu(3), var(3);
  mu << 0.5, 0.0, -1.0;
  var << 0.25, 2.0, 4.0;
  const GmmSpec spec = single_gaussian(mu, var);
  Draws r(2);
  for (double abar : {1.0, 0.7, 0.01}) {
    const Vec x = r.vec(3);
    const Vec v = (abar * var.array() + (1 - abar)).matrix();
    const Vec score = -((x - std::sqrt(abar) * mu).array() / v.array()).matrix();
    EXPECT_LT((gmm_score(spec, 0, x, abar) - score).norm(), 1e-13);
  }
}

TEST(GmmEps, ZeroAlongSymmetryAxis) {
  GmmSpec s;
  Vec m1(2), m2(2);
  m1 << 2.0, 0.0;
  m2 << -2.0, 0.0;
  s.classes.push_back({0, 1.0, {{0.5, m1, Vec::Ones(2)}, {0.5, m2, Vec::Ones(2)}}});
  const auto sched = NoiseSchedule::make_default();
  for (double y : {-1.0, 0.0, 0.3, 2.0}) {
    Vec x(2);
    x << 0.0, y;
    EXPECT_NEAR(gmm_eps(s, sched, 0, x, 40)[0], 0.0, 1e-14);
  }
}

TEST(GmmEps, MatchesFiniteDifferencesOfLogDensity) {
  const GmmSpec spec = rings_and_blobs();
  const auto sched = NoiseSchedule::make_default();
  Draws r(3);
  for (int i = 0; i < 300; ++i) {
    const int t = r.integer(1, sched.steps());
    const double abar = sched.alpha_bar(t);
    const Vec x = r.vec(2, 3.0);
    std::optional<int> label;
    if (i % 5 != 0) label = r.integer(0, 3);
    const Vec eps = gmm_eps(spec, sched, label, x, t);
    const Vec expect = -std::sqrt(1 - abar) * fd_score(spec, label, x, abar);
    ASSERT_LT(rel_err(eps, expect), 1e-5) << "t=" << t;
  }
}

TEST(GmmEps, RejectsBadArguments) {
  const GmmSpec spec = rings_and_blobs();
  const auto sched = NoiseSchedule::make_default();
  EXPECT_THROW(gmm_eps(spec, sched, 0, Vec::Zero(2), 0), ValidationError);
  EXPECT_THROW(gmm_eps(spec, sched, 0, Vec::Zero(2), 1001), ValidationError);
  EXPECT_THROW(gmm_eps(spec, sched, 9, Vec::Zero(2), 5), ValidationError);
  EXPECT_THROW(gmm_eps(spec, sched, 0, Vec::Zero(3), 5), ValidationError);
}

TEST(GmmNll, StandardGaussianAtOrigin) {
  const GmmSpec spec = single_gaussian(Vec::Zero(3), Vec::Ones(3));
  LabeledDataset d;
  d.classes = {0};
  d.samples = {Vec::Zero(3)};
  d.labels = {0};
  EXPECT_NEAR(gmm_nll(spec, d), 1.5 * std::log(2 * std::numbers::pi), 1e-14);
}

TEST(GmmNll, ComponentMeansOfEqualMixture) {
  GmmSpec s;
  Vec a(1), b(1);
  a << -2.0;
  b << 2.0;
  s.classes.push_back({0, 1.0, {{0.5, a, Vec::Ones(1)}, {0.5, b, Vec::Ones(1)}}});
  LabeledDataset d;
  d.classes = {0};
  d.samples = {a, b};
  d.labels = {0, 0};
  const double phi0 = 1.0 / std::sqrt(2 * std::numbers::pi);
  const double p = 0.5 * phi0 + 0.5 * phi0 * std::exp(-8.0);
  EXPECT_NEAR(gmm_nll(s, d), -std::log(p), 1e-13);
}

TEST(GmmNll, TrainAndFreshTestAgree) {
  const GmmSpec spec = rings_and_blobs();
  RngStream a(11), b(12);
  const auto train = spec.sample(2500, a, Split::train);
  const auto test = spec.sample(2500, b, Split::test);
  ASSERT_EQ(train.size(), 10000u);
  EXPECT_LT(std::abs(gmm_nll(spec, train) - gmm_nll(spec, test)), 0.1);
  LabeledDataset empty;
  EXPECT_THROW(gmm_nll(spec, empty), ValidationError);
}

TEST(GmmSample, ClassMomentsMatchSpec) {
  const GmmSpec spec = rings_and_blobs();
  RngStream rng(5);
  const auto data = spec.sample(20000, rng);
  for (const auto& c : spec.classes) {
    Vec mean = Vec::Zero(2);
    for (const auto& k : c.components) mean += k.weight * k.mean;
    const auto xs = data.of_class(c.label);
    Vec m = Vec::Zero(2);
    for (const auto& x : xs) m += x;
    m /= static_cast<double>(xs.size());
    EXPECT_LT((m - mean).norm(), 0.05);
  }
}

TEST(Denoiser, ZeroWeightsGiveBias) {
  DenoiserModel m = DenoiserModel::zeros(small_shape(2, {4, 4}));
  Vec bias(2);
  bias << 0.25, -1.5;
  m.mutable_layers().back().bias = bias;
  EXPECT_EQ(m.eps(Vec::Constant(2, 3.0), 17, 3), bias);
}

TEST(Denoiser, DeterministicForward) {
  const DenoiserModel m(small_shape(3, {8, 8}), 4);
  const Vec x = Vec::LinSpaced(3, -1, 1);
  const auto a = denoiser_forward(m, x, 250, 7), b = denoiser_forward(m, x, 250, 7);
  EXPECT_EQ(a.eps_pred, b.eps_pred);
  ASSERT_EQ(a.hidden.size(), 2u);
  EXPECT_EQ(a.hidden[1], b.hidden[1]);
  EXPECT_EQ(DenoiserModel(small_shape(3, {8, 8}), 4).flatten(), m.flatten());
}

TEST(Denoiser, OneHiddenLayerMatchesHandAlgebra) {
  Draws r(6);
  DenoiserShape shape = small_shape(2, {5});
  DenoiserModel m(shape, 1);
  randomize(m, r, 0.5);
  const Vec x = r.vec(2);
  const int t = 123, label = 3;

  Vec in = Vec::Zero(shape.input_dim());
  in.head(2) = x;
  const int half = shape.time_dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    in[2 + i] = std::sin(t * freq);
    in[2 + half + i] = std::cos(t * freq);
  }
  in[2 + shape.time_dim + 1] = 1.0;  // label 3 is the second class

  const auto& L = m.layers();
  const Vec h = (L[0].weight * in + L[0].bias).array().tanh().matrix();
  const Vec out = L[1].weight * h + L[1].bias;
  const auto got = denoiser_forward(m, x, t, label);
  EXPECT_LT((got.eps_pred - out).norm(), 1e-12);
  EXPECT_LT((got.hidden[0] - h).norm(), 1e-12);
}

TEST(Denoiser, LinearNetworkGradientIsTransposedWeights) {
  Draws r(7);
  DenoiserModel m(small_shape(3, {}), 2);
  randomize(m, r, 1.0);
  const Vec x = r.vec(3), g = r.vec(3);
  const auto cache = m.forward(x, 10, 0);
  const Vec expect = (m.layers()[0].weight.transpose() * g).head(3);
  EXPECT_LT((denoiser_input_grad(m, g, cache) - expect).norm(), 1e-13);
}

TEST(Denoiser, InputGradientMatchesFiniteDifferences) {
  Draws r(8);
  int checked = 0;
  for (int cfg = 0; cfg < 120; ++cfg) {
    const int d = r.integer(1, 4);
    std::vector<int> hidden(static_cast<std::size_t>(r.integer(1, 3)));
    for (int& w : hidden) w = r.integer(2, 12);
    DenoiserModel m(small_shape(d, hidden), static_cast<std::uint64_t>(cfg));
    randomize(m, r, 0.7);
    const Vec x = r.vec(d);
    const int t = r.integer(1, 1000);
    const int label = std::vector<int>{0, 3, 7}[static_cast<std::size_t>(r.integer(0, 2))];
    const Vec w = r.vec(d);

    const auto cache = m.forward(x, t, label);
    const Vec g = m.input_grad(cache, w);
    Vec fd(d);
    const double h = 1e-5;
    for (int i = 0; i < d; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (w.dot(m.eps(xp, t, label)) - w.dot(m.eps(xm, t, label))) / (2 * h);
    }
    ASSERT_LT(rel_err(g, fd), 1e-4) << "config " << cfg;

    // Same check through a hidden layer, the path used by the hidden feature map.
    const int layer = r.integer(0, static_cast<int>(hidden.size()) - 1);
    const Vec wh = r.vec(hidden[static_cast<std::size_t>(layer)]);
    const Vec gh = m.input_grad_from_hidden(cache, layer, wh);
    for (int i = 0; i < d; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (wh.dot(m.forward(xp, t, label).hidden[static_cast<std::size_t>(layer)]) -
               wh.dot(m.forward(xm, t, label).hidden[static_cast<std::size_t>(layer)])) /
              (2 * h);
    }
    ASSERT_LT(rel_err(gh, fd), 1e-4) << "config " << cfg << " layer " << layer;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Denoiser, ZeroOutputGradientGivesZero) {
  const DenoiserModel m(small_shape(2, {6, 6}), 3);
  const auto cache = m.forward(Vec::Ones(2), 5, 0);
  EXPECT_TRUE(m.input_grad(cache, Vec::Zero(2)).isZero(0.0));
}

TEST(Denoiser, StaleOrForeignCacheRejected) {
  DenoiserModel m(small_shape(2, {6}), 3);
  const DenoiserModel other(small_shape(2, {6}), 3);
  const auto cache = m.forward(Vec::Ones(2), 5, 0);
  EXPECT_THROW(other.input_grad(cache, Vec::Ones(2)), ValidationError);
  EXPECT_THROW(m.input_grad(DenoiserCache{}, Vec::Ones(2)), ValidationError);
  m.mutable_layers();
  EXPECT_THROW(m.input_grad(cache, Vec::Ones(2)), ValidationError);
}

TEST(Denoiser, RejectsBadShapesAndInputs) {
  EXPECT_THROW(DenoiserModel(small_shape(0, {4}), 1), ValidationError);
  auto s = small_shape(2, {4});
  s.class_labels = {3, 1};
  EXPECT_THROW(DenoiserModel(s, 1), ValidationError);
  const DenoiserModel m(small_shape(2, {4}), 1);
  EXPECT_THROW(m.eps(Vec::Zero(3), 1, 0), ValidationError);
  EXPECT_THROW(m.eps(Vec::Zero(2), 1, 5), ValidationError);
}

TEST(Denoiser, CheckpointRoundTrip) {
  Draws r(9);
  DenoiserModel m(small_shape(2, {5, 3}, Activation::relu), 8);
  randomize(m, r, 1.0);
  std::stringstream ss;
  m.save(ss);
  const DenoiserModel back = DenoiserModel::load(ss);
  EXPECT_EQ(back.flatten(), m.flatten());
  EXPECT_EQ(back.shape().class_labels, m.shape().class_labels);
  EXPECT_EQ(back.shape().activation, Activation::relu);
  EXPECT_EQ(back.eps(Vec::Ones(2), 33, 7), m.eps(Vec::Ones(2), 33, 7));

  std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(DenoiserModel::load(truncated), ValidationError);
  std::stringstream wrong("dap-denoiser 2\n");
  EXPECT_THROW(DenoiserModel::load(wrong), ValidationError);
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  TrainHyper h;
  h.steps = 30;
  h.batch = 16;
  h.lr = 0.0;
  h.seed = 3;
  h.val_size = 0;
  h.shape = small_shape(2, {8});
  const DenoiserModel m = train_denoiser(rings_and_blobs(), NoiseSchedule::make_default(), h);
  auto shape = h.shape;
  shape.class_labels = {0, 1, 2, 3};
  EXPECT_EQ(m.flatten(), DenoiserModel(shape, 3).flatten());
}

TEST(Training, DivergenceReportsStep) {
  TrainHyper h;
  h.steps = 2000;
  h.batch = 8;
  h.lr = 1e6;
  h.clip_norm = 0.0;
  h.val_size = 0;
  h.shape = small_shape(2, {8});
  try {
    train_denoiser(rings_and_blobs(), NoiseSchedule::make_default(), h);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

// Trained on a finite set, the eps error on held-out data should match the
// error on the training data: the small net does not memorize.
TEST(Training, NoMemorizationOnFiniteData) {
  const auto task = make_rings_and_blobs(500, 500, 21);
  TrainHyper h;
  h.steps = 1500;
  h.batch = 128;
  h.seed = 2;
  h.val_size = 0;
  h.shape.hidden = {64, 64};
  const auto sched = NoiseSchedule::make_default();
  const DenoiserModel m = train_denoiser(task.train, sched, h);
  RngStream a(1), b(1);
  const double train_mse = denoiser_val_mse(m, task.train, sched, a, 20000);
  const double test_mse = denoiser_val_mse(m, task.test, sched, b, 20000);
  EXPECT_LT(std::abs(train_mse - test_mse), 0.02);
  EXPECT_LT(train_mse, 0.5);
}

// Full-size training on the default task: eps error close to the exact-score
// floor, and unguided samples land on the right class means.
TEST(Training, DefaultDenoiserSamplesTheTask) {
  const GmmSpec spec = rings_and_blobs();
  const auto sched = NoiseSchedule::make_default();
  TrainHyper h;
  h.seed = 1;
  TrainReport report;
  const DenoiserModel m = train_denoiser(spec, sched, h, &report);
  EXPECT_LT(report.val_mse - report.oracle_val_mse, 0.01)
      << "val " << report.val_mse << " oracle " << report.oracle_val_mse;

  const DenoiserScore score(m);
  for (const auto& c : spec.classes) {
    Vec truth = Vec::Zero(2);
    for (const auto& k : c.components) truth += k.weight * k.mean;
    const auto xs = sample_unguided(sched, score, c.label, 2000, 3);
    Vec m_hat = Vec::Zero(2);
    for (const auto& x : xs) m_hat += x;
    m_hat /= 2000.0;
    // The core blob is the wide component of each class.
    const double core_std = std::sqrt(c.components.front().var.maxCoeff());
    EXPECT_LT((m_hat - truth).norm(), 0.15 * core_std) << "class " << c.label;
  }
}
