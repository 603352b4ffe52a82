#pragma once

#include "dap/common.hpp"
#include "dap/dataset.hpp"
#include "dap/sde.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace dap {

// ---------------------------------------------------------------------------
// Analytic Gaussian-mixture data distribution

struct GmmComponent {
  double weight = 1.0;
  Vec mean;
  Vec var;  // diagonal covariance
};

struct GmmClass {
  int label = 0;
  double prior = 1.0;  // relative class frequency, normalized over classes
  std::vector<GmmComponent> components;
};

struct GmmSpec {
  std::vector<GmmClass> classes;

  Eigen::Index dim() const;
  void validate() const;
  const GmmClass& by_label(int label) const;
  std::vector<int> labels() const;
  double class_prior(int label) const;

  // n_per_class i.i.d. draws per class, labels attached.
  LabeledDataset sample(std::size_t n_per_class, RngStream& rng, Split split = Split::train) const;
  Vec sample_class(int label, RngStream& rng) const;
};

// log p_t(x) of the forward marginal at noise level abar (abar == 1: clean data).
// `label` selects a class; nullopt gives the class-prior-weighted marginal.
double gmm_log_density(const GmmSpec& spec, std::optional<int> label, const Vec& x, double abar = 1.0);

// grad_x log p_t(x).
Vec gmm_score(const GmmSpec& spec, std::optional<int> label, const Vec& x, double abar = 1.0);

// eps-parameterized exact score: -sqrt(1 - abar_t) * grad log p_t(x_t).
Vec gmm_eps(const GmmSpec& spec, const NoiseSchedule& schedule, std::optional<int> label, const Vec& x_t,
            int t);

// Mean of -log p(x) over the dataset under the clean marginal mixture (nats).
double gmm_nll(const GmmSpec& spec, const LabeledDataset& data);

// ---------------------------------------------------------------------------
// Small MLP denoiser eps_theta(x_t, t, class)

enum class Activation { tanh, relu };

const char* to_string(Activation a);
Activation parse_activation(const std::string& s);

struct DenoiserShape {
  int data_dim = 2;
  std::vector<int> class_labels = {0, 1, 2, 3};
  int time_dim = 32;
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::tanh;

  int input_dim() const { return data_dim + time_dim + static_cast<int>(class_labels.size()); }
};

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;
};

class DenoiserModel;

// Everything a backward pass needs from one forward evaluation.
struct DenoiserCache {
  Vec input;
  std::vector<Vec> hidden;  // post-activation of each hidden layer
  Vec output;
  const DenoiserModel* model = nullptr;
  std::uint64_t version = 0;
};

class DenoiserModel {
 public:
  DenoiserModel() = default;
  // Glorot-uniform weights, zero biases.
  DenoiserModel(DenoiserShape shape, std::uint64_t seed);
  static DenoiserModel zeros(DenoiserShape shape);

  const DenoiserShape& shape() const { return shape_; }
  int hidden_layers() const { return static_cast<int>(shape_.hidden.size()); }
  int class_index(int label) const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  // Mutable access invalidates outstanding forward caches.
  std::vector<DenseLayer>& mutable_layers();
  std::uint64_t version() const { return version_; }

  // Network input: data, sinusoidal time embedding, one-hot class.
  Vec embed(const Vec& x, int t, int label) const;
  Mat embed_batch(const Mat& xs, int t, int label) const;

  DenoiserCache forward(const Vec& x, int t, int label) const;
  Vec eps(const Vec& x, int t, int label) const { return forward(x, t, label).output; }

  // Activations of hidden layer `layer` for every column of xs.
  Mat hidden_batch(const Mat& xs, int t, int label, int layer) const;

  // d(scalar)/dx given d(scalar)/d(output).
  Vec input_grad(const DenoiserCache& cache, const Vec& grad_output) const;
  // d(scalar)/dx given d(scalar)/d(hidden[layer]).
  Vec input_grad_from_hidden(const DenoiserCache& cache, int layer, const Vec& grad_hidden) const;

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static DenoiserModel load(std::istream& in);
  static DenoiserModel load(const std::string& path);

 private:
  friend class DenoiserTrainer;

  void check_cache(const DenoiserCache& cache) const;
  Vec backprop(const DenoiserCache& cache, int from_layer, Vec grad) const;

  DenoiserShape shape_;
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

Vec sinusoidal_embedding(int t, int dim);

struct DenoiserOutput {
  Vec eps_pred;
  std::vector<Vec> hidden;
};

DenoiserOutput denoiser_forward(const DenoiserModel& model, const Vec& x_t, int t, int label);
Vec denoiser_input_grad(const DenoiserModel& model, const Vec& loss_grad_at_output,
                        const DenoiserCache& cache);

struct TrainHyper {
  int steps = 10000;
  int batch = 512;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_final_fraction = 0.01;  // cosine decay floor
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int val_size = 4096;
  DenoiserShape shape;
};

struct TrainReport {
  std::vector<double> loss_history;  // mean training loss per 100 steps
  double val_mse = 0.0;
  double oracle_val_mse = -1.0;  // exact-score MSE on the same draws, when known
  int steps = 0;
};

// eps-matching with SGD + momentum. Draws fresh clean samples from `spec`
// for every minibatch.
DenoiserModel train_denoiser(const GmmSpec& spec, const NoiseSchedule& schedule, const TrainHyper& hyper,
                             TrainReport* report = nullptr);

// Same objective on a finite dataset (minibatches drawn with replacement).
DenoiserModel train_denoiser(const LabeledDataset& data, const NoiseSchedule& schedule,
                             const TrainHyper& hyper, TrainReport* report = nullptr);

// Mean squared eps error of `model` over `n` fresh forward-noise draws of
// `data` at uniformly random steps.
double denoiser_val_mse(const DenoiserModel& model, const LabeledDataset& data,
                        const NoiseSchedule& schedule, RngStream& rng, std::size_t n);

// ---------------------------------------------------------------------------
// Common interface used by the sampler

class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual Vec eps(const Vec& x_t, int t, int label) const = 0;
  virtual std::string id() const = 0;
  virtual Eigen::Index dim() const = 0;
  // Non-null when hidden-layer features are available.
  virtual const DenoiserModel* denoiser() const { return nullptr; }
};

class AnalyticScore final : public ScoreModel {
 public:
  AnalyticScore(GmmSpec spec, NoiseSchedule schedule);
  Vec eps(const Vec& x_t, int t, int label) const override;
  std::string id() const override { return "analytic-gmm"; }
  Eigen::Index dim() const override { return spec_.dim(); }
  const GmmSpec& spec() const { return spec_; }

 private:
  GmmSpec spec_;
  NoiseSchedule schedule_;
};

class DenoiserScore final : public ScoreModel {
 public:
  explicit DenoiserScore(const DenoiserModel& model) : model_(&model) {}
  Vec eps(const Vec& x_t, int t, int label) const override { return model_->eps(x_t, t, label); }
  std::string id() const override { return "denoiser-mlp"; }
  Eigen::Index dim() const override { return model_->shape().data_dim; }
  const DenoiserModel* denoiser() const override { return model_; }

 private:
  const DenoiserModel* model_;
};

}  // namespace dap
