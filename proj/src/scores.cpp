#include "dap/scores.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dap {

// ---------------------------------------------------------------------------
// Gaussian mixture

Eigen::Index GmmSpec::dim() const {
  if (classes.empty() || classes.front().components.empty()) return 0;
  return classes.front().components.front().mean.size();
}

void GmmSpec::validate() const {
  require(!classes.empty(), "gmm: no classes");
  const Eigen::Index d = dim();
  require(d > 0, "gmm: zero-dimensional components");
  std::vector<int> seen;
  for (const GmmClass& c : classes) {
    require(!c.components.empty(), "gmm: class " + std::to_string(c.label) + " has no components");
    require(std::isfinite(c.prior) && c.prior > 0.0, "gmm: class priors must be positive");
    double wsum = 0.0;
    for (const GmmComponent& k : c.components) {
      require(k.mean.size() == d && k.var.size() == d, "gmm: component dimensions differ");
      require(k.mean.allFinite(), "gmm: non-finite mean");
      require((k.var.array() > 0.0).all() && k.var.allFinite(), "gmm: variances must be positive");
      require(k.weight >= 0.0, "gmm: negative weight");
      wsum += k.weight;
    }
    require(std::abs(wsum - 1.0) < 1e-9, "gmm: weights of class " + std::to_string(c.label) + " sum to " +
                                             std::to_string(wsum));
    seen.push_back(c.label);
  }
  require(unique_labels(seen).size() == seen.size(), "gmm: duplicate class labels");
}

const GmmClass& GmmSpec::by_label(int label) const {
  for (const GmmClass& c : classes) {
    if (c.label == label) return c;
  }
  throw ValidationError("gmm: unknown class " + std::to_string(label));
}

std::vector<int> GmmSpec::labels() const {
  std::vector<int> out;
  for (const GmmClass& c : classes) out.push_back(c.label);
  return unique_labels(out);
}

double GmmSpec::class_prior(int label) const {
  double total = 0.0;
  for (const GmmClass& c : classes) total += c.prior;
  return by_label(label).prior / total;
}

Vec GmmSpec::sample_class(int label, RngStream& rng) const {
  const GmmClass& c = by_label(label);
  double u = rng.uniform();
  const GmmComponent* pick = &c.components.back();
  for (const GmmComponent& k : c.components) {
    if (u < k.weight) {
      pick = &k;
      break;
    }
    u -= k.weight;
  }
  Vec z = rng.normal_vec(dim());
  return pick->mean + (pick->var.array().sqrt() * z.array()).matrix();
}

LabeledDataset GmmSpec::sample(std::size_t n_per_class, RngStream& rng, Split split) const {
  validate();
  LabeledDataset data;
  data.split = split;
  data.classes = labels();
  for (int label : data.classes) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      data.samples.push_back(sample_class(label, rng));
      data.labels.push_back(label);
    }
  }
  return data;
}

namespace {

struct NoisedComponent {
  double log_weight;
  Vec mean;
  Vec var;
};

std::vector<NoisedComponent> noised_components(const GmmSpec& spec, std::optional<int> label,
                                               double abar) {
  std::vector<NoisedComponent> out;
  const double s = std::sqrt(abar);
  auto add_class = [&](const GmmClass& c, double class_weight) {
    for (const GmmComponent& k : c.components) {
      if (k.weight <= 0.0) continue;
      out.push_back({std::log(class_weight * k.weight), s * k.mean,
                     (abar * k.var.array() + (1.0 - abar)).matrix()});
    }
  };
  if (label) {
    add_class(spec.by_label(*label), 1.0);
  } else {
    for (const GmmClass& c : spec.classes) add_class(c, spec.class_prior(c.label));
  }
  return out;
}

double log_normal_diag(const Vec& x, const Vec& mean, const Vec& var) {
  const auto diff = (x - mean).array();
  return -0.5 * ((diff * diff / var.array()).sum() +
                 (var.array() * (2.0 * std::numbers::pi)).log().sum());
}

}  // namespace

double gmm_log_density(const GmmSpec& spec, std::optional<int> label, const Vec& x, double abar) {
  require(x.size() == spec.dim(), "gmm: dimension mismatch");
  const auto comps = noised_components(spec, label, abar);
  std::vector<double> logs;
  logs.reserve(comps.size());
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& k : comps) {
    logs.push_back(k.log_weight + log_normal_diag(x, k.mean, k.var));
    m = std::max(m, logs.back());
  }
  double acc = 0.0;
  for (double l : logs) acc += std::exp(l - m);
  return m + std::log(acc);
}

Vec gmm_score(const GmmSpec& spec, std::optional<int> label, const Vec& x, double abar) {
  require(x.size() == spec.dim(), "gmm: dimension mismatch");
  const auto comps = noised_components(spec, label, abar);
  std::vector<double> logs;
  logs.reserve(comps.size());
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& k : comps) {
    logs.push_back(k.log_weight + log_normal_diag(x, k.mean, k.var));
    m = std::max(m, logs.back());
  }
  double norm = 0.0;
  Vec score = Vec::Zero(x.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const double r = std::exp(logs[i] - m);
    norm += r;
    score -= r * ((x - comps[i].mean).array() / comps[i].var.array()).matrix();
  }
  return score / norm;
}

Vec gmm_eps(const GmmSpec& spec, const NoiseSchedule& schedule, std::optional<int> label, const Vec& x_t,
            int t) {
  require(t >= 1 && t <= schedule.steps(), "gmm_eps: step out of range");
  const double abar = schedule.alpha_bar(t);
  return -std::sqrt(1.0 - abar) * gmm_score(spec, label, x_t, abar);
}

double gmm_nll(const GmmSpec& spec, const LabeledDataset& data) {
  require(!data.empty(), "gmm_nll: empty dataset");
  require(data.dim() == spec.dim(), "gmm_nll: dimension mismatch");
  double acc = 0.0;
  for (const Vec& x : data.samples) acc -= gmm_log_density(spec, std::nullopt, x, 1.0);
  return acc / static_cast<double>(data.size());
}

AnalyticScore::AnalyticScore(GmmSpec spec, NoiseSchedule schedule)
    : spec_(std::move(spec)), schedule_(std::move(schedule)) {
  spec_.validate();
}

Vec AnalyticScore::eps(const Vec& x_t, int t, int label) const {
  return gmm_eps(spec_, schedule_, label, x_t, t);
}

// ---------------------------------------------------------------------------
// Denoiser

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ValidationError("unknown activation '" + s + "'");
}

Vec sinusoidal_embedding(int t, int dim) {
  Vec out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  if (dim % 2 == 1) out[dim - 1] = 0.0;
  return out;
}

namespace {

void check_shape(const DenoiserShape& s) {
  require(s.data_dim >= 1, "denoiser: data_dim must be positive");
  require(s.time_dim >= 0, "denoiser: negative time embedding size");
  require(!s.class_labels.empty(), "denoiser: no classes");
  require(unique_labels(s.class_labels) == s.class_labels, "denoiser: class labels must be sorted and unique");
  for (int h : s.hidden) require(h >= 1, "denoiser: hidden widths must be positive");
}

std::vector<int> layer_widths(const DenoiserShape& s) {
  std::vector<int> w{s.input_dim()};
  w.insert(w.end(), s.hidden.begin(), s.hidden.end());
  w.push_back(s.data_dim);
  return w;
}

template <class Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation a) {
  using Plain = typename Derived::PlainObject;
  Plain out(z.rows(), z.cols());
  if (a == Activation::tanh) {
    out = z.array().tanh().matrix();
  } else {
    out = z.array().max(0.0).matrix();
  }
  return out;
}

// Multiplies grad in place by the activation derivative, expressed through the
// post-activation value h.
template <class G, class H>
void activation_backward(Eigen::MatrixBase<G>& grad, const Eigen::MatrixBase<H>& h, Activation a) {
  if (a == Activation::tanh) {
    grad.array() *= 1.0 - h.array().square();
  } else {
    grad.array() *= (h.array() > 0.0).template cast<double>();
  }
}

}  // namespace

DenoiserModel::DenoiserModel(DenoiserShape shape, std::uint64_t seed) : shape_(std::move(shape)) {
  check_shape(shape_);
  RngStream rng(seed, {0xD3A015EULL});
  const auto widths = layer_widths(shape_);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    DenseLayer layer{Mat(out, in), Vec::Zero(out)};
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.weight(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    }
    layers_.push_back(std::move(layer));
  }
}

DenoiserModel DenoiserModel::zeros(DenoiserShape shape) {
  check_shape(shape);
  DenoiserModel m;
  m.shape_ = std::move(shape);
  const auto widths = layer_widths(m.shape_);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.layers_.push_back({Mat::Zero(widths[l + 1], widths[l]), Vec::Zero(widths[l + 1])});
  }
  return m;
}

int DenoiserModel::class_index(int label) const {
  const auto& ls = shape_.class_labels;
  const auto it = std::lower_bound(ls.begin(), ls.end(), label);
  if (it == ls.end() || *it != label) throw ValidationError("denoiser: unknown class " + std::to_string(label));
  return static_cast<int>(it - ls.begin());
}

std::vector<DenseLayer>& DenoiserModel::mutable_layers() {
  ++version_;
  return layers_;
}

Vec DenoiserModel::embed(const Vec& x, int t, int label) const {
  require(x.size() == shape_.data_dim, "denoiser: input dimension " + std::to_string(x.size()) +
                                           ", expected " + std::to_string(shape_.data_dim));
  Vec in = Vec::Zero(shape_.input_dim());
  in.head(shape_.data_dim) = x;
  in.segment(shape_.data_dim, shape_.time_dim) = sinusoidal_embedding(t, shape_.time_dim);
  in[shape_.data_dim + shape_.time_dim + class_index(label)] = 1.0;
  return in;
}

Mat DenoiserModel::embed_batch(const Mat& xs, int t, int label) const {
  require(xs.rows() == shape_.data_dim, "denoiser: batch dimension mismatch");
  Mat in = Mat::Zero(shape_.input_dim(), xs.cols());
  in.topRows(shape_.data_dim) = xs;
  in.middleRows(shape_.data_dim, shape_.time_dim).colwise() = sinusoidal_embedding(t, shape_.time_dim);
  in.row(shape_.data_dim + shape_.time_dim + class_index(label)).setOnes();
  return in;
}

DenoiserCache DenoiserModel::forward(const Vec& x, int t, int label) const {
  require(!layers_.empty(), "denoiser: model has no layers");
  DenoiserCache cache;
  cache.input = embed(x, t, label);
  cache.model = this;
  cache.version = version_;
  const Vec* h = &cache.input;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    cache.hidden.push_back(activate(layers_[l].weight * *h + layers_[l].bias, shape_.activation));
    h = &cache.hidden.back();
  }
  cache.output = layers_.back().weight * *h + layers_.back().bias;
  return cache;
}

Mat DenoiserModel::hidden_batch(const Mat& xs, int t, int label, int layer) const {
  require(layer >= 0 && layer < hidden_layers(), "denoiser: hidden layer out of range");
  Mat h = embed_batch(xs, t, label);
  for (int l = 0; l <= layer; ++l) {
    const auto& L = layers_[static_cast<std::size_t>(l)];
    h = activate((L.weight * h).colwise() + L.bias, shape_.activation);
  }
  return h;
}

void DenoiserModel::check_cache(const DenoiserCache& cache) const {
  if (cache.model != this || cache.version != version_ ||
      cache.hidden.size() + 1 != layers_.size()) {
    throw ValidationError("denoiser: forward cache is missing or stale");
  }
}

Vec DenoiserModel::backprop(const DenoiserCache& cache, int from_layer, Vec grad) const {
  // grad is d/d(post-activation of hidden layer from_layer).
  for (int l = from_layer; l >= 0; --l) {
    activation_backward(grad, cache.hidden[static_cast<std::size_t>(l)], shape_.activation);
    grad = layers_[static_cast<std::size_t>(l)].weight.transpose() * grad;
  }
  return grad.head(shape_.data_dim);
}

Vec DenoiserModel::input_grad(const DenoiserCache& cache, const Vec& grad_output) const {
  check_cache(cache);
  require(grad_output.size() == shape_.data_dim, "denoiser: output gradient has wrong size");
  Vec g = layers_.back().weight.transpose() * grad_output;
  if (hidden_layers() == 0) return g.head(shape_.data_dim);
  return backprop(cache, hidden_layers() - 1, std::move(g));
}

Vec DenoiserModel::input_grad_from_hidden(const DenoiserCache& cache, int layer, const Vec& grad_hidden) const {
  check_cache(cache);
  require(layer >= 0 && layer < hidden_layers(), "denoiser: hidden layer out of range");
  require(grad_hidden.size() == shape_.hidden[static_cast<std::size_t>(layer)],
          "denoiser: hidden gradient has wrong size");
  return backprop(cache, layer, grad_hidden);
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
  return n;
}

std::vector<double> DenoiserModel::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& L : layers_) {
    for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < L.weight.cols(); ++j) out.push_back(L.weight(i, j));
    }
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) out.push_back(L.bias[i]);
  }
  return out;
}

// Checkpoint layout (text, one token stream):
//   dap-denoiser 1
//   data_dim <d>
//   time_dim <k>
//   activation <tanh|relu>
//   classes <n> <label>...
//   hidden <n> <width>...
//   layer <index> <out> <in>
//   <out*in weights, row-major> <out biases>     (repeated per layer)
// Values are written with 17 significant digits, enough to round-trip.
void DenoiserModel::save(std::ostream& out) const {
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "dap-denoiser 1\n";
  out << "data_dim " << shape_.data_dim << "\n";
  out << "time_dim " << shape_.time_dim << "\n";
  out << "activation " << to_string(shape_.activation) << "\n";
  out << "classes " << shape_.class_labels.size();
  for (int c : shape_.class_labels) out << ' ' << c;
  out << "\nhidden " << shape_.hidden.size();
  for (int h : shape_.hidden) out << ' ' << h;
  out << "\n";
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    out << "layer " << l << ' ' << L.weight.rows() << ' ' << L.weight.cols() << "\n";
    for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < L.weight.cols(); ++j) out << (j ? " " : "") << num(L.weight(i, j));
      out << "\n";
    }
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) out << (i ? " " : "") << num(L.bias[i]);
    out << "\n";
  }
}

void DenoiserModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
  save(out);
}

DenoiserModel DenoiserModel::load(std::istream& in) {
  auto expect = [&](const char* word) {
    std::string tok;
    if (!(in >> tok) || tok != word) throw ValidationError(std::string("checkpoint: expected '") + word + "'");
  };
  auto read_int = [&]() {
    long long v = 0;
    if (!(in >> v)) throw ValidationError("checkpoint: truncated");
    return static_cast<int>(v);
  };
  expect("dap-denoiser");
  const int version = read_int();
  require(version == 1, "checkpoint: unsupported version " + std::to_string(version));
  DenoiserShape shape;
  expect("data_dim");
  shape.data_dim = read_int();
  expect("time_dim");
  shape.time_dim = read_int();
  expect("activation");
  std::string act;
  in >> act;
  shape.activation = parse_activation(act);
  expect("classes");
  shape.class_labels.assign(static_cast<std::size_t>(read_int()), 0);
  for (int& c : shape.class_labels) c = read_int();
  expect("hidden");
  shape.hidden.assign(static_cast<std::size_t>(read_int()), 0);
  for (int& h : shape.hidden) h = read_int();

  DenoiserModel m = zeros(shape);
  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    expect("layer");
    require(read_int() == static_cast<int>(l), "checkpoint: layers out of order");
    const int rows = read_int();
    const int cols = read_int();
    auto& L = m.layers_[l];
    require(rows == L.weight.rows() && cols == L.weight.cols(),
            "checkpoint: layer " + std::to_string(l) + " shape does not match header");
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        if (!(in >> L.weight(i, j))) throw ValidationError("checkpoint: truncated weights");
      }
    }
    for (int i = 0; i < rows; ++i) {
      if (!(in >> L.bias[i])) throw ValidationError("checkpoint: truncated biases");
    }
  }
  return m;
}

DenoiserModel DenoiserModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  return load(in);
}

DenoiserOutput denoiser_forward(const DenoiserModel& model, const Vec& x_t, int t, int label) {
  DenoiserCache cache = model.forward(x_t, t, label);
  return {std::move(cache.output), std::move(cache.hidden)};
}

Vec denoiser_input_grad(const DenoiserModel& model, const Vec& loss_grad_at_output, const DenoiserCache& cache) {
  return model.input_grad(cache, loss_grad_at_output);
}

// ---------------------------------------------------------------------------
// Training

class DenoiserTrainer {
 public:
  DenoiserTrainer(DenoiserModel& model, const TrainHyper& hyper) : model_(model), hyper_(hyper) {
    for (const auto& L : model_.layers_) {
      velocity_.push_back({Mat::Zero(L.weight.rows(), L.weight.cols()), Vec::Zero(L.bias.size())});
    }
  }

  // One SGD step on the batch (inputs already embedded). Returns the loss.
  double step(const Mat& inputs, const Mat& targets, double lr) {
    auto& layers = model_.layers_;
    const Activation act = model_.shape_.activation;
    const auto L = layers.size();
    std::vector<Mat> acts;
    acts.reserve(L + 1);
    acts.push_back(inputs);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      acts.push_back(activate((layers[l].weight * acts.back()).colwise() + layers[l].bias, act));
    }
    const Mat out = (layers.back().weight * acts.back()).colwise() + layers.back().bias;
    const Mat diff = out - targets;
    const double n = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / n;

    std::vector<DenseLayer> grads(L);
    Mat g = (2.0 / n) * diff;
    for (std::size_t l = L; l-- > 0;) {
      grads[l].weight = g * acts[l].transpose();
      grads[l].bias = g.rowwise().sum();
      if (l > 0) {
        g = layers[l].weight.transpose() * g;
        activation_backward(g, acts[l], act);
      }
    }
    double norm2 = 0.0;
    for (const auto& gr : grads) norm2 += gr.weight.squaredNorm() + gr.bias.squaredNorm();
    const double norm = std::sqrt(norm2);
    const double scale = (hyper_.clip_norm > 0.0 && norm > hyper_.clip_norm) ? hyper_.clip_norm / norm : 1.0;
    for (std::size_t l = 0; l < L; ++l) {
      velocity_[l].weight = hyper_.momentum * velocity_[l].weight - lr * scale * grads[l].weight;
      velocity_[l].bias = hyper_.momentum * velocity_[l].bias - lr * scale * grads[l].bias;
      layers[l].weight += velocity_[l].weight;
      layers[l].bias += velocity_[l].bias;
    }
    ++model_.version_;
    return loss;
  }

 private:
  DenoiserModel& model_;
  const TrainHyper& hyper_;
  std::vector<DenseLayer> velocity_;
};

namespace {

struct NoisedBatch {
  Mat inputs;
  Mat targets;
};

// Builds one minibatch of (embedded x_t, eps) pairs. `draw` returns a clean
// (x0, label) pair.
template <class Draw>
NoisedBatch make_batch(const DenoiserModel& model, const NoiseSchedule& schedule, int size, RngStream& rng,
                       Draw&& draw) {
  const auto& shape = model.shape();
  NoisedBatch b{Mat(shape.input_dim(), size), Mat(shape.data_dim, size)};
  for (int i = 0; i < size; ++i) {
    auto [x0, label] = draw();
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    NoisedSample ns = forward_noise(schedule, x0, t, rng);
    b.inputs.col(i) = model.embed(ns.xt, t, label);
    b.targets.col(i) = ns.eps;
  }
  return b;
}

double cosine_lr(const TrainHyper& h, int step) {
  const double progress = h.steps > 1 ? static_cast<double>(step) / (h.steps - 1) : 1.0;
  const double floor = h.lr * h.lr_final_fraction;
  return floor + 0.5 * (h.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class Draw>
DenoiserModel run_training(const DenoiserShape& shape, const NoiseSchedule& schedule, const TrainHyper& hyper,
                           TrainReport* report, Draw&& draw) {
  require(hyper.steps >= 0 && hyper.batch >= 1, "train: steps must be >= 0 and batch >= 1");
  require(std::isfinite(hyper.lr) && hyper.lr >= 0.0, "train: learning rate must be non-negative");
  DenoiserModel model(shape, hyper.seed);
  DenoiserTrainer trainer(model, hyper);
  RngStream rng(hyper.seed, {0x7EA1ULL});
  double window = 0.0;
  int in_window = 0;
  for (int s = 0; s < hyper.steps; ++s) {
    const NoisedBatch b = make_batch(model, schedule, hyper.batch, rng, draw);
    const double loss = trainer.step(b.inputs, b.targets, cosine_lr(hyper, s));
    if (!std::isfinite(loss)) {
      throw NumericalError("denoiser training diverged at step " + std::to_string(s) + " (loss " +
                           std::to_string(loss) + ")");
    }
    window += loss;
    if (++in_window == 100 || s + 1 == hyper.steps) {
      if (report) report->loss_history.push_back(window / in_window);
      window = 0.0;
      in_window = 0;
    }
  }
  if (report) report->steps = hyper.steps;
  return model;
}

}  // namespace

double denoiser_val_mse(const DenoiserModel& model, const LabeledDataset& data, const NoiseSchedule& schedule,
                        RngStream& rng, std::size_t n) {
  require(!data.empty(), "val_mse: empty dataset");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.below(data.size());
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    const NoisedSample ns = forward_noise(schedule, data.samples[k], t, rng);
    acc += (model.eps(ns.xt, t, data.labels[k]) - ns.eps).squaredNorm() / static_cast<double>(ns.eps.size());
  }
  return acc / static_cast<double>(n);
}

DenoiserModel train_denoiser(const GmmSpec& spec, const NoiseSchedule& schedule, const TrainHyper& hyper,
                             TrainReport* report) {
  spec.validate();
  DenoiserShape shape = hyper.shape;
  shape.data_dim = static_cast<int>(spec.dim());
  shape.class_labels = spec.labels();
  RngStream data_rng(hyper.seed, {0xDA7AULL});
  std::vector<double> priors;
  for (int label : shape.class_labels) priors.push_back(spec.class_prior(label));
  auto draw = [&]() {
    double u = data_rng.uniform();
    std::size_t c = 0;
    while (c + 1 < priors.size() && u >= priors[c]) u -= priors[c++];
    const int label = shape.class_labels[c];
    return std::pair<Vec, int>{spec.sample_class(label, data_rng), label};
  };
  DenoiserModel model = run_training(shape, schedule, hyper, report, draw);

  if (report && hyper.val_size > 0) {
    RngStream val_rng(hyper.seed, {0x7A1ULL});
    double model_mse = 0.0;
    double oracle_mse = 0.0;
    for (int i = 0; i < hyper.val_size; ++i) {
      const auto [x0, label] = [&] {
        double u = val_rng.uniform();
        std::size_t c = 0;
        while (c + 1 < priors.size() && u >= priors[c]) u -= priors[c++];
        const int lab = shape.class_labels[c];
        return std::pair<Vec, int>{spec.sample_class(lab, val_rng), lab};
      }();
      const int t = 1 + static_cast<int>(val_rng.below(static_cast<std::uint64_t>(schedule.steps())));
      const NoisedSample ns = forward_noise(schedule, x0, t, val_rng);
      const double d = static_cast<double>(ns.eps.size());
      model_mse += (model.eps(ns.xt, t, label) - ns.eps).squaredNorm() / d;
      oracle_mse += (gmm_eps(spec, schedule, label, ns.xt, t) - ns.eps).squaredNorm() / d;
    }
    report->val_mse = model_mse / hyper.val_size;
    report->oracle_val_mse = oracle_mse / hyper.val_size;
  }
  return model;
}

DenoiserModel train_denoiser(const LabeledDataset& data, const NoiseSchedule& schedule, const TrainHyper& hyper,
                             TrainReport* report) {
  data.validate();
  require(!data.empty(), "train: empty dataset");
  DenoiserShape shape = hyper.shape;
  shape.data_dim = static_cast<int>(data.dim());
  shape.class_labels = data.classes;
  RngStream data_rng(hyper.seed, {0xDA7AULL});
  auto draw = [&]() {
    const std::size_t k = data_rng.below(data.size());
    return std::pair<Vec, int>{data.samples[k], data.labels[k]};
  };
  DenoiserModel model = run_training(shape, schedule, hyper, report, draw);
  if (report && hyper.val_size > 0) {
    RngStream val_rng(hyper.seed, {0x7A1ULL});
    report->val_mse = denoiser_val_mse(model, data, schedule, val_rng, static_cast<std::size_t>(hyper.val_size));
  }
  return model;
}

}  // namespace dap
