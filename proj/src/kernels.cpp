#include "dap/kernels.hpp"

#include "dap/scores.hpp"
#include "dap/sde.hpp"

#include <cmath>
#include <cstdio>
#include <regex>

namespace dap {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_pair(const Vec& x, const Vec& y) {
  require_same_dim(x, y, "kernel");
  require_finite(x, "x");
  require_finite(y, "y");
}

}  // namespace

KernelSpec make_rbf(double bandwidth) {
  KernelSpec spec = RbfKernel{bandwidth};
  validate(spec);
  return spec;
}

void validate(const KernelSpec& spec) {
  if (const auto* rbf = std::get_if<RbfKernel>(&spec)) {
    require(std::isfinite(rbf->bandwidth) && rbf->bandwidth > 0.0, "RBF bandwidth must be positive");
  }
}

KernelSpec parse_kernel(const std::string& text) {
  if (text == "linear") return LinearKernel{};
  if (text == "rbf") return RbfKernel{1.0};
  static const std::regex re(R"(rbf[:(]\s*([0-9.eE+-]+)\s*\)?)");
  std::smatch m;
  if (std::regex_match(text, m, re)) {
    double sigma = 0.0;
    try {
      sigma = std::stod(m[1].str());
    } catch (const std::exception&) {
      throw ValidationError("bad RBF bandwidth in '" + text + "'");
    }
    return make_rbf(sigma);
  }
  throw ValidationError("unknown kernel '" + text + "' (expected linear or rbf:<sigma>)");
}

std::string to_string(const KernelSpec& spec) {
  return std::visit(overloaded{[](const LinearKernel&) { return std::string("linear"); },
                               [](const RbfKernel& k) {
                                 char buf[64];
                                 std::snprintf(buf, sizeof buf, "rbf:%g", k.bandwidth);
                                 return std::string(buf);
                               }},
                    spec);
}

double kernel_eval(const KernelSpec& spec, const Vec& x, const Vec& y) {
  check_pair(x, y);
  return std::visit(overloaded{[&](const LinearKernel&) { return x.dot(y); },
                               [&](const RbfKernel& k) {
                                 const double s = k.bandwidth;
                                 return std::exp(-(x - y).squaredNorm() / (2.0 * s * s));
                               }},
                    spec);
}

double induced_distance(const KernelSpec& spec, const Vec& x, const Vec& y) {
  check_pair(x, y);
  const double radicand = std::visit(
      overloaded{[&](const LinearKernel&) { return x.dot(x) + y.dot(y) - 2.0 * x.dot(y); },
                 [&](const RbfKernel& k) {
                   const double s = k.bandwidth;
                   return 2.0 - 2.0 * std::exp(-(x - y).squaredNorm() / (2.0 * s * s));
                 }},
      spec);
  return std::sqrt(std::max(radicand, 0.0));
}

Vec induced_distance_grad(const KernelSpec& spec, const Vec& x, const Vec& y) {
  check_pair(x, y);
  const Vec diff = x - y;
  const double sq = diff.squaredNorm();
  return std::visit(
      overloaded{[&](const LinearKernel&) -> Vec {
                   // Linear-kernel distance is ||x - y||; computed from the
                   // difference so the gradient stays accurate near x == y.
                   const double d = std::sqrt(sq);
                   if (d < kSingularDistance) return Vec::Zero(x.size());
                   return diff / d;
                 },
                 [&](const RbfKernel& k) -> Vec {
                   const double s2 = k.bandwidth * k.bandwidth;
                   const double e = std::exp(-sq / (2.0 * s2));
                   const double d = std::sqrt(std::max(2.0 - 2.0 * e, 0.0));
                   if (d < kSingularDistance || std::sqrt(sq) < kSingularDistance) {
                     return Vec::Zero(x.size());
                   }
                   return diff * (e / (s2 * d));
                 }},
      spec);
}

Mat gram_matrix(const KernelSpec& spec, std::span<const Vec> batch, Exec exec) {
  require(!batch.empty(), "gram_matrix: empty batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  for (const Vec& v : batch) require_same_dim(batch.front(), v, "gram_matrix");
  Mat g(n, n);
  if (exec == Exec::parallel) {
    FirstError err;
#pragma omp parallel for schedule(dynamic, 4)
    for (Eigen::Index i = 0; i < n; ++i) {
      err.run([&] {
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double v =
              kernel_eval(spec, batch[static_cast<std::size_t>(i)], batch[static_cast<std::size_t>(j)]);
          g(i, j) = v;
          g(j, i) = v;
        }
      });
    }
    err.rethrow();
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = kernel_eval(spec, batch[static_cast<std::size_t>(i)], batch[static_cast<std::size_t>(j)]);
        g(i, j) = v;
        g(j, i) = v;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

RandomProjection make_random_projection(int n_out, int n_in, std::uint64_t seed) {
  require(n_out >= 1 && n_in >= 1, "random projection needs positive dimensions");
  RngStream rng(seed, {0x5052ULL});
  RandomProjection p;
  p.seed = seed;
  p.matrix.resize(n_out, n_in);
  for (int i = 0; i < n_out; ++i) {
    for (int j = 0; j < n_in; ++j) p.matrix(i, j) = rng.normal();
  }
  return p;
}

std::string to_string(const FeatureMapSpec& spec) {
  return std::visit(overloaded{[](const IdentityMap&) { return std::string("identity"); },
                               [](const RandomProjection& p) {
                                 return "projection:" + std::to_string(p.matrix.rows()) + ":" +
                                        std::to_string(p.seed);
                               },
                               [](const DenoiserHidden& h) {
                                 return "hidden:" + std::to_string(h.layer_index);
                               }},
                    spec);
}

FeatureMap::FeatureMap(FeatureMapSpec spec, const DenoiserModel* model)
    : spec_(std::move(spec)), model_(model) {
  if (const auto* p = std::get_if<RandomProjection>(&spec_)) {
    require(p->matrix.rows() >= 1, "random projection needs n_out >= 1");
    require(p->matrix.allFinite(), "random projection matrix has non-finite entries");
  }
  if (const auto* h = std::get_if<DenoiserHidden>(&spec_)) {
    require(model_ != nullptr, "hidden-layer feature map needs a denoiser");
    require(h->layer_index >= 0 && h->layer_index < model_->hidden_layers(),
            "hidden layer index " + std::to_string(h->layer_index) + " does not exist");
  }
}

void FeatureMap::check_input_dim(Eigen::Index input_dim) const {
  if (const auto* p = std::get_if<RandomProjection>(&spec_)) {
    require(p->matrix.cols() == input_dim, "random projection expects input dimension " +
                                               std::to_string(p->matrix.cols()) + ", got " +
                                               std::to_string(input_dim));
  } else if (std::holds_alternative<DenoiserHidden>(spec_)) {
    require(model_->shape().data_dim == input_dim, "denoiser expects input dimension " +
                                                       std::to_string(model_->shape().data_dim) +
                                                       ", got " + std::to_string(input_dim));
  }
}

Vec FeatureMap::apply(const Vec& x, const FeatureContext& ctx) const {
  check_input_dim(x.size());
  return std::visit(overloaded{[&](const IdentityMap&) -> Vec { return x; },
                               [&](const RandomProjection& p) -> Vec {
                                 return p.matrix * x / std::sqrt(static_cast<double>(p.matrix.rows()));
                               },
                               [&](const DenoiserHidden& h) -> Vec {
                                 return model_->forward(x, ctx.t, ctx.label).hidden
                                     [static_cast<std::size_t>(h.layer_index)];
                               }},
                    spec_);
}

Mat FeatureMap::apply_batch(const Mat& xs, const FeatureContext& ctx) const {
  check_input_dim(xs.rows());
  return std::visit(overloaded{[&](const IdentityMap&) -> Mat { return xs; },
                               [&](const RandomProjection& p) -> Mat {
                                 return p.matrix * xs / std::sqrt(static_cast<double>(p.matrix.rows()));
                               },
                               [&](const DenoiserHidden& h) -> Mat {
                                 return model_->hidden_batch(xs, ctx.t, ctx.label, h.layer_index);
                               }},
                    spec_);
}

Vec FeatureMap::pullback(const Vec& x, const FeatureContext& ctx, const Vec& grad_features) const {
  check_input_dim(x.size());
  return std::visit(overloaded{[&](const IdentityMap&) -> Vec { return grad_features; },
                               [&](const RandomProjection& p) -> Vec {
                                 return p.matrix.transpose() * grad_features /
                                        std::sqrt(static_cast<double>(p.matrix.rows()));
                               },
                               [&](const DenoiserHidden& h) -> Vec {
                                 const DenoiserCache cache = model_->forward(x, ctx.t, ctx.label);
                                 return model_->input_grad_from_hidden(cache, h.layer_index, grad_features);
                               }},
                    spec_);
}

double factorized_distance(const FeatureMap& map, FeatureNorm norm, const Vec& x, const Vec& y,
                           const FeatureContext& ctx) {
  require_same_dim(x, y, "factorized_distance");
  (void)norm;  // only the Euclidean norm is defined
  return (map.apply(x, ctx) - map.apply(y, ctx)).norm();
}

}  // namespace dap
