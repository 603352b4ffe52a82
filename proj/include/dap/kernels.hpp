#pragma once

#include "dap/common.hpp"

#include <span>
#include <string>
#include <variant>

namespace dap {

class DenoiserModel;

struct LinearKernel {};

struct RbfKernel {
  double bandwidth = 1.0;
};

using KernelSpec = std::variant<LinearKernel, RbfKernel>;

KernelSpec make_rbf(double bandwidth);
void validate(const KernelSpec& spec);

// "linear", "rbf", "rbf:0.5", "rbf(2)"
KernelSpec parse_kernel(const std::string& text);
std::string to_string(const KernelSpec& spec);

// Bandwidth presets exposed alongside the default RBF(1).
inline constexpr double kRbfPresets[] = {0.5, 1.0, 2.0};

double kernel_eval(const KernelSpec& spec, const Vec& x, const Vec& y);

// [K(x,x) + K(y,y) - 2 K(x,y)]^(1/2), radicand clamped at zero.
double induced_distance(const KernelSpec& spec, const Vec& x, const Vec& y);

// Gradient of induced_distance with respect to x. Zero when the distance is
// below kSingularDistance (the norm is not differentiable there).
Vec induced_distance_grad(const KernelSpec& spec, const Vec& x, const Vec& y);

inline constexpr double kSingularDistance = 1e-12;

Mat gram_matrix(const KernelSpec& spec, std::span<const Vec> batch, Exec exec = Exec::serial);

// ---------------------------------------------------------------------------
// Feature maps phi: R^d -> R^n

struct IdentityMap {};

// phi(x) = W x / sqrt(n_out).
struct RandomProjection {
  Mat matrix;  // n_out x n_in
  std::uint64_t seed = 0;
};

// phi(x) = activation of hidden layer `layer_index` of the bound denoiser,
// evaluated at the current step and class.
struct DenoiserHidden {
  int layer_index = 1;
};

using FeatureMapSpec = std::variant<IdentityMap, RandomProjection, DenoiserHidden>;

RandomProjection make_random_projection(int n_out, int n_in, std::uint64_t seed);

std::string to_string(const FeatureMapSpec& spec);

// Evaluation context needed by step- and class-dependent feature maps.
struct FeatureContext {
  int t = 0;
  int label = 0;
};

// A FeatureMapSpec bound to whatever it needs to evaluate (the denoiser for
// DenoiserHidden). Cheap to copy; does not own the model.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(FeatureMapSpec spec, const DenoiserModel* model = nullptr);

  const FeatureMapSpec& spec() const { return spec_; }

  Vec apply(const Vec& x, const FeatureContext& ctx = {}) const;

  // Applies the map to every column of `xs` (one sample per column).
  Mat apply_batch(const Mat& xs, const FeatureContext& ctx = {}) const;

  // J_phi(x)^T * grad_features: pulls a feature-space gradient back to input space.
  Vec pullback(const Vec& x, const FeatureContext& ctx, const Vec& grad_features) const;

  // Throws unless the map accepts inputs of dimension `input_dim`.
  void check_input_dim(Eigen::Index input_dim) const;

 private:
  FeatureMapSpec spec_ = IdentityMap{};
  const DenoiserModel* model_ = nullptr;
};

enum class FeatureNorm { euclidean };

// d(phi(x), phi(y)) = ||phi(x) - phi(y)||_2.
double factorized_distance(const FeatureMap& map, FeatureNorm norm, const Vec& x, const Vec& y,
                           const FeatureContext& ctx = {});

}  // namespace dap
