#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ugvae/autodiff.hpp"
#include "ugvae/matrix.hpp"
#include "ugvae/numerics.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

/// Named learnable array with a gradient buffer of the same shape.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Vec values;
  Vec grad;

  std::size_t size() const { return values.size(); }
};

enum class Activation { kRelu, kTanh };

// Output head applied after the last affine layer. Split-gaussian heads have
// even width 2m: first half mean, second half log-variance.
enum class Head { kLinear, kRelu, kSigmoid, kSoftmax, kSplitGaussian };

struct MlpSpec {
  std::vector<std::size_t> sizes;  // {in, hidden..., out}
  Activation hidden = Activation::kRelu;
  Head head = Head::kLinear;
};

struct LinearLayer {
  ParamTensor weight;  // row-major (out x in)
  ParamTensor bias;
};

struct Mlp {
  std::string name;
  MlpSpec spec;
  std::vector<LinearLayer> layers;

  std::size_t input_width() const { return spec.sizes.front(); }
  std::size_t output_width() const { return spec.sizes.back(); }

  // Affine stack with hidden activations, head not applied.
  Vec raw(std::span<const double> x) const;
};

using ForwardOutput = std::variant<Vec, DiagGaussian, CategoricalDist>;

// Applies the configured output head after the affine stack.
ForwardOutput forward(const Mlp& net, std::span<const double> x);

// Head helpers shared by the plain and tape paths.
DiagGaussian split_gaussian_head(const Vec& raw);  // clamps log-variance
CategoricalDist softmax_head(const Vec& raw);      // log-sum-exp stabilized
Vec sigmoid_head(const Vec& raw);
Vec relu_head(const Vec& raw);

/// Model dimensions. `hidden` is the shared MLP width.
struct BundleDims {
  std::size_t data_dim = 784;    // D
  std::size_t local_dim = 10;    // d
  std::size_t global_dim = 20;   // g
  std::size_t components = 10;   // K
  std::size_t hidden = 256;
};

/// All learnable functions of the model:
///   h         : data_dim -> hidden            (relu output)
///   phi_z     : hidden -> 2*local_dim         (split gaussian)
///   phi_d     : local_dim -> hidden -> K      (tanh hidden, softmax)
///   phi_beta  : hidden+K -> 2*global_dim      (split gaussian)
///   theta_z_k : global_dim -> hidden -> 2*local_dim (tanh hidden), one per component
///   theta_x   : local_dim+global_dim -> hidden -> data_dim (relu hidden, sigmoid)
struct NetworkBundle {
  BundleDims dims;
  Mlp h;
  Mlp phi_z;
  Mlp phi_d;
  Mlp phi_beta;
  std::vector<Mlp> theta_z;
  Mlp theta_x;

  void for_each_tensor(const std::function<void(ParamTensor&)>& fn);
  void for_each_tensor(const std::function<void(const ParamTensor&)>& fn) const;
  std::size_t param_count() const;
  void zero_grads();
  bool all_finite() const;
};

// Glorot-uniform weights, zero biases; deterministic in the stream.
NetworkBundle init_bundle(const BundleDims& dims, RngStream& rng);

// --- tape-based forward ---

struct MlpVars {
  std::vector<std::pair<ad::Var, ad::Var>> layers;  // (W, b)
};

struct BundleVars {
  MlpVars h, phi_z, phi_d, phi_beta, theta_x;
  std::vector<MlpVars> theta_z;
};

// Registers every tensor of `net` as a leaf; gradients flush into the
// tensors' grad buffers on Tape::backward.
MlpVars bind_mlp(ad::Tape& tape, Mlp& net);
BundleVars bind_bundle(ad::Tape& tape, NetworkBundle& bundle);

// Tape twin of Mlp::raw (identical accumulation order).
ad::Var mlp_raw_t(ad::Tape& tape, const Mlp& net, const MlpVars& vars, ad::Var input);

// --- finite-difference gradient checking ---

struct GradCheckTensorStat {
  std::string name;
  double max_rel = 0.0;
  double mean_rel = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckTensorStat> tensors;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  double frac_within_tol = 1.0;
  std::size_t coords = 0;
  bool pass = false;
};

// Builds a scalar loss over the bundle; must be deterministic (any sampling
// noise fixed by the caller).
using LossBuilder = std::function<ad::Var(ad::Tape&, NetworkBundle&)>;

// Central finite differences on every coordinate of every tensor.
// pass <=> mean relative error over all coordinates <= tolerance.
GradCheckReport gradient_check(NetworkBundle& bundle, const LossBuilder& build_loss,
                               double tolerance, double fd_step = 1e-4);

}  // namespace ugvae
