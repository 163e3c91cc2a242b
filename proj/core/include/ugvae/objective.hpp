#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ugvae/autodiff.hpp"
#include "ugvae/generative.hpp"
#include "ugvae/inference.hpp"
#include "ugvae/matrix.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

struct PerSampleTerms {
  double recon = 0.0;
  double kl_z = 0.0;
  double kl_d = 0.0;
};

/// Per-group objective decomposition; all sums over the group.
/// elbo = recon - kl_z - kl_d - kl_beta.
struct ElboBreakdown {
  double recon = 0.0;
  double kl_z = 0.0;
  double kl_d = 0.0;
  double kl_beta = 0.0;
  double elbo = 0.0;
  std::vector<PerSampleTerms> per_sample;
};

// Raised when the objective evaluates non-finite; carries the breakdown for
// diagnostics.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, ElboBreakdown breakdown)
      : std::runtime_error(what), breakdown(std::move(breakdown)) {}
  ElboBreakdown breakdown;
};

// Local ELBO terms for one sample given its posterior slots and the shared
// sampled beta:
//   recon = log p(x | z, beta)                       (single-sample estimate)
//   kl_z  = sum_k qd_k KL(qz || p(z | k, beta))      (exact over d)
//   kl_d  = KL(qd || uniform)
PerSampleTerms local_elbo(std::span<const double> x, const DiagGaussian& qz,
                          std::span<const double> z, const CategoricalDist& qd,
                          std::span<const double> beta, const NetworkBundle& bundle,
                          const GenerativeConfig& config);

// Straight-line evaluation: infer_group, then local terms against the shared
// sampled beta, plus one KL(qbeta || p(beta)) per group.
ElboBreakdown group_elbo(const Matrix& X, const NetworkBundle& bundle,
                         const GenerativeConfig& config, RngStream& rng);

/// Frozen reparameterization noise: one row per sample for z, one vector for
/// beta. Drawn in the same stream order as infer_group.
struct EpsDraws {
  Matrix eps_z;  // B x d
  Vec eps_beta;  // g

  static EpsDraws draw(std::size_t B, std::size_t local_dim, std::size_t global_dim,
                       RngStream& rng);
};

/// Differentiable objective graph plus the values it evaluated to.
struct LossGraph {
  ad::Var loss;      // -elbo / B
  ad::Var elbo;
  ElboBreakdown breakdown;
};

// Builds the ELBO graph on the tape with the given frozen noise. Gradients
// reach every bundle parameter via Tape::backward(loss).
LossGraph build_loss(ad::Tape& tape, const Matrix& X, NetworkBundle& bundle,
                     const GenerativeConfig& config, const EpsDraws& eps);

// Draws noise from the stream (same order as group_elbo) and builds the graph.
// Throws TrainingDivergence when the objective is non-finite.
LossGraph loss(ad::Tape& tape, const Matrix& X, NetworkBundle& bundle,
               const GenerativeConfig& config, RngStream& rng);

}  // namespace ugvae
