#pragma once

#include <span>
#include <vector>

#include "ugvae/generative.hpp"
#include "ugvae/matrix.hpp"
#include "ugvae/nets.hpp"
#include "ugvae/numerics.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

/// Structured posterior q(Z, d, beta | X) for one group, together with the
/// single reparameterized sample of (Z, beta) used downstream.
struct GroupPosterior {
  std::vector<DiagGaussian> qz;            // B Gaussians over R^d
  std::vector<CategoricalDist> qd;         // B simplices over K
  std::vector<DiagGaussian> contributions; // B Gaussians over R^g
  DiagGaussian qbeta;                      // product of the contributions
  Matrix z;                                // B x d samples
  Vec beta;                                // g sample
};

// q(z | x) = phi_z(h(x)).
DiagGaussian encode_z(std::span<const double> x, const NetworkBundle& bundle);

// q(d | z) = softmax(phi_d(z)).
CategoricalDist classify_d(std::span<const double> z, const NetworkBundle& bundle);

// Per-sample global contribution phi_beta([h(x), pi]).
DiagGaussian beta_contribution(std::span<const double> x, const CategoricalDist& pi,
                               const NetworkBundle& bundle);

// Full structured inference over a group. Per sample: encode, sample z,
// classify, contribute; then aggregate contributions by product of experts
// and sample beta. Draw order: z for i = 0..B-1, then beta.
GroupPosterior infer_group(const Matrix& X, const NetworkBundle& bundle, RngStream& rng);

}  // namespace ugvae
