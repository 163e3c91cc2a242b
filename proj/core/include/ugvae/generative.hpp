#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ugvae/matrix.hpp"
#include "ugvae/nets.hpp"
#include "ugvae/numerics.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

/// Generative-model configuration. The likelihood is Gaussian with fixed
/// standard deviation sigma_x; group_size is the number of samples sharing
/// one global latent.
struct GenerativeConfig {
  BundleDims dims;
  double sigma_x = 0.2;
  std::size_t group_size = 128;

  double likelihood_log_var() const;  // ln(sigma_x^2)
};

/// One ancestral draw: beta -> components -> Z -> X.
struct GroupSample {
  Vec beta;                            // global_dim
  std::vector<std::size_t> components; // B
  Matrix Z;                            // B x local_dim
  Matrix X;                            // B x data_dim
};

// p(beta) = N(0, I_g).
DiagGaussian prior_beta(const GenerativeConfig& config);

// p(d) uniform over K components.
CategoricalDist prior_d(const GenerativeConfig& config);

// p(z | d = k, beta) = theta_z^(k)(beta).
DiagGaussian prior_z_given(std::size_t k, std::span<const double> beta,
                           const NetworkBundle& bundle);

// p(x | z, beta): mean = theta_x([z, beta]) in (0,1)^D, variance sigma_x^2 I.
DiagGaussian decode_x(std::span<const double> z, std::span<const double> beta,
                      const NetworkBundle& bundle, const GenerativeConfig& config);

// Ancestral sampling of a whole group; one shared beta for all B samples.
GroupSample sample_group(const GenerativeConfig& config, const NetworkBundle& bundle,
                         RngStream& rng);

// log p(X, Z, d, beta) as the sum of the four factor log-densities.
double log_joint(const GroupSample& sample, const NetworkBundle& bundle,
                 const GenerativeConfig& config);

}  // namespace ugvae
