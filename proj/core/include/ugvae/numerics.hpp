#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ugvae/matrix.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

// Log-variances are clamped to this range before any exponential is taken, so
// precisions stay inside [e^-10, e^10] and products of experts cannot overflow.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal-covariance Gaussian in mean / log-variance form.
struct DiagGaussian {
  Vec mean;
  Vec log_var;

  std::size_t dim() const { return mean.size(); }
  Vec variance() const;

  static DiagGaussian standard(std::size_t n) { return {Vec(n, 0.0), Vec(n, 0.0)}; }
};

/// Probability simplex over K categories.
struct CategoricalDist {
  Vec probs;

  std::size_t size() const { return probs.size(); }

  static CategoricalDist uniform(std::size_t k);
};

void clamp_log_var(Vec& log_var);

// log N(x | mean, diag(exp(log_var))), summed over dimensions.
double gaussian_log_density(std::span<const double> x, const DiagGaussian& g);

// KL(q || p) for diagonal Gaussians of equal dimension; always >= 0.
double kl_gaussian_diag(const DiagGaussian& q, const DiagGaussian& p);

// KL(q || p) over categories, with the 0 * ln(0/p) = 0 convention.
// Throws InfiniteDivergence when p_k = 0 while q_k > 0.
double kl_categorical(const CategoricalDist& q, const CategoricalDist& p);

// Product of experts: precisions add, means combine precision-weighted.
// Uses compensated accumulation, so the result is permutation-invariant up to
// strict rounding.
DiagGaussian product_of_diag_gaussians(std::span<const DiagGaussian> contribs);

// mean + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from the stream.
Vec reparameterize(const DiagGaussian& g, RngStream& rng);

// Inverse-CDF draw over cumulative sums in index order.
std::size_t sample_categorical(const CategoricalDist& c, RngStream& rng);

}  // namespace ugvae
