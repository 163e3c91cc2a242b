#include "ugvae/generative.hpp"

#include <cmath>
#include <string>

#include "ugvae/errors.hpp"

namespace ugvae {

double GenerativeConfig::likelihood_log_var() const { return 2.0 * std::log(sigma_x); }

DiagGaussian prior_beta(const GenerativeConfig& config) {
  return DiagGaussian::standard(config.dims.global_dim);
}

CategoricalDist prior_d(const GenerativeConfig& config) {
  return CategoricalDist::uniform(config.dims.components);
}

DiagGaussian prior_z_given(std::size_t k, std::span<const double> beta,
                           const NetworkBundle& bundle) {
  if (k >= bundle.theta_z.size()) {
    throw ContractViolation("prior_z_given: component " + std::to_string(k) + " out of range");
  }
  return split_gaussian_head(bundle.theta_z[k].raw(beta));
}

DiagGaussian decode_x(std::span<const double> z, std::span<const double> beta,
                      const NetworkBundle& bundle, const GenerativeConfig& config) {
  Vec input;
  input.reserve(z.size() + beta.size());
  input.insert(input.end(), z.begin(), z.end());
  input.insert(input.end(), beta.begin(), beta.end());
  DiagGaussian out;
  out.mean = sigmoid_head(bundle.theta_x.raw(input));
  out.log_var.assign(out.mean.size(), config.likelihood_log_var());
  return out;
}

GroupSample sample_group(const GenerativeConfig& config, const NetworkBundle& bundle,
                         RngStream& rng) {
  const std::size_t B = config.group_size;
  GroupSample sample;
  sample.beta = reparameterize(prior_beta(config), rng);
  sample.components.resize(B);
  sample.Z = Matrix(B, config.dims.local_dim);
  sample.X = Matrix(B, config.dims.data_dim);

  const CategoricalDist pd = prior_d(config);
  for (std::size_t i = 0; i < B; ++i) {
    sample.components[i] = sample_categorical(pd, rng);
    const Vec z = reparameterize(prior_z_given(sample.components[i], sample.beta, bundle), rng);
    std::copy(z.begin(), z.end(), sample.Z.row(i).begin());
    // pixels deliberately not clipped to [0,1]; renderers clip instead
    const Vec x = reparameterize(decode_x(z, sample.beta, bundle, config), rng);
    std::copy(x.begin(), x.end(), sample.X.row(i).begin());
  }
  return sample;
}

double log_joint(const GroupSample& sample, const NetworkBundle& bundle,
                 const GenerativeConfig& config) {
  double acc = gaussian_log_density(sample.beta, prior_beta(config));
  const CategoricalDist pd = prior_d(config);
  for (std::size_t i = 0; i < sample.X.rows; ++i) {
    acc += std::log(pd.probs[sample.components[i]]);
    acc += gaussian_log_density(sample.Z.row(i),
                                prior_z_given(sample.components[i], sample.beta, bundle));
    acc += gaussian_log_density(sample.X.row(i),
                                decode_x(sample.Z.row(i), sample.beta, bundle, config));
  }
  return acc;
}

}  // namespace ugvae
