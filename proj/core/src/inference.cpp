#include "ugvae/inference.hpp"

#include "ugvae/errors.hpp"

namespace ugvae {

DiagGaussian encode_z(std::span<const double> x, const NetworkBundle& bundle) {
  return split_gaussian_head(bundle.phi_z.raw(relu_head(bundle.h.raw(x))));
}

CategoricalDist classify_d(std::span<const double> z, const NetworkBundle& bundle) {
  return softmax_head(bundle.phi_d.raw(z));
}

DiagGaussian beta_contribution(std::span<const double> x, const CategoricalDist& pi,
                               const NetworkBundle& bundle) {
  const Vec feat = relu_head(bundle.h.raw(x));
  Vec input;
  input.reserve(feat.size() + pi.size());
  input.insert(input.end(), feat.begin(), feat.end());
  input.insert(input.end(), pi.probs.begin(), pi.probs.end());
  return split_gaussian_head(bundle.phi_beta.raw(input));
}

GroupPosterior infer_group(const Matrix& X, const NetworkBundle& bundle, RngStream& rng) {
  const std::size_t B = X.rows;
  if (B == 0) throw ContractViolation("infer_group: empty group");

  GroupPosterior post;
  post.qz.reserve(B);
  post.qd.reserve(B);
  post.contributions.reserve(B);
  post.z = Matrix(B, bundle.dims.local_dim);

  for (std::size_t i = 0; i < B; ++i) {
    post.qz.push_back(encode_z(X.row(i), bundle));
    const Vec zi = reparameterize(post.qz.back(), rng);
    std::copy(zi.begin(), zi.end(), post.z.row(i).begin());
    post.qd.push_back(classify_d(zi, bundle));
    post.contributions.push_back(beta_contribution(X.row(i), post.qd.back(), bundle));
  }
  post.qbeta = product_of_diag_gaussians(post.contributions);
  post.beta = reparameterize(post.qbeta, rng);
  return post;
}

}  // namespace ugvae
