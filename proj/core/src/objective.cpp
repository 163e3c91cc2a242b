#include "ugvae/objective.hpp"

#include <cmath>

#include "ugvae/errors.hpp"

namespace ugvae {
namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

// KL(q || p) between diagonal Gaussians, composed from tape primitives with
// the same per-dimension expression as numerics::kl_gaussian_diag.
ad::Var kl_gaussian_t(ad::Tape& t, ad::Var mq, ad::Var lq, ad::Var mp, ad::Var lp) {
  ad::Var dlv = ad::sub(t, lp, lq);
  ad::Var ratio = ad::vexp(t, ad::neg(t, dlv));                  // sigma_q^2 / sigma_p^2
  ad::Var dmu = ad::sub(t, mq, mp);
  ad::Var maha = ad::mul(t, ad::square(t, dmu), ad::vexp(t, ad::neg(t, lp)));
  ad::Var inner = ad::add_const(t, ad::add(t, ad::add(t, dlv, ratio), maha), -1.0);
  return ad::scale(t, ad::sum(t, inner), 0.5);
}

struct SplitGaussianVars {
  ad::Var mean;
  ad::Var log_var;  // clamped
};

SplitGaussianVars split_gaussian_t(ad::Tape& t, ad::Var raw, std::size_t dim) {
  return {ad::slice(t, raw, 0, dim),
          ad::clampv(t, ad::slice(t, raw, dim, dim), kLogVarMin, kLogVarMax)};
}

ad::Var reparameterize_t(ad::Tape& t, const SplitGaussianVars& g, std::span<const double> eps) {
  ad::Var sigma = ad::vexp(t, ad::scale(t, g.log_var, 0.5));
  return ad::add(t, g.mean, ad::mul(t, sigma, t.constant(eps)));
}

}  // namespace

PerSampleTerms local_elbo(std::span<const double> x, const DiagGaussian& qz,
                          std::span<const double> z, const CategoricalDist& qd,
                          std::span<const double> beta, const NetworkBundle& bundle,
                          const GenerativeConfig& config) {
  PerSampleTerms terms;
  terms.recon = gaussian_log_density(x, decode_x(z, beta, bundle, config));
  for (std::size_t k = 0; k < qd.size(); ++k) {
    terms.kl_z += qd.probs[k] * kl_gaussian_diag(qz, prior_z_given(k, beta, bundle));
  }
  terms.kl_d = kl_categorical(qd, prior_d(config));
  return terms;
}

ElboBreakdown group_elbo(const Matrix& X, const NetworkBundle& bundle,
                         const GenerativeConfig& config, RngStream& rng) {
  if (X.rows == 0) throw ContractViolation("group_elbo: empty group");
  const GroupPosterior post = infer_group(X, bundle, rng);

  ElboBreakdown out;
  out.per_sample.reserve(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    PerSampleTerms terms =
        local_elbo(X.row(i), post.qz[i], post.z.row(i), post.qd[i], post.beta, bundle, config);
    out.recon += terms.recon;
    out.kl_z += terms.kl_z;
    out.kl_d += terms.kl_d;
    out.per_sample.push_back(terms);
  }
  out.kl_beta = kl_gaussian_diag(post.qbeta, prior_beta(config));
  out.elbo = out.recon - out.kl_z - out.kl_d - out.kl_beta;
  return out;
}

EpsDraws EpsDraws::draw(std::size_t B, std::size_t local_dim, std::size_t global_dim,
                        RngStream& rng) {
  EpsDraws eps;
  eps.eps_z = Matrix(B, local_dim);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < local_dim; ++j) eps.eps_z(i, j) = rng.next_gaussian();
  }
  eps.eps_beta = rng.gaussians(global_dim);
  return eps;
}

LossGraph build_loss(ad::Tape& t, const Matrix& X, NetworkBundle& bundle,
                     const GenerativeConfig& config, const EpsDraws& eps) {
  const std::size_t B = X.rows;
  if (B == 0) throw ContractViolation("build_loss: empty group");
  const std::size_t d = bundle.dims.local_dim;
  const std::size_t g = bundle.dims.global_dim;
  const std::size_t K = bundle.dims.components;
  const std::size_t D = bundle.dims.data_dim;

  BundleVars vars = bind_bundle(t, bundle);

  // Per-sample encoder pass: features, q(z|x), sampled z, q(d|z), and the
  // global contribution.
  std::vector<ad::Var> xs(B), feat(B), z(B), pi(B), kl_d(B);
  std::vector<SplitGaussianVars> qz(B), contrib(B);
  for (std::size_t i = 0; i < B; ++i) {
    xs[i] = t.constant(X.row(i));
    feat[i] = ad::relu(t, mlp_raw_t(t, bundle.h, vars.h, xs[i]));
    qz[i] = split_gaussian_t(t, mlp_raw_t(t, bundle.phi_z, vars.phi_z, feat[i]), d);
    z[i] = reparameterize_t(t, qz[i], eps.eps_z.row(i));
    pi[i] = ad::softmax(t, mlp_raw_t(t, bundle.phi_d, vars.phi_d, z[i]));
    kl_d[i] = ad::add_const(t, ad::xlogx_sum(t, pi[i]), std::log(static_cast<double>(K)));
    contrib[i] = split_gaussian_t(
        t, mlp_raw_t(t, bundle.phi_beta, vars.phi_beta, ad::concat(t, feat[i], pi[i])), g);
  }

  // Product of experts over the contributions (precisions add).
  std::vector<ad::Var> lambdas(B), weighted(B);
  for (std::size_t i = 0; i < B; ++i) {
    lambdas[i] = ad::vexp(t, ad::neg(t, contrib[i].log_var));
    weighted[i] = ad::mul(t, lambdas[i], contrib[i].mean);
  }
  ad::Var lambda_sum = ad::add_many(t, lambdas);
  SplitGaussianVars qbeta{
      ad::div(t, ad::add_many(t, weighted), lambda_sum),
      ad::clampv(t, ad::neg(t, ad::vlog(t, lambda_sum)), kLogVarMin, kLogVarMax)};
  ad::Var beta = reparameterize_t(t, qbeta, eps.eps_beta);

  // Component priors p(z | k, beta), shared by the whole group.
  std::vector<SplitGaussianVars> pz(K);
  for (std::size_t k = 0; k < K; ++k) {
    pz[k] = split_gaussian_t(t, mlp_raw_t(t, bundle.theta_z[k], vars.theta_z[k], beta), d);
  }

  // Local terms.
  const double lv_x = config.likelihood_log_var();
  const double recon_const = static_cast<double>(D) * (-0.5 * kLn2Pi - 0.5 * lv_x);
  std::vector<ad::Var> recon(B), kl_z(B), totals(B);
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var decoded =
        ad::sigmoid(t, mlp_raw_t(t, bundle.theta_x, vars.theta_x, ad::concat(t, z[i], beta)));
    ad::Var sq = ad::sum(t, ad::square(t, ad::sub(t, xs[i], decoded)));
    recon[i] = ad::add_const(t, ad::scale(t, sq, -0.5 * std::exp(-lv_x)), recon_const);

    std::vector<ad::Var> kls(K);
    for (std::size_t k = 0; k < K; ++k) {
      kls[k] = kl_gaussian_t(t, qz[i].mean, qz[i].log_var, pz[k].mean, pz[k].log_var);
    }
    kl_z[i] = ad::weighted_sum(t, pi[i], kls);
    totals[i] = ad::sub(t, ad::sub(t, recon[i], kl_z[i]), kl_d[i]);
  }

  ad::Var zeros = t.constant(Vec(g, 0.0));
  ad::Var kl_beta = kl_gaussian_t(t, qbeta.mean, qbeta.log_var, zeros, zeros);
  ad::Var elbo = ad::sub(t, ad::add_many(t, totals), kl_beta);
  ad::Var loss_node = ad::scale(t, elbo, -1.0 / static_cast<double>(B));

  LossGraph result{loss_node, elbo, {}};
  result.breakdown.per_sample.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    PerSampleTerms terms{t.scalar_val(recon[i]), t.scalar_val(kl_z[i]), t.scalar_val(kl_d[i])};
    result.breakdown.recon += terms.recon;
    result.breakdown.kl_z += terms.kl_z;
    result.breakdown.kl_d += terms.kl_d;
    result.breakdown.per_sample.push_back(terms);
  }
  result.breakdown.kl_beta = t.scalar_val(kl_beta);
  result.breakdown.elbo = t.scalar_val(elbo);
  return result;
}

LossGraph loss(ad::Tape& tape, const Matrix& X, NetworkBundle& bundle,
               const GenerativeConfig& config, RngStream& rng) {
  EpsDraws eps =
      EpsDraws::draw(X.rows, bundle.dims.local_dim, bundle.dims.global_dim, rng);
  LossGraph graph = build_loss(tape, X, bundle, config, eps);
  if (!std::isfinite(graph.breakdown.elbo)) {
    throw TrainingDivergence("objective evaluated non-finite", graph.breakdown);
  }
  return graph;
}

}  // namespace ugvae
