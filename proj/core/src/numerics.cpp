#include "ugvae/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ugvae/errors.hpp"

namespace ugvae {
namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractViolation(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                            " vs " + std::to_string(b) + ")");
  }
}

// Neumaier compensated accumulator.
struct KahanSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  double get() const { return sum + c; }
};

}  // namespace

Vec DiagGaussian::variance() const {
  Vec v(log_var.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(log_var[i]);
  return v;
}

CategoricalDist CategoricalDist::uniform(std::size_t k) {
  return {Vec(k, 1.0 / static_cast<double>(k))};
}

void clamp_log_var(Vec& log_var) {
  for (auto& v : log_var) v = std::clamp(v, kLogVarMin, kLogVarMax);
}

double gaussian_log_density(std::span<const double> x, const DiagGaussian& g) {
  require_same_dim(x.size(), g.dim(), "gaussian_log_density");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - g.mean[i];
    acc += -0.5 * kLn2Pi - 0.5 * g.log_var[i] - 0.5 * diff * diff * std::exp(-g.log_var[i]);
  }
  return acc;
}

double kl_gaussian_diag(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "kl_gaussian_diag");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double dlv = p.log_var[i] - q.log_var[i];
    const double dmu = q.mean[i] - p.mean[i];
    acc += 0.5 * (dlv + std::exp(-dlv) + dmu * dmu * std::exp(-p.log_var[i]) - 1.0);
  }
  return acc;
}

double kl_categorical(const CategoricalDist& q, const CategoricalDist& p) {
  require_same_dim(q.size(), p.size(), "kl_categorical");
  double acc = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q.probs[k] <= 0.0) continue;
    if (p.probs[k] <= 0.0) {
      throw InfiniteDivergence("kl_categorical: q places mass on component " + std::to_string(k) +
                               " where p is zero");
    }
    acc += q.probs[k] * std::log(q.probs[k] / p.probs[k]);
  }
  return acc;
}

DiagGaussian product_of_diag_gaussians(std::span<const DiagGaussian> contribs) {
  if (contribs.empty()) {
    throw ContractViolation("product_of_diag_gaussians: empty contribution sequence");
  }
  const std::size_t n = contribs.front().dim();
  for (const auto& c : contribs) require_same_dim(c.dim(), n, "product_of_diag_gaussians");

  DiagGaussian out;
  out.mean.resize(n);
  out.log_var.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    KahanSum precision;
    KahanSum weighted_mean;
    for (const auto& c : contribs) {
      const double lambda = std::exp(-c.log_var[i]);
      precision.add(lambda);
      weighted_mean.add(lambda * c.mean[i]);
    }
    out.mean[i] = weighted_mean.get() / precision.get();
    out.log_var[i] = -std::log(precision.get());
  }
  clamp_log_var(out.log_var);
  return out;
}

Vec reparameterize(const DiagGaussian& g, RngStream& rng) {
  Vec out(g.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * rng.next_gaussian();
  }
  return out;
}

std::size_t sample_categorical(const CategoricalDist& c, RngStream& rng) {
  const double u = rng.next_double();
  double acc = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    acc += c.probs[k];
    if (u < acc) return k;
  }
  return c.size() - 1;
}

}  // namespace ugvae
