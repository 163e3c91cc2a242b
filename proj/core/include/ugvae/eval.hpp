#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ugvae/generative.hpp"
#include "ugvae/inference.hpp"
#include "ugvae/matrix.hpp"
#include "ugvae/nets.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

/// Grid of decoder means: rows traverse the global latent, columns the local
/// latent. z_start/z_end record the column path of the first row.
struct InterpolationGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t img_h = 0;
  std::size_t img_w = 0;
  Matrix images;  // (rows * cols) x D, row-major cell order
  std::size_t component = 0;
  Vec beta_start, beta_end;
  Vec z_start, z_end;
};

// Prior-space grid for one mixture component: rows walk beta diagonally from
// -1 to +1, columns walk z diagonally from mu_z(beta) - 3 to mu_z(beta) + 3,
// where mu_z is component k's prior mean.
InterpolationGrid sample_grid(const NetworkBundle& bundle, const GenerativeConfig& config,
                              std::size_t k, std::size_t steps_beta = 7, std::size_t steps_z = 7);

// Posterior-space grid between two batches: rows interpolate the aggregated
// posterior means beta_1 -> beta_2, columns the encoded means z_a -> z_b of
// the chosen samples. The discrete variable plays no role here.
InterpolationGrid cross_interpolation(const NetworkBundle& bundle, const GenerativeConfig& config,
                                      const Matrix& batch_a, const Matrix& batch_b,
                                      std::size_t sample_a, std::size_t sample_b,
                                      std::size_t steps, RngStream& rng);

/// Rank-2 orthonormal projection fitted on pooled embedding means.
struct Pca {
  Vec center;   // g
  Matrix axes;  // g x 2, orthonormal columns, eigenvalue-descending,
                // sign fixed so each column's largest-magnitude entry is positive
};

Pca fit_pca2(const Matrix& points);  // throws below 3 points
std::pair<double, double> pca_project(const Pca& pca, std::span<const double> x);

struct BatchEmbedding {
  std::string tag;
  Vec beta;  // posterior mean, or a posterior sample when is_sample
  double pc1 = 0.0;
  double pc2 = 0.0;
  bool is_sample = false;
};

struct EmbedResult {
  std::vector<BatchEmbedding> points;
  Pca pca;
};

// One aggregated-posterior mean per batch (plus samples_per_batch optional
// reparameterized draws each); PCA fitted on the means only.
EmbedResult embed_batches(const NetworkBundle& bundle,
                          const std::vector<std::pair<std::string, Matrix>>& batches,
                          RngStream& rng, std::size_t samples_per_batch = 0);

// --- linear probe over embeddings ---

struct LabeledPoint {
  std::string label;
  Vec x;
};

struct ProbeConfig {
  double learning_rate = 0.1;
  std::size_t iterations = 500;
  double l2 = 1e-4;
};

struct ProbeReport {
  std::vector<std::string> classes;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// L2-regularized multinomial logistic regression, full-batch gradient
// descent from zero init; deterministic.
ProbeReport classify_embeddings(const std::vector<LabeledPoint>& train,
                                const std::vector<LabeledPoint>& test,
                                const ProbeConfig& config = {});

// --- file outputs ---

// Binary PGM (P5, maxval 255) with 1px separators between tiles;
// pixel byte = round(clamp(v,0,1) * 255), round half up.
void write_pgm_grid(const InterpolationGrid& grid, const std::filesystem::path& path);

// CSV: tag,pc1,pc2,b0..b{g-1}; one row per embedding point.
void write_embedding_csv(const EmbedResult& result, const std::filesystem::path& path);
std::vector<BatchEmbedding> read_embedding_csv(const std::filesystem::path& path);

std::vector<LabeledPoint> embedding_points(const std::vector<BatchEmbedding>& embeddings);

}  // namespace ugvae
