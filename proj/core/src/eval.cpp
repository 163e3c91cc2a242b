#include "ugvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ugvae/errors.hpp"
#include "ugvae/parallel.hpp"

namespace ugvae {
namespace {

void infer_image_shape(InterpolationGrid& grid, std::size_t data_dim) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(data_dim))));
  if (side * side == data_dim) {
    grid.img_h = grid.img_w = side;
  } else {
    grid.img_h = 1;
    grid.img_w = data_dim;
  }
}

// Endpoint-exact linear interpolation.
double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

Vec lerp_vec(const Vec& a, const Vec& b, double t) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lerp(a[i], b[i], t);
  return out;
}

// Cyclic Jacobi diagonalization of a symmetric matrix. Returns eigenvalues
// (in `diag`) and accumulated rotations (columns of `vecs`).
void jacobi_eigen_sym(Matrix a, Vec& diag, Matrix& vecs) {
  const std::size_t n = a.rows;
  vecs = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) vecs(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-28) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = vecs(i, p), viq = vecs(i, q);
          vecs(i, p) = c * vip - s * viq;
          vecs(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  diag.resize(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

InterpolationGrid sample_grid(const NetworkBundle& bundle, const GenerativeConfig& config,
                              std::size_t k, std::size_t steps_beta, std::size_t steps_z) {
  if (k >= bundle.dims.components) {
    throw ContractViolation("sample_grid: component " + std::to_string(k) + " out of range");
  }
  if (steps_beta < 2 || steps_z < 2) {
    throw ContractViolation("sample_grid: need at least 2 steps per axis");
  }
  const std::size_t g = bundle.dims.global_dim;
  const std::size_t d = bundle.dims.local_dim;

  InterpolationGrid grid;
  grid.rows = steps_beta;
  grid.cols = steps_z;
  grid.component = k;
  grid.images = Matrix(steps_beta * steps_z, bundle.dims.data_dim);
  infer_image_shape(grid, bundle.dims.data_dim);
  grid.beta_start = Vec(g, -1.0);
  grid.beta_end = Vec(g, 1.0);

  parallel_for(steps_beta, [&](std::size_t r) {
    const double tr = static_cast<double>(r) / static_cast<double>(steps_beta - 1);
    const Vec beta(g, lerp(-1.0, 1.0, tr));
    const Vec mu_z = split_gaussian_head(bundle.theta_z[k].raw(beta)).mean;
    for (std::size_t c = 0; c < steps_z; ++c) {
      const double tc = static_cast<double>(c) / static_cast<double>(steps_z - 1);
      Vec z(d);
      for (std::size_t j = 0; j < d; ++j) z[j] = mu_z[j] + lerp(-3.0, 3.0, tc);
      if (r == 0 && c == 0) grid.z_start = z;
      if (r == 0 && c + 1 == steps_z) grid.z_end = z;
      const Vec img = decode_x(z, beta, bundle, config).mean;
      std::copy(img.begin(), img.end(), grid.images.row(r * steps_z + c).begin());
    }
  });
  return grid;
}

InterpolationGrid cross_interpolation(const NetworkBundle& bundle, const GenerativeConfig& config,
                                      const Matrix& batch_a, const Matrix& batch_b,
                                      std::size_t sample_a, std::size_t sample_b,
                                      std::size_t steps, RngStream& rng) {
  if (batch_a.rows == 0 || batch_b.rows == 0) {
    throw ContractViolation("cross_interpolation: empty batch");
  }
  if (sample_a >= batch_a.rows || sample_b >= batch_b.rows) {
    throw ContractViolation("cross_interpolation: sample index out of range");
  }
  if (steps < 2) throw ContractViolation("cross_interpolation: need at least 2 steps");

  // Common random numbers: both batches are inferred with the same derived
  // stream, so identical batches produce identical posteriors.
  RngStream rng_a = rng.substream(0);
  RngStream rng_b = rng.substream(0);
  const Vec beta1 = infer_group(batch_a, bundle, rng_a).qbeta.mean;
  const Vec beta2 = infer_group(batch_b, bundle, rng_b).qbeta.mean;
  const Vec z1 = encode_z(batch_a.row(sample_a), bundle).mean;
  const Vec z2 = encode_z(batch_b.row(sample_b), bundle).mean;

  InterpolationGrid grid;
  grid.rows = grid.cols = steps;
  grid.images = Matrix(steps * steps, bundle.dims.data_dim);
  infer_image_shape(grid, bundle.dims.data_dim);
  grid.beta_start = beta1;
  grid.beta_end = beta2;
  grid.z_start = z1;
  grid.z_end = z2;

  parallel_for(steps, [&](std::size_t r) {
    const double tr = static_cast<double>(r) / static_cast<double>(steps - 1);
    const Vec beta = lerp_vec(beta1, beta2, tr);
    for (std::size_t c = 0; c < steps; ++c) {
      const double tc = static_cast<double>(c) / static_cast<double>(steps - 1);
      const Vec z = lerp_vec(z1, z2, tc);
      const Vec img = decode_x(z, beta, bundle, config).mean;
      std::copy(img.begin(), img.end(), grid.images.row(r * steps + c).begin());
    }
  });
  return grid;
}

Pca fit_pca2(const Matrix& points) {
  if (points.rows < 3) {
    throw ContractViolation("fit_pca2: need at least 3 points, got " +
                            std::to_string(points.rows));
  }
  const std::size_t n = points.rows;
  const std::size_t g = points.cols;

  Pca pca;
  pca.center.assign(g, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < g; ++j) pca.center[j] += points(i, j);
  }
  for (auto& c : pca.center) c /= static_cast<double>(n);

  Matrix cov(g, g);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < g; ++a) {
      const double da = points(i, a) - pca.center[a];
      for (std::size_t b = a; b < g; ++b) {
        cov(a, b) += da * (points(i, b) - pca.center[b]);
      }
    }
  }
  for (std::size_t a = 0; a < g; ++a) {
    for (std::size_t b = a; b < g; ++b) {
      cov(a, b) /= static_cast<double>(n - 1);
      cov(b, a) = cov(a, b);
    }
  }

  Vec eigenvalues;
  Matrix vecs;
  jacobi_eigen_sym(cov, eigenvalues, vecs);

  // top-2 by eigenvalue, stable on ties
  std::vector<std::size_t> order(g);
  for (std::size_t i = 0; i < g; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&eigenvalues](std::size_t a, std::size_t b) {
                     return eigenvalues[a] > eigenvalues[b];
                   });

  pca.axes = Matrix(g, 2);
  for (std::size_t col = 0; col < 2; ++col) {
    const std::size_t src = order[col];
    // sign convention: largest-magnitude entry positive
    std::size_t arg = 0;
    for (std::size_t i = 1; i < g; ++i) {
      if (std::abs(vecs(i, src)) > std::abs(vecs(arg, src))) arg = i;
    }
    const double sign = vecs(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < g; ++i) pca.axes(i, col) = sign * vecs(i, src);
  }
  return pca;
}

std::pair<double, double> pca_project(const Pca& pca, std::span<const double> x) {
  double p1 = 0.0, p2 = 0.0;
  for (std::size_t i = 0; i < pca.center.size(); ++i) {
    const double c = x[i] - pca.center[i];
    p1 += c * pca.axes(i, 0);
    p2 += c * pca.axes(i, 1);
  }
  return {p1, p2};
}

EmbedResult embed_batches(const NetworkBundle& bundle,
                          const std::vector<std::pair<std::string, Matrix>>& batches,
                          RngStream& rng, std::size_t samples_per_batch) {
  EmbedResult result;
  Matrix means(batches.size(), bundle.dims.global_dim);
  // Every batch is inferred with the same derived stream (common random
  // numbers): identical batches map to identical embeddings, and between-batch
  // differences reflect the data rather than the noise draw.
  const RngStream shared = rng.substream(0);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    RngStream batch_rng = shared;
    const GroupPosterior post = infer_group(batches[b].second, bundle, batch_rng);
    std::copy(post.qbeta.mean.begin(), post.qbeta.mean.end(), means.row(b).begin());
    result.points.push_back(BatchEmbedding{batches[b].first, post.qbeta.mean, 0.0, 0.0, false});
    for (std::size_t s = 0; s < samples_per_batch; ++s) {
      result.points.push_back(
          BatchEmbedding{batches[b].first, reparameterize(post.qbeta, batch_rng), 0.0, 0.0, true});
    }
  }
  result.pca = fit_pca2(means);
  for (auto& point : result.points) {
    std::tie(point.pc1, point.pc2) = pca_project(result.pca, point.beta);
  }
  return result;
}

ProbeReport classify_embeddings(const std::vector<LabeledPoint>& train,
                                const std::vector<LabeledPoint>& test,
                                const ProbeConfig& config) {
  if (train.empty()) throw ContractViolation("classify_embeddings: empty training set");
  ProbeReport report;
  for (const auto& p : train) {
    if (std::find(report.classes.begin(), report.classes.end(), p.label) ==
        report.classes.end()) {
      report.classes.push_back(p.label);
    }
  }
  std::sort(report.classes.begin(), report.classes.end());
  if (report.classes.size() < 2) {
    throw ContractViolation("classify_embeddings: need at least 2 classes");
  }
  const std::size_t C = report.classes.size();
  const std::size_t F = train.front().x.size();
  auto class_index = [&report](const std::string& label) {
    const auto it = std::find(report.classes.begin(), report.classes.end(), label);
    if (it == report.classes.end()) {
      throw ContractViolation("classify_embeddings: label \"" + label + "\" unseen in training");
    }
    return static_cast<std::size_t>(it - report.classes.begin());
  };

  Matrix w(C, F);  // zero init
  Vec bias(C, 0.0);
  Vec logits(C), probs(C);
  Matrix gw(C, F);
  Vec gb(C);

  auto forward = [&](const Vec& x) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = bias[c];
      for (std::size_t f = 0; f < F; ++f) acc += w(c, f) * x[f];
      logits[c] = acc;
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      probs[c] = std::exp(logits[c] - m);
      z += probs[c];
    }
    for (auto& p : probs) p /= z;
  };

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::fill(gw.data.begin(), gw.data.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (const auto& p : train) {
      forward(p.x);
      const std::size_t y = class_index(p.label);
      for (std::size_t c = 0; c < C; ++c) {
        const double delta = probs[c] - (c == y ? 1.0 : 0.0);
        gb[c] += delta;
        for (std::size_t f = 0; f < F; ++f) gw(c, f) += delta * p.x[f];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (std::size_t c = 0; c < C; ++c) {
      bias[c] -= config.learning_rate * gb[c] * inv_n;
      for (std::size_t f = 0; f < F; ++f) {
        w(c, f) -= config.learning_rate * (gw(c, f) * inv_n + config.l2 * w(c, f));
      }
    }
  }

  auto accuracy = [&](const std::vector<LabeledPoint>& points) {
    if (points.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& p : points) {
      forward(p.x);
      const std::size_t pred =
          static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      if (pred == class_index(p.label)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(points.size());
  };

  report.n_train = train.size();
  report.n_test = test.size();
  report.train_accuracy = accuracy(train);
  report.test_accuracy = accuracy(test);
  return report;
}

void write_pgm_grid(const InterpolationGrid& grid, const std::filesystem::path& path) {
  if (grid.img_h * grid.img_w != grid.images.cols) {
    throw ContractViolation("write_pgm_grid: tile shape does not match image dimension");
  }
  const std::size_t width = grid.cols * grid.img_w + (grid.cols - 1);
  const std::size_t height = grid.rows * grid.img_h + (grid.rows - 1);

  std::string bytes(width * height, static_cast<char>(0xFF));  // white separators
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      auto img = grid.images.row(r * grid.cols + c);
      const std::size_t y0 = r * (grid.img_h + 1);
      const std::size_t x0 = c * (grid.img_w + 1);
      for (std::size_t y = 0; y < grid.img_h; ++y) {
        for (std::size_t x = 0; x < grid.img_w; ++x) {
          const double v = std::clamp(img[y * grid.img_w + x], 0.0, 1.0);
          bytes[(y0 + y) * width + (x0 + x)] =
              static_cast<char>(static_cast<int>(std::floor(v * 255.0 + 0.5)));
        }
      }
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_embedding_csv(const EmbedResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  const std::size_t g = result.points.empty() ? 0 : result.points.front().beta.size();
  out << "tag,pc1,pc2";
  for (std::size_t i = 0; i < g; ++i) out << ",b" << i;
  out << "\n";
  for (const auto& point : result.points) {
    out << point.tag << "," << fmt_double(point.pc1) << "," << fmt_double(point.pc2);
    for (double v : point.beta) out << "," << fmt_double(v);
    out << "\n";
  }
}

std::vector<BatchEmbedding> read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty embedding CSV " + path.string(), 0);
  if (line.rfind("tag,pc1,pc2", 0) != 0) {
    throw FormatError("bad embedding CSV header in " + path.string(), 0);
  }
  std::vector<BatchEmbedding> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    BatchEmbedding point;
    if (!std::getline(ss, point.tag, ',')) {
      throw FormatError("bad embedding CSV row " + std::to_string(lineno), 0);
    }
    std::vector<double> values;
    while (std::getline(ss, field, ',')) values.push_back(std::stod(field));
    if (values.size() < 3) {
      throw FormatError("embedding CSV row " + std::to_string(lineno) + " too short", 0);
    }
    point.pc1 = values[0];
    point.pc2 = values[1];
    point.beta.assign(values.begin() + 2, values.end());
    out.push_back(std::move(point));
  }
  return out;
}

std::vector<LabeledPoint> embedding_points(const std::vector<BatchEmbedding>& embeddings) {
  std::vector<LabeledPoint> out;
  out.reserve(embeddings.size());
  for (const auto& e : embeddings) out.push_back(LabeledPoint{e.tag, e.beta});
  return out;
}

}  // namespace ugvae
