#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "ugvae/errors.hpp"
#include "ugvae/eval.hpp"
#include "ugvae/parallel.hpp"
#include "ugvae/trainer.hpp"

using namespace ugvae;
namespace fs = std::filesystem;

namespace {

const BundleDims kDims{16, 2, 3, 4, 8};

GenerativeConfig config_for(const BundleDims& dims, std::size_t B = 8) {
  return GenerativeConfig{dims, 0.2, B};
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ugvae_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("sample_grid geometry and endpoint identities") {
  NetworkBundle bundle = test_util::random_bundle(kDims, 3);
  const GenerativeConfig config = config_for(kDims);

  const InterpolationGrid grid = sample_grid(bundle, config, 1, 7, 7);
  CHECK(grid.rows == 7);
  CHECK(grid.cols == 7);
  CHECK(grid.images.rows == 49);
  CHECK(grid.component == 1);
  CHECK(grid.img_h == 4);
  CHECK(grid.img_w == 4);

  // center cell: beta = 0, z = mu_z(0)
  const Vec beta0(3, 0.0);
  const Vec mu_z = split_gaussian_head(bundle.theta_z[1].raw(beta0)).mean;
  const Vec center = decode_x(mu_z, beta0, bundle, config).mean;
  const auto cell = grid.images.row(3 * 7 + 3);
  for (std::size_t j = 0; j < center.size(); ++j) {
    CHECK(cell[j] == doctest::Approx(center[j]).epsilon(1e-12));
  }

  // corner (0,0): beta = -1, z = mu_z(-1) - 3
  const Vec beta_lo(3, -1.0);
  Vec z_lo = split_gaussian_head(bundle.theta_z[1].raw(beta_lo)).mean;
  for (auto& v : z_lo) v -= 3.0;
  const Vec corner = decode_x(z_lo, beta_lo, bundle, config).mean;
  const auto cell00 = grid.images.row(0);
  for (std::size_t j = 0; j < corner.size(); ++j) {
    CHECK(cell00[j] == doctest::Approx(corner[j]).epsilon(1e-12));
  }

  // decoder means live in (0,1)
  for (double v : grid.images.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  CHECK_THROWS_AS((void)sample_grid(bundle, config, 4, 7, 7), ContractViolation);
  CHECK_THROWS_AS((void)sample_grid(bundle, config, 0, 1, 7), ContractViolation);
}

TEST_CASE("sample_grid: zero weights give a uniform gray grid; K=1 renders") {
  NetworkBundle zero = test_util::zero_bundle(kDims);
  const InterpolationGrid gray = sample_grid(zero, config_for(kDims), 0, 3, 3);
  for (double v : gray.images.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  BundleDims one = kDims;
  one.components = 1;
  NetworkBundle k1 = test_util::random_bundle(one, 5);
  const InterpolationGrid g1 = sample_grid(k1, config_for(one), 0, 7, 7);
  CHECK(g1.images.rows == 49);
}

TEST_CASE("cross_interpolation endpoints and the degenerate constant grid") {
  NetworkBundle bundle = test_util::random_bundle(kDims, 11);
  const GenerativeConfig config = config_for(kDims);
  const Matrix batch_a = test_util::random_matrix(8, 16, 1);
  const Matrix batch_b = test_util::random_matrix(8, 16, 2);

  RngStream rng(21);
  const InterpolationGrid grid =
      cross_interpolation(bundle, config, batch_a, batch_b, 2, 5, 5, rng);

  // corner (0,0) decodes (z1, beta1) exactly
  const Vec corner = decode_x(grid.z_start, grid.beta_start, bundle, config).mean;
  const auto cell00 = grid.images.row(0);
  for (std::size_t j = 0; j < corner.size(); ++j) CHECK(cell00[j] == corner[j]);

  // corner (rows-1, cols-1) decodes (z2, beta2) exactly
  const Vec far = decode_x(grid.z_end, grid.beta_end, bundle, config).mean;
  const auto cell_far = grid.images.row(24);
  for (std::size_t j = 0; j < far.size(); ++j) CHECK(cell_far[j] == far[j]);

  // z endpoints are the encoded means of the chosen samples
  CHECK(grid.z_start == encode_z(batch_a.row(2), bundle).mean);
  CHECK(grid.z_end == encode_z(batch_b.row(5), bundle).mean);

  // identical batches and identical sample index -> constant grid
  RngStream rng2(21);
  const InterpolationGrid flat =
      cross_interpolation(bundle, config, batch_a, batch_a, 2, 2, 4, rng2);
  for (std::size_t cell = 1; cell < flat.images.rows; ++cell) {
    for (std::size_t j = 0; j < flat.images.cols; ++j) {
      CHECK(flat.images(cell, j) == doctest::Approx(flat.images(0, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-domain model: brightness moves monotonically along the beta axis") {
  // domains identical except for the ground-truth gain
  SyntheticConfig bright;
  bright.n_groups = 40;
  bright.group_size = 16;
  bright.n_classes = 2;
  bright.allowed_styles = {2};  // gain 1.0, normal
  bright.seed = 1;
  SyntheticConfig dark = bright;
  dark.allowed_styles = {0};  // gain 0.4, normal
  dark.seed = 2;
  const Dataset a = make_synthetic(bright);
  const Dataset b = make_synthetic(dark);

  TrainConfig config;
  config.epochs = 8;
  config.group_size = 32;
  config.dims = BundleDims{kSyntheticDim, 2, 2, 2, 32};
  config.seed = 6;
  const TrainResult result = train(a, config, {}, &b);

  // domain-pure evaluation batches
  RngStream rng(12);
  Matrix batch_a = gather(a, random_groups(a, 32, rng).front());
  Matrix batch_b = gather(b, random_groups(b, 32, rng).front());

  RngStream interp_rng(13);
  const InterpolationGrid grid = cross_interpolation(result.bundle, config.generative(), batch_a,
                                                     batch_b, 0, 0, 7, interp_rng);

  // row means: beta walks from the bright-domain posterior to the dark one
  Vec row_brightness(7, 0.0);
  for (std::size_t r = 0; r < 7; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      auto img = grid.images.row(r * 7 + c);
      for (double v : img) acc += v;
    }
    row_brightness[r] = acc / double(7 * kSyntheticDim);
  }
  // the beta axis carries the gain factor: endpoints differ and every step
  // moves the same way
  CHECK(std::abs(row_brightness.front() - row_brightness.back()) > 0.01);
  const bool increasing = row_brightness.back() > row_brightness.front();
  for (std::size_t r = 1; r < 7; ++r) {
    if (increasing) {
      CHECK(row_brightness[r] >= row_brightness[r - 1] - 1e-6);
    } else {
      CHECK(row_brightness[r] <= row_brightness[r - 1] + 1e-6);
    }
  }
}

TEST_CASE("fit_pca2: orthonormal axes, dominant direction, rank error") {
  // dominant x-variance point set
  Matrix pts(4, 2);
  pts(0, 0) = 1.0;
  pts(1, 0) = -1.0;
  pts(2, 1) = 0.01;
  pts(3, 1) = -0.01;
  const Pca pca = fit_pca2(pts);
  CHECK(std::abs(pca.axes(0, 0)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pca.axes(0, 0) > 0.0);  // sign fix
  CHECK(std::abs(pca.axes(1, 1)) == doctest::Approx(1.0).epsilon(1e-9));

  // P^T P = I within 1e-10 on a random cloud
  const Matrix cloud = test_util::random_matrix(40, 6, 13, -2.0, 2.0);
  const Pca pr = fit_pca2(cloud);
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 2; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 6; ++i) dot += pr.axes(i, a) * pr.axes(i, b);
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
    }
  }

  Matrix two(2, 3);
  CHECK_THROWS_AS((void)fit_pca2(two), ContractViolation);
}

TEST_CASE("pca projection preserves the ordering of collinear inputs") {
  Matrix line(5, 4);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) line(i, j) = double(i) * (j + 1.0);
  }
  const Pca pca = fit_pca2(line);
  Vec pc1(5);
  for (std::size_t i = 0; i < 5; ++i) pc1[i] = pca_project(pca, line.row(i)).first;
  for (std::size_t i = 1; i < 5; ++i) {
    CHECK(std::abs(pc1[i] - pc1[i - 1]) > 0.0);
    CHECK((pc1[i] > pc1[i - 1]) == (pc1[1] > pc1[0]));  // monotone along the line
  }
}

TEST_CASE("embed_batches: identical batches map to identical embeddings") {
  NetworkBundle bundle = test_util::random_bundle(kDims, 31);
  const Matrix batch = test_util::random_matrix(6, 16, 7);
  const Matrix other = test_util::random_matrix(6, 16, 8);

  RngStream rng(5);
  const EmbedResult result = embed_batches(
      bundle, {{"a", batch}, {"b", other}, {"a2", batch}}, rng);
  REQUIRE(result.points.size() == 3);
  CHECK(result.points[0].beta == result.points[2].beta);
  CHECK(result.points[0].pc1 == result.points[2].pc1);
  CHECK(result.points[0].pc2 == result.points[2].pc2);
  CHECK(result.points[0].beta != result.points[1].beta);

  // sampled rows are flagged and share the batch tag
  RngStream rng2(5);
  const EmbedResult sampled = embed_batches(
      bundle, {{"a", batch}, {"b", other}, {"c", batch}}, rng2, 2);
  CHECK(sampled.points.size() == 9);
  CHECK(sampled.points[1].is_sample);
  CHECK(sampled.points[1].tag == "a");
}

TEST_CASE("classify_embeddings: separable clouds, null band, error paths") {
  RngStream rng(17);
  auto cloud = [&rng](double center, const std::string& label, std::size_t n) {
    std::vector<LabeledPoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
      Vec x(4);
      for (auto& v : x) v = center + rng.next_gaussian();
      pts.push_back(LabeledPoint{label, x});
    }
    return pts;
  };

  std::vector<LabeledPoint> train = cloud(5.0, "hi", 30);
  const std::vector<LabeledPoint> lo = cloud(-5.0, "lo", 30);
  train.insert(train.end(), lo.begin(), lo.end());
  std::vector<LabeledPoint> test = cloud(5.0, "hi", 10);
  const std::vector<LabeledPoint> lo_test = cloud(-5.0, "lo", 10);
  test.insert(test.end(), lo_test.begin(), lo_test.end());

  const ProbeReport report = classify_embeddings(train, test);
  CHECK(report.test_accuracy == 1.0);
  CHECK(report.train_accuracy == 1.0);
  CHECK(report.classes == std::vector<std::string>{"hi", "lo"});

  // deterministic
  const ProbeReport again = classify_embeddings(train, test);
  CHECK(again.test_accuracy == report.test_accuracy);

  // permutation null: shuffled balanced labels stay inside [0.35, 0.65]
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream null_rng(seed);
    auto noise = [&null_rng](std::size_t n) {
      std::vector<LabeledPoint> pts;
      for (std::size_t i = 0; i < n; ++i) {
        Vec x(4);
        for (auto& v : x) v = null_rng.next_gaussian();
        pts.push_back(LabeledPoint{i % 2 == 0 ? "a" : "b", x});
      }
      return pts;
    };
    const auto null_train = noise(60);
    const auto null_test = noise(60);
    const ProbeReport null_report = classify_embeddings(null_train, null_test);
    CHECK(null_report.test_accuracy >= 0.35);
    CHECK(null_report.test_accuracy <= 0.65);
  }

  const std::vector<LabeledPoint> single = cloud(0.0, "only", 10);
  CHECK_THROWS_AS((void)classify_embeddings(single, single), ContractViolation);
}

TEST_CASE("write_pgm_grid: exact header and bytes") {
  const fs::path dir = temp_dir("pgm");

  // 1x1 grid of a constant 0.5 image -> every payload byte is 128
  InterpolationGrid tiny;
  tiny.rows = tiny.cols = 1;
  tiny.img_h = tiny.img_w = 8;
  tiny.images = Matrix(1, 64, 0.5);
  write_pgm_grid(tiny, dir / "tiny.pgm");
  const std::string bytes = slurp(dir / "tiny.pgm");
  const std::string header = "P5\n8 8\n255\n";
  REQUIRE(bytes.size() == header.size() + 64);
  CHECK(bytes.substr(0, header.size()) == header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) {
    CHECK(std::uint8_t(bytes[i]) == 128);
  }

  // 7x7 grid of 28x28 tiles: header P5\n202 202\n255\n
  InterpolationGrid mnist_like;
  mnist_like.rows = mnist_like.cols = 7;
  mnist_like.img_h = mnist_like.img_w = 28;
  mnist_like.images = Matrix(49, 784, 0.25);
  write_pgm_grid(mnist_like, dir / "grid.pgm");
  const std::string grid_bytes = slurp(dir / "grid.pgm");
  const std::string grid_header = "P5\n202 202\n255\n";
  CHECK(grid_bytes.substr(0, grid_header.size()) == grid_header);
  CHECK(grid_bytes.size() == grid_header.size() + 202 * 202);

  // separators are white (255)
  const std::size_t row_off = grid_header.size() + 28;  // first separator column
  CHECK(std::uint8_t(grid_bytes[row_off]) == 255);
}

TEST_CASE("UGVAE_THREADS: validated cap, parallel grid equals serial grid") {
  unsetenv("UGVAE_THREADS");
  CHECK(worker_count() == 1);
  setenv("UGVAE_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("UGVAE_THREADS", "banana", 1);
  CHECK_THROWS_AS((void)worker_count(), ContractViolation);
  setenv("UGVAE_THREADS", "0", 1);
  CHECK_THROWS_AS((void)worker_count(), ContractViolation);

  NetworkBundle bundle = test_util::random_bundle(kDims, 3);
  const GenerativeConfig config = config_for(kDims);
  unsetenv("UGVAE_THREADS");
  const InterpolationGrid serial = sample_grid(bundle, config, 0, 5, 5);
  setenv("UGVAE_THREADS", "4", 1);
  const InterpolationGrid parallel = sample_grid(bundle, config, 0, 5, 5);
  unsetenv("UGVAE_THREADS");
  CHECK(serial.images.data == parallel.images.data);
}

TEST_CASE("embedding CSV round-trips; row count equals batch count") {
  const fs::path dir = temp_dir("csv");
  NetworkBundle bundle = test_util::random_bundle(kDims, 1);
  std::vector<std::pair<std::string, Matrix>> batches;
  for (int i = 0; i < 5; ++i) {
    batches.emplace_back("tag" + std::to_string(i), test_util::random_matrix(4, 16, 50 + i));
  }
  RngStream rng(2);
  const EmbedResult result = embed_batches(bundle, batches, rng);
  write_embedding_csv(result, dir / "emb.csv");

  const std::string text = slurp(dir / "emb.csv");
  CHECK(text.rfind("tag,pc1,pc2,b0,b1,b2\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);  // header + 5 rows

  const auto loaded = read_embedding_csv(dir / "emb.csv");
  REQUIRE(loaded.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(loaded[i].tag == result.points[i].tag);
    CHECK(loaded[i].pc1 == result.points[i].pc1);
    CHECK(loaded[i].beta == result.points[i].beta);
  }

  CHECK_THROWS_AS((void)read_embedding_csv(dir / "missing.csv"), FormatError);
}
