#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "test_util.hpp"
#include "ugvae/errors.hpp"
#include "ugvae/trainer.hpp"

using namespace ugvae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ugvae_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset tiny_synth(std::uint64_t seed = 0, std::size_t n_groups = 10) {
  SyntheticConfig config;
  config.n_groups = n_groups;
  config.group_size = 16;
  config.n_classes = 2;
  config.seed = seed;
  return make_synthetic(config);
}

TrainConfig tiny_train_config() {
  TrainConfig config;
  config.epochs = 2;
  config.group_size = 16;
  config.dims = BundleDims{kSyntheticDim, 2, 2, 2, 8};
  config.seed = 11;
  return config;
}

bool bundles_equal(const NetworkBundle& a, const NetworkBundle& b) {
  std::vector<const ParamTensor*> ta, tb;
  a.for_each_tensor([&ta](const ParamTensor& t) { ta.push_back(&t); });
  b.for_each_tensor([&tb](const ParamTensor& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->values != tb[i]->values) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
  NetworkBundle bundle = test_util::random_bundle(BundleDims{8, 2, 2, 2, 4}, 5);
  NetworkBundle before = bundle;
  AdamOptimizer adam;
  adam.init(bundle);
  bundle.zero_grads();
  adam.step(bundle, TrainConfig{});
  CHECK(bundles_equal(bundle, before));
}

TEST_CASE("halving the learning rate halves the first-step delta") {
  const BundleDims dims{8, 2, 2, 2, 4};
  const Matrix X = test_util::random_matrix(4, 8, 3);
  GenerativeConfig gen{dims, 0.2, 4};

  auto one_step = [&](double lr) {
    NetworkBundle bundle = test_util::random_bundle(dims, 5);
    NetworkBundle before = bundle;
    RngStream rng(7);
    ad::Tape tape;
    const LossGraph graph = loss(tape, X, bundle, gen, rng);
    bundle.zero_grads();
    tape.backward(graph.loss);
    TrainConfig config;
    config.learning_rate = lr;
    AdamOptimizer adam;
    adam.init(bundle);
    adam.step(bundle, config);

    Vec deltas;
    std::vector<const ParamTensor*> ta, tb;
    bundle.for_each_tensor([&ta](const ParamTensor& t) { ta.push_back(&t); });
    before.for_each_tensor([&tb](const ParamTensor& t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i) {
      for (std::size_t j = 0; j < ta[i]->size(); ++j) {
        deltas.push_back(ta[i]->values[j] - tb[i]->values[j]);
      }
    }
    return deltas;
  };

  const Vec full = one_step(1e-3);
  const Vec half = one_step(5e-4);
  REQUIRE(full.size() == half.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (std::abs(full[i]) < 1e-14) continue;
    CHECK(half[i] / full[i] == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("training is bitwise deterministic per seed") {
  const Dataset dataset = tiny_synth();
  const TrainConfig config = tiny_train_config();

  const fs::path dir_a = temp_dir("det_a");
  const fs::path dir_b = temp_dir("det_b");
  (void)train(dataset, config, dir_a);
  (void)train(dataset, config, dir_b);

  CHECK(slurp(dir_a / "final.ckpt") == slurp(dir_b / "final.ckpt"));
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
  CHECK(slurp(dir_a / "final.ckpt.json") == slurp(dir_b / "final.ckpt.json"));
}

TEST_CASE("metrics cover every group of every epoch with the CSV header") {
  const Dataset dataset = tiny_synth();
  const TrainConfig config = tiny_train_config();
  const TrainResult result = train(dataset, config);

  const std::size_t groups_per_epoch = dataset.n() / config.group_size;
  CHECK(result.metrics.size() == groups_per_epoch * config.epochs);
  CHECK(result.metrics.front().step == 1);
  CHECK(result.metrics.back().step == result.metrics.size());
  CHECK(result.metrics.back().epoch == config.epochs);

  const std::string csv = metrics_to_csv(result.metrics);
  CHECK(csv.rfind("step,epoch,elbo,recon,kl_z,kl_d,kl_beta\n", 0) == 0);
}

TEST_CASE("checkpoint round-trips bitwise and rejects corruption") {
  const Dataset dataset = tiny_synth();
  TrainConfig config = tiny_train_config();
  config.epochs = 1;
  const fs::path dir = temp_dir("roundtrip");
  const TrainResult result = train(dataset, config, dir);

  const Checkpoint loaded = load_checkpoint(dir / "final.ckpt");
  REQUIRE(loaded.tensors.size() == result.checkpoint.tensors.size());
  for (std::size_t i = 0; i < loaded.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].name == result.checkpoint.tensors[i].name);
    CHECK(loaded.tensors[i].shape == result.checkpoint.tensors[i].shape);
    CHECK(loaded.tensors[i].values == result.checkpoint.tensors[i].values);
  }
  CHECK(loaded.step == result.checkpoint.step);

  // save(load(x)) is byte-identical
  save_checkpoint(dir / "resaved.ckpt", loaded);
  CHECK(slurp(dir / "final.ckpt") == slurp(dir / "resaved.ckpt"));

  // corrupt magic
  std::string bytes = slurp(dir / "final.ckpt");
  bytes[0] = 'X';
  std::ofstream(dir / "corrupt.ckpt", std::ios::binary).write(bytes.data(), bytes.size());
  std::ofstream(dir / "corrupt.ckpt.json") << slurp(dir / "final.ckpt.json");
  CHECK_THROWS_AS((void)load_checkpoint(dir / "corrupt.ckpt"), FormatError);

  // truncation
  std::ofstream(dir / "short.ckpt", std::ios::binary).write(bytes.data(), 40);
  std::ofstream(dir / "short.ckpt.json") << slurp(dir / "final.ckpt.json");
  CHECK_THROWS_AS((void)load_checkpoint(dir / "short.ckpt"), FormatError);
}

TEST_CASE("resume reproduces an uninterrupted run bitwise") {
  const Dataset dataset = tiny_synth();
  TrainConfig config = tiny_train_config();
  config.epochs = 3;
  config.checkpoint_interval = 2;

  const fs::path full_dir = temp_dir("resume_full");
  (void)train(dataset, config, full_dir);

  TrainConfig first = config;
  first.epochs = 2;
  const fs::path part_dir = temp_dir("resume_part");
  (void)train(dataset, first, part_dir);

  const Checkpoint mid = load_checkpoint(part_dir / "final.ckpt");
  const fs::path resumed_dir = temp_dir("resume_rest");
  (void)train(dataset, config, resumed_dir, nullptr, &mid);

  CHECK(slurp(full_dir / "final.ckpt") == slurp(resumed_dir / "final.ckpt"));
}

TEST_CASE("K=1 training logs kl_d = 0 at every step") {
  const Dataset dataset = tiny_synth();
  TrainConfig config = tiny_train_config();
  config.dims.components = 1;
  const TrainResult result = train(dataset, config);
  for (const auto& m : result.metrics) CHECK(m.kl_d == 0.0);
}

TEST_CASE("divergence aborts with a diagnostic breakdown and last_good checkpoint") {
  const Dataset dataset = tiny_synth();
  TrainConfig config = tiny_train_config();
  config.epochs = 3;

  // poison a checkpoint with an infinite parameter and resume from it
  const fs::path dir = temp_dir("diverge");
  TrainConfig one = config;
  one.epochs = 1;
  (void)train(dataset, one, dir);
  Checkpoint poisoned = load_checkpoint(dir / "final.ckpt");
  poisoned.tensors.front().values[0] = std::numeric_limits<double>::infinity();
  save_checkpoint(dir / "poisoned.ckpt", poisoned);
  const Checkpoint reloaded = load_checkpoint(dir / "poisoned.ckpt");

  const fs::path out = temp_dir("diverge_out");
  CHECK_THROWS_AS((void)train(dataset, config, out, nullptr, &reloaded), TrainingDivergence);
  CHECK(fs::exists(out / "last_good.ckpt"));
  CHECK(fs::exists(out / "metrics.csv"));
}

TEST_CASE("200 training steps raise the trailing ELBO mean above the initial one") {
  SyntheticConfig synth;
  synth.n_groups = 40;
  synth.group_size = 16;
  synth.n_classes = 2;
  synth.seed = 9;
  const Dataset dataset = make_synthetic(synth);  // 640 samples -> 10 groups/epoch at B=64

  TrainConfig config;
  config.epochs = 20;
  config.group_size = 64;
  config.dims = BundleDims{kSyntheticDim, 2, 2, 2, 16};
  config.seed = 4;
  const TrainResult result = train(dataset, config);
  REQUIRE(result.metrics.size() == 200);

  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += result.metrics[i].elbo;
    tail += result.metrics[result.metrics.size() - 1 - i].elbo;
  }
  CHECK(tail / 20.0 > head / 20.0);
}

TEST_CASE("mixed-domain training consumes 50/50 groups") {
  SyntheticConfig sa;
  sa.n_groups = 8;
  sa.group_size = 16;
  sa.allowed_styles = {2};  // gain 1.0, normal
  sa.seed = 1;
  SyntheticConfig sb = sa;
  sb.allowed_styles = {0};  // gain 0.4, normal
  sb.seed = 2;
  const Dataset a = make_synthetic(sa);
  const Dataset b = make_synthetic(sb);

  TrainConfig config = tiny_train_config();
  config.epochs = 1;
  const TrainResult result = train(a, config, {}, &b);
  CHECK(result.metrics.size() == std::min(a.n(), b.n()) / (config.group_size / 2));
}
