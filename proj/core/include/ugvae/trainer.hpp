#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ugvae/data.hpp"
#include "ugvae/generative.hpp"
#include "ugvae/nets.hpp"
#include "ugvae/objective.hpp"

namespace ugvae {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t group_size = 128;  // B
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  BundleDims dims;        // data_dim filled from the dataset when 0
  double sigma_x = 0.2;
  std::size_t checkpoint_interval = 1;  // epochs between checkpoints
  double clip_norm = 100.0;

  GenerativeConfig generative() const { return {dims, sigma_x, group_size}; }
};

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  Vec values;
};

/// Serialized training state: parameters, Adam moments (as "<name>.m1"/".m2"
/// records), step counter, and the config echo (JSON sidecar on disk).
struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<TensorRecord> tensors;
  std::uint64_t step = 0;
  TrainConfig config;
};

struct StepMetrics {
  std::uint64_t step = 0;   // 1-based global step
  std::size_t epoch = 0;    // 1-based epoch
  // per-sample units (group sums divided by B)
  double elbo = 0.0, recon = 0.0, kl_z = 0.0, kl_d = 0.0, kl_beta = 0.0;
};

struct TrainResult {
  NetworkBundle bundle;
  Checkpoint checkpoint;
  std::vector<StepMetrics> metrics;
};

/// Adaptive-moment optimizer; moment slots align with the bundle's canonical
/// tensor enumeration order.
class AdamOptimizer {
 public:
  void init(const NetworkBundle& bundle);
  void step(NetworkBundle& bundle, const TrainConfig& config);
  void round_to_f32();
  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }
  Vec& m1(std::size_t slot) { return m1_[slot]; }
  Vec& m2(std::size_t slot) { return m2_[slot]; }

 private:
  std::vector<Vec> m1_, m2_;
  std::uint64_t t_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
void clip_global_norm(NetworkBundle& bundle, double max_norm);

// Binary checkpoint: magic "UGVAE001", LE u32 tensor count, per tensor
// (u32 name length, name, u32 rank, u32 dims..., float32 values), trailing LE
// u64 step counter. Config echo written to "<path>.json".
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds a bundle (and optionally validates shapes) from a checkpoint.
NetworkBundle bundle_from_checkpoint(const Checkpoint& ckpt);

std::string metrics_to_csv(const std::vector<StepMetrics>& metrics);

// Stochastic variational training over random groups (or 50/50 mixed groups
// when domain_b is given). Deterministic in config.seed. When out_dir is
// non-empty, writes metrics.csv, scheduled ckpt_epoch_<E>.ckpt files and
// final.ckpt there; on divergence writes last_good.ckpt and metrics so far,
// then throws TrainingDivergence.
//
// Live parameters and moments are rounded to float32 at every checkpoint
// save, so resuming from a checkpoint is bit-equivalent to having continued
// the original run.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::filesystem::path& out_dir = {},
                  const Dataset* domain_b = nullptr, const Checkpoint* resume = nullptr);

}  // namespace ugvae
