#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ugvae/matrix.hpp"
#include "ugvae/rng.hpp"

namespace ugvae {

/// Immutable dataset of flat vectors in [0,1]^D with optional integer labels.
/// Synthetic datasets also record their generating group and style ids.
struct Dataset {
  Matrix X;  // N x D
  std::optional<std::vector<int>> labels;
  std::vector<int> group_ids;  // ground-truth group per sample (synthetic only)
  std::vector<int> style_ids;  // ground-truth style per sample (synthetic only)
  std::string name;

  std::size_t n() const { return X.rows; }
  std::size_t dim() const { return X.cols; }
};

/// Index set naming one training/evaluation group.
struct GroupBatch {
  std::vector<std::size_t> indices;
  std::string tag;
  // Parallel to indices for mixed-domain batches: 0 = first dataset,
  // 1 = second. Empty otherwise.
  std::vector<int> domains;
};

// Materialize the batch rows as a B x D matrix.
Matrix gather(const Dataset& dataset, const GroupBatch& batch);
Matrix gather_mixed(const Dataset& a, const Dataset& b, const GroupBatch& batch);

// IDX container (big-endian magic + dims, u8 payload). Pixels scale to [0,1].
// labels_path may be empty for an unlabeled load.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path = {});
void save_idx_images(const std::filesystem::path& path, const Matrix& X);
void save_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// Group-structured synthetic 8x8 data: each group shares a style (brightness
/// gain x polarity), each sample picks one of n_classes fixed binary
/// templates; pixel = clamp(gain * (template xor polarity) + noise, 0, 1).
struct SyntheticConfig {
  std::size_t n_groups = 100;
  std::size_t group_size = 50;  // B at construction time
  std::size_t n_classes = 4;    // template count, <= 8
  std::size_t n_styles = 6;     // gain {0.4, 0.7, 1.0} x polarity {normal, inverted}
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  std::vector<int> allowed_styles;  // empty = all n_styles
};

inline constexpr std::size_t kSyntheticDim = 64;  // 8 x 8

double synthetic_style_gain(int style);
bool synthetic_style_inverted(int style);

Dataset make_synthetic(const SyntheticConfig& config);

// Seeded shuffle, chunked into floor(N/B) groups; ragged tail dropped.
std::vector<GroupBatch> random_groups(const Dataset& dataset, std::size_t batch_size,
                                      RngStream& rng);

// Built-in digit sets: "even", "odd", "fibonacci" {0,1,2,3,5,8}, "prime".
std::set<int> digit_set(const std::string& name);

// Groups sampled without replacement (per group) from samples whose label is
// in the set. Throws CapacityError when fewer than batch_size samples match.
std::vector<GroupBatch> structured_groups(const Dataset& dataset, const std::set<int>& label_set,
                                          std::size_t batch_size, std::size_t n_batches,
                                          RngStream& rng, const std::string& tag = "");

// Same, but filtering on an arbitrary per-sample label vector (e.g. style ids).
std::vector<GroupBatch> structured_groups_by(const std::vector<int>& labels,
                                             const std::set<int>& label_set,
                                             std::size_t batch_size, std::size_t n_batches,
                                             RngStream& rng, const std::string& tag = "");

// 50/50 mixed-domain batches; batch_size must be even. Domain tags retained.
std::vector<GroupBatch> mix_domains(const Dataset& a, const Dataset& b, std::size_t batch_size,
                                    RngStream& rng);

}  // namespace ugvae
