#include "ugvae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ugvae/errors.hpp"

namespace ugvae {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct BigEndianReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t offset = 0;

  std::uint32_t u32(const char* what) {
    if (offset + 4 > bytes.size()) {
      throw FormatError(std::string("truncated IDX file reading ") + what, offset);
    }
    std::uint32_t v = (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
                      (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
    offset += 4;
    return v;
  }
};

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

// 8x8 binary pattern templates indexed by class.
constexpr std::size_t kMaxTemplates = 8;
bool template_pixel(std::size_t cls, std::size_t r, std::size_t c) {
  switch (cls) {
    case 0: return r == 3 || r == 4;                       // horizontal bar
    case 1: return c == 3 || c == 4;                       // vertical bar
    case 2: return r == c || (r > 0 && r - 1 == c) || (c > 0 && c - 1 == r);  // diagonal
    case 3: return r == 3 || r == 4 || c == 3 || c == 4;   // cross
    case 4: return r + c == 7 || r + c == 6 || r + c == 8; // anti-diagonal
    case 5: return r == 0 || r == 7 || c == 0 || c == 7;   // frame
    case 6: return ((r / 2) + (c / 2)) % 2 == 0;           // checkerboard
    case 7: return r < 4;                                  // top half
    default: return false;
  }
}

}  // namespace

Matrix gather(const Dataset& dataset, const GroupBatch& batch) {
  Matrix out(batch.indices.size(), dataset.dim());
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    auto row = dataset.X.row(batch.indices[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

Matrix gather_mixed(const Dataset& a, const Dataset& b, const GroupBatch& batch) {
  if (a.dim() != b.dim()) throw ContractViolation("gather_mixed: dimension mismatch");
  if (batch.domains.size() != batch.indices.size()) {
    throw ContractViolation("gather_mixed: batch has no domain tags");
  }
  Matrix out(batch.indices.size(), a.dim());
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const Dataset& src = batch.domains[i] == 0 ? a : b;
    auto row = src.X.row(batch.indices[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto bytes = read_file(images_path);
  BigEndianReader reader{bytes};
  const std::uint32_t magic = reader.u32("magic");
  if (magic != kImagesMagic) {
    throw FormatError("bad IDX image magic " + std::to_string(magic) + " in " +
                          images_path.string(),
                      0);
  }
  const std::uint32_t n = reader.u32("count");
  const std::uint32_t rows = reader.u32("rows");
  const std::uint32_t cols = reader.u32("cols");
  const std::size_t expected = std::size_t(n) * rows * cols;
  if (bytes.size() - reader.offset < expected) {
    throw FormatError("truncated IDX image payload in " + images_path.string(), bytes.size());
  }

  Dataset out;
  out.name = images_path.stem().string();
  out.X = Matrix(n, std::size_t(rows) * cols);
  for (std::size_t i = 0; i < expected; ++i) {
    out.X.data[i] = static_cast<double>(bytes[reader.offset + i]) / 255.0;
  }

  if (!labels_path.empty()) {
    const auto lbytes = read_file(labels_path);
    BigEndianReader lreader{lbytes};
    const std::uint32_t lmagic = lreader.u32("magic");
    if (lmagic != kLabelsMagic) {
      throw FormatError("bad IDX label magic " + std::to_string(lmagic) + " in " +
                            labels_path.string(),
                        0);
    }
    const std::uint32_t ln = lreader.u32("count");
    if (ln != n) {
      throw FormatError("label count " + std::to_string(ln) + " does not match image count " +
                            std::to_string(n),
                        lreader.offset);
    }
    if (lbytes.size() - lreader.offset < ln) {
      throw FormatError("truncated IDX label payload in " + labels_path.string(), lbytes.size());
    }
    std::vector<int> labels(ln);
    for (std::size_t i = 0; i < ln; ++i) labels[i] = lbytes[lreader.offset + i];
    out.labels = std::move(labels);
  }
  return out;
}

void save_idx_images(const std::filesystem::path& path, const Matrix& X) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  // Square image layout; callers hold flat rows x cols = dim vectors.
  const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(double(X.cols))));
  if (std::size_t(side) * side != X.cols) {
    throw ContractViolation("save_idx_images: non-square sample dimension");
  }
  write_u32_be(out, kImagesMagic);
  write_u32_be(out, static_cast<std::uint32_t>(X.rows));
  write_u32_be(out, side);
  write_u32_be(out, side);
  for (double v : X.data) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<int>(std::floor(c * 255.0 + 0.5))));
  }
}

void save_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  write_u32_be(out, kLabelsMagic);
  write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) out.put(static_cast<char>(static_cast<std::uint8_t>(v)));
}

double synthetic_style_gain(int style) {
  constexpr std::array<double, 3> gains{0.4, 0.7, 1.0};
  return gains[static_cast<std::size_t>(style) % 3];
}

bool synthetic_style_inverted(int style) { return (style / 3) % 2 == 1; }

Dataset make_synthetic(const SyntheticConfig& config) {
  if (config.n_classes > kMaxTemplates) {
    throw ContractViolation("make_synthetic: at most 8 template classes");
  }
  std::vector<int> styles = config.allowed_styles;
  if (styles.empty()) {
    for (std::size_t s = 0; s < config.n_styles; ++s) styles.push_back(static_cast<int>(s));
  }

  RngStream rng(config.seed);
  const std::size_t n = config.n_groups * config.group_size;
  Dataset out;
  out.name = "synthetic";
  out.X = Matrix(n, kSyntheticDim);
  out.labels = std::vector<int>(n);
  out.group_ids.resize(n);
  out.style_ids.resize(n);

  std::size_t idx = 0;
  for (std::size_t gi = 0; gi < config.n_groups; ++gi) {
    const int style = styles[rng.next_u64() % styles.size()];
    const double gain = synthetic_style_gain(style);
    const bool inverted = synthetic_style_inverted(style);
    for (std::size_t bi = 0; bi < config.group_size; ++bi, ++idx) {
      const auto cls = static_cast<std::size_t>(rng.next_u64() % config.n_classes);
      (*out.labels)[idx] = static_cast<int>(cls);
      out.group_ids[idx] = static_cast<int>(gi);
      out.style_ids[idx] = style;
      auto row = out.X.row(idx);
      for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 8; ++c) {
          const bool on = template_pixel(cls, r, c) != inverted;
          const double noise = config.noise_std * rng.next_gaussian();
          row[r * 8 + c] = std::clamp(gain * (on ? 1.0 : 0.0) + noise, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

std::vector<GroupBatch> random_groups(const Dataset& dataset, std::size_t batch_size,
                                      RngStream& rng) {
  if (batch_size == 0 || dataset.n() < batch_size) {
    throw ContractViolation("random_groups: dataset smaller than batch size");
  }
  std::vector<std::size_t> perm(dataset.n());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.next_u64() % (i + 1)]);
  }
  const std::size_t n_groups = dataset.n() / batch_size;
  std::vector<GroupBatch> out;
  out.reserve(n_groups);
  for (std::size_t b = 0; b < n_groups; ++b) {
    GroupBatch batch;
    batch.tag = "random";
    batch.indices.assign(perm.begin() + b * batch_size, perm.begin() + (b + 1) * batch_size);
    out.push_back(std::move(batch));
  }
  return out;
}

std::set<int> digit_set(const std::string& name) {
  if (name == "even") return {0, 2, 4, 6, 8};
  if (name == "odd") return {1, 3, 5, 7, 9};
  if (name == "fibonacci") return {0, 1, 2, 3, 5, 8};
  if (name == "prime") return {2, 3, 5, 7};
  throw ContractViolation("unknown digit set: " + name);
}

std::vector<GroupBatch> structured_groups_by(const std::vector<int>& labels,
                                             const std::set<int>& label_set,
                                             std::size_t batch_size, std::size_t n_batches,
                                             RngStream& rng, const std::string& tag) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (label_set.count(labels[i])) pool.push_back(i);
  }
  if (pool.size() < batch_size) {
    throw CapacityError("structured_groups: only " + std::to_string(pool.size()) +
                        " samples match the label set, need " + std::to_string(batch_size));
  }
  std::vector<GroupBatch> out;
  out.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    // Independent draw without replacement: partial Fisher-Yates over a copy.
    std::vector<std::size_t> candidates = pool;
    GroupBatch batch;
    batch.tag = tag;
    batch.indices.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t j = i + rng.next_u64() % (candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
      batch.indices.push_back(candidates[i]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

std::vector<GroupBatch> structured_groups(const Dataset& dataset, const std::set<int>& label_set,
                                          std::size_t batch_size, std::size_t n_batches,
                                          RngStream& rng, const std::string& tag) {
  if (!dataset.labels) throw ContractViolation("structured_groups: dataset has no labels");
  return structured_groups_by(*dataset.labels, label_set, batch_size, n_batches, rng, tag);
}

std::vector<GroupBatch> mix_domains(const Dataset& a, const Dataset& b, std::size_t batch_size,
                                    RngStream& rng) {
  if (batch_size % 2 != 0) throw ContractViolation("mix_domains: batch size must be even");
  if (a.n() == 0 || b.n() == 0) throw ContractViolation("mix_domains: empty dataset");
  const std::size_t half = batch_size / 2;
  const std::size_t n_groups = std::min(a.n(), b.n()) / half;
  if (n_groups == 0) {
    throw CapacityError("mix_domains: datasets too small for one mixed group");
  }

  auto shuffled = [&rng](std::size_t n) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.next_u64() % (i + 1)]);
    return perm;
  };
  const auto perm_a = shuffled(a.n());
  const auto perm_b = shuffled(b.n());

  std::vector<GroupBatch> out;
  out.reserve(n_groups);
  for (std::size_t gi = 0; gi < n_groups; ++gi) {
    GroupBatch batch;
    batch.tag = "mixed";
    for (std::size_t i = 0; i < half; ++i) {
      batch.indices.push_back(perm_a[gi * half + i]);
      batch.domains.push_back(0);
      batch.indices.push_back(perm_b[gi * half + i]);
      batch.domains.push_back(1);
    }
    // shuffle within the group, keeping index/domain pairs together
    for (std::size_t i = batch.indices.size() - 1; i > 0; --i) {
      const std::size_t j = rng.next_u64() % (i + 1);
      std::swap(batch.indices[i], batch.indices[j]);
      std::swap(batch.domains[i], batch.domains[j]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace ugvae
