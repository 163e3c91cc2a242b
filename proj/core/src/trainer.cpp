#include "ugvae/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ugvae/errors.hpp"

namespace ugvae {
namespace {

// rng substream purposes
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kStepStream = 2;

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"group_size", c.group_size},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"seed", c.seed},
                     {"data_dim", c.dims.data_dim},
                     {"local_dim", c.dims.local_dim},
                     {"global_dim", c.dims.global_dim},
                     {"components", c.dims.components},
                     {"hidden", c.dims.hidden},
                     {"sigma_x", c.sigma_x},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"clip_norm", c.clip_norm}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.group_size = j.at("group_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.dims.data_dim = j.at("data_dim").get<std::size_t>();
  c.dims.local_dim = j.at("local_dim").get<std::size_t>();
  c.dims.global_dim = j.at("global_dim").get<std::size_t>();
  c.dims.components = j.at("components").get<std::size_t>();
  c.dims.hidden = j.at("hidden").get<std::size_t>();
  c.sigma_x = j.at("sigma_x").get<double>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<std::size_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  return c;
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const std::string& bytes;
  std::size_t offset = 0;

  void need(std::size_t n, const char* what) {
    if (offset + n > bytes.size()) {
      throw FormatError(std::string("truncated checkpoint reading ") + what, offset);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes[offset + i])) << (8 * i);
    offset += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes[offset + i])) << (8 * i);
    offset += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(offset, n);
    offset += n;
    return s;
  }
};

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Checkpoint make_checkpoint(NetworkBundle& bundle, AdamOptimizer& adam,
                           const TrainConfig& config) {
  // Round live state to float32 first so the serialized file is lossless and
  // resumed runs continue from exactly the in-memory state.
  bundle.for_each_tensor([](ParamTensor& p) {
    for (auto& v : p.values) v = quantize_f32(v);
  });
  adam.round_to_f32();

  Checkpoint ckpt;
  ckpt.step = adam.t();
  ckpt.config = config;
  std::size_t slot = 0;
  bundle.for_each_tensor([&](ParamTensor& p) {
    ckpt.tensors.push_back(TensorRecord{p.name, p.shape, p.values});
    ckpt.tensors.push_back(TensorRecord{p.name + ".m1", p.shape, adam.m1(slot)});
    ckpt.tensors.push_back(TensorRecord{p.name + ".m2", p.shape, adam.m2(slot)});
    ++slot;
  });
  return ckpt;
}

const TensorRecord* find_record(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& rec : ckpt.tensors) {
    if (rec.name == name) return &rec;
  }
  return nullptr;
}

void assign_from_record(const Checkpoint& ckpt, const std::string& name, Vec& target) {
  const TensorRecord* rec = find_record(ckpt, name);
  if (!rec) throw FormatError("checkpoint missing tensor " + name, 0);
  if (rec->values.size() != target.size()) {
    throw FormatError("checkpoint tensor " + name + " has wrong size", 0);
  }
  target = rec->values;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void AdamOptimizer::init(const NetworkBundle& bundle) {
  m1_.clear();
  m2_.clear();
  bundle.for_each_tensor([this](const ParamTensor& p) {
    m1_.push_back(Vec(p.size(), 0.0));
    m2_.push_back(Vec(p.size(), 0.0));
  });
}

void AdamOptimizer::step(NetworkBundle& bundle, const TrainConfig& config) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t_));
  std::size_t slot = 0;
  bundle.for_each_tensor([&](ParamTensor& p) {
    Vec& m1 = m1_[slot];
    Vec& m2 = m2_[slot];
    ++slot;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * g;
      m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * g * g;
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      p.values[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  });
}

void AdamOptimizer::round_to_f32() {
  for (auto& m : m1_)
    for (auto& v : m) v = quantize_f32(v);
  for (auto& m : m2_)
    for (auto& v : m) v = quantize_f32(v);
}

void clip_global_norm(NetworkBundle& bundle, double max_norm) {
  double sq = 0.0;
  bundle.for_each_tensor([&sq](const ParamTensor& p) {
    for (double g : p.grad) sq += g * g;
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  bundle.for_each_tensor([scale](ParamTensor& p) {
    for (double& g : p.grad) g *= scale;
  });
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out;
  out += "UGVAE001";
  put_u32_le(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& rec : ckpt.tensors) {
    put_u32_le(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    put_u32_le(out, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) put_u32_le(out, static_cast<std::uint32_t>(d));
    for (double v : rec.values) {
      put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  put_u64_le(out, ckpt.step);
  write_text_file(path, out);

  nlohmann::json j;
  to_json(j, ckpt.config);
  write_text_file(path.string() + ".json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  ByteReader reader{bytes};
  const std::string magic = reader.str(8, "magic");
  if (magic != "UGVAE001") {
    throw FormatError("bad checkpoint magic \"" + magic + "\"", 0);
  }
  Checkpoint ckpt;
  ckpt.version = 1;
  const std::uint32_t count = reader.u32("tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const std::uint32_t name_len = reader.u32("name length");
    rec.name = reader.str(name_len, "name");
    const std::uint32_t rank = reader.u32("rank");
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      rec.shape.push_back(reader.u32("dim"));
      total *= rec.shape.back();
    }
    rec.values.resize(total);
    reader.need(total * 4, "tensor values");
    for (std::size_t v = 0; v < total; ++v) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, bytes.data() + reader.offset + v * 4, 4);
      rec.values[v] = static_cast<double>(std::bit_cast<float>(bits));
    }
    reader.offset += total * 4;
    ckpt.tensors.push_back(std::move(rec));
  }
  ckpt.step = reader.u64("step counter");
  if (reader.offset != bytes.size()) {
    throw FormatError("trailing bytes after step counter", reader.offset);
  }

  const std::filesystem::path sidecar = path.string() + ".json";
  std::ifstream jin(sidecar);
  if (!jin) throw FormatError("missing checkpoint sidecar " + sidecar.string(), 0);
  nlohmann::json j;
  jin >> j;
  ckpt.config = config_from_json(j);
  return ckpt;
}

NetworkBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
  RngStream dummy(0);
  NetworkBundle bundle = init_bundle(ckpt.config.dims, dummy);
  bundle.for_each_tensor(
      [&ckpt](ParamTensor& p) { assign_from_record(ckpt, p.name, p.values); });
  return bundle;
}

std::string metrics_to_csv(const std::vector<StepMetrics>& metrics) {
  std::string csv = "step,epoch,elbo,recon,kl_z,kl_d,kl_beta\n";
  for (const auto& m : metrics) {
    csv += std::to_string(m.step) + "," + std::to_string(m.epoch) + "," + fmt_double(m.elbo) +
           "," + fmt_double(m.recon) + "," + fmt_double(m.kl_z) + "," + fmt_double(m.kl_d) + "," +
           fmt_double(m.kl_beta) + "\n";
  }
  return csv;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config_in,
                  const std::filesystem::path& out_dir, const Dataset* domain_b,
                  const Checkpoint* resume) {
  TrainConfig config = config_in;
  if (config.group_size < 1) throw ContractViolation("train: group size must be >= 1");
  if (config.learning_rate <= 0.0) throw ContractViolation("train: learning rate must be > 0");
  if (config.dims.data_dim == 0) config.dims.data_dim = dataset.dim();
  if (config.dims.data_dim != dataset.dim()) {
    throw ContractViolation("train: config data_dim does not match dataset");
  }
  if (dataset.n() < config.group_size) {
    throw ContractViolation("train: dataset smaller than one group");
  }
  if (domain_b && domain_b->dim() != dataset.dim()) {
    throw ContractViolation("train: mixed domains must share data_dim");
  }

  const std::size_t B = config.group_size;
  const GenerativeConfig gen = config.generative();
  const std::size_t groups_per_epoch =
      domain_b ? std::min(dataset.n(), domain_b->n()) / (B / 2) : dataset.n() / B;
  if (groups_per_epoch == 0) throw ContractViolation("train: no full group per epoch");

  RngStream root(config.seed);
  RngStream init_rng = root.substream(kInitStream);

  NetworkBundle bundle;
  AdamOptimizer adam;
  std::uint64_t global_step = 0;
  if (resume) {
    bundle = bundle_from_checkpoint(*resume);
    adam.init(bundle);
    std::size_t slot = 0;
    bundle.for_each_tensor([&](ParamTensor& p) {
      assign_from_record(*resume, p.name + ".m1", adam.m1(slot));
      assign_from_record(*resume, p.name + ".m2", adam.m2(slot));
      ++slot;
    });
    adam.set_t(resume->step);
    global_step = resume->step;
  } else {
    bundle = init_bundle(config.dims, init_rng);
    adam.init(bundle);
  }

  const bool write_files = !out_dir.empty();
  if (write_files) std::filesystem::create_directories(out_dir);

  std::vector<StepMetrics> metrics;
  Vec snapshot;

  auto dump_metrics = [&]() {
    if (write_files) write_text_file(out_dir / "metrics.csv", metrics_to_csv(metrics));
  };
  auto save_named = [&](const std::string& name) {
    if (!write_files) return;
    Checkpoint ckpt = make_checkpoint(bundle, adam, config);
    save_checkpoint(out_dir / name, ckpt);
  };

  const std::size_t start_epoch = static_cast<std::size_t>(global_step / groups_per_epoch);
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    RngStream shuffle_rng = root.substream(kShuffleStream).substream(epoch);
    const std::vector<GroupBatch> groups =
        domain_b ? mix_domains(dataset, *domain_b, B, shuffle_rng)
                 : random_groups(dataset, B, shuffle_rng);

    for (const GroupBatch& group : groups) {
      const Matrix X = domain_b ? gather_mixed(dataset, *domain_b, group) : gather(dataset, group);
      RngStream eps_rng = root.substream(kStepStream).substream(global_step);

      ad::Tape tape;
      LossGraph graph;
      try {
        graph = loss(tape, X, bundle, gen, eps_rng);
      } catch (const TrainingDivergence& e) {
        dump_metrics();
        save_named("last_good.ckpt");
        throw TrainingDivergence("training diverged at step " + std::to_string(global_step + 1) +
                                     ": " + e.what(),
                                 e.breakdown);
      }

      // Pre-step snapshot so divergence can surface the last finite state.
      snapshot.clear();
      bundle.for_each_tensor([&snapshot](const ParamTensor& p) {
        snapshot.insert(snapshot.end(), p.values.begin(), p.values.end());
      });

      bundle.zero_grads();
      tape.backward(graph.loss);
      clip_global_norm(bundle, config.clip_norm);
      adam.step(bundle, config);
      global_step += 1;

      if (!bundle.all_finite()) {
        std::size_t pos = 0;
        bundle.for_each_tensor([&](ParamTensor& p) {
          std::copy(snapshot.begin() + pos, snapshot.begin() + pos + p.size(), p.values.begin());
          pos += p.size();
        });
        dump_metrics();
        save_named("last_good.ckpt");
        throw TrainingDivergence(
            "training diverged at step " + std::to_string(global_step) + ": non-finite parameters",
            graph.breakdown);
      }

      const double bn = static_cast<double>(B);
      metrics.push_back(StepMetrics{global_step, epoch + 1, graph.breakdown.elbo / bn,
                                    graph.breakdown.recon / bn, graph.breakdown.kl_z / bn,
                                    graph.breakdown.kl_d / bn, graph.breakdown.kl_beta / bn});
    }

    const bool last_epoch = epoch + 1 == config.epochs;
    if (config.checkpoint_interval > 0 &&
        ((epoch + 1) % config.checkpoint_interval == 0 || last_epoch)) {
      // Quantizes live state even when no file is written, keeping no-output
      // runs bit-equivalent to checkpointed ones.
      Checkpoint ckpt = make_checkpoint(bundle, adam, config);
      if (write_files) {
        save_checkpoint(out_dir / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".ckpt"), ckpt);
      }
    }
  }

  TrainResult result{std::move(bundle), {}, std::move(metrics)};
  result.checkpoint = make_checkpoint(result.bundle, adam, config);
  if (write_files) {
    save_checkpoint(out_dir / "final.ckpt", result.checkpoint);
    write_text_file(out_dir / "metrics.csv", metrics_to_csv(result.metrics));
  }
  return result;
}

}  // namespace ugvae
