// Command-line driver: train, sample-grid, interpolate, embed, classify, synth.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 training
// divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ugvae/data.hpp"
#include "ugvae/errors.hpp"
#include "ugvae/eval.hpp"
#include "ugvae/trainer.hpp"

namespace fs = std::filesystem;
using namespace ugvae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

std::set<int> parse_label_set(const std::string& spec) {
  // Either a built-in digit-set name or a comma-separated integer list.
  if (spec.empty()) throw ContractViolation("empty label set");
  if (!std::isdigit(static_cast<unsigned char>(spec.front())) && spec.front() != '-') {
    if (spec == "random") return {};  // sentinel: random batches
    return digit_set(spec);
  }
  std::set<int> out;
  std::stringstream ss(spec);
  std::string field;
  while (std::getline(ss, field, ',')) out.insert(std::stoi(field));
  return out;
}

struct BatchSpec {
  std::string tag;
  std::string selector;  // digit-set name, int list, or "random"
};

std::vector<BatchSpec> parse_batch_specs(const std::vector<std::string>& raw) {
  std::vector<BatchSpec> out;
  for (const auto& s : raw) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      out.push_back(BatchSpec{s, s});
    } else {
      out.push_back(BatchSpec{s.substr(0, eq), s.substr(eq + 1)});
    }
  }
  return out;
}

// Applies a JSON config file as defaults for the train command; explicit
// flags still win because CLI11 only keeps defaults for unseen options.
void apply_json_defaults(const fs::path& path, TrainConfig& config, std::size_t& limit) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string(), 0);
  nlohmann::json j;
  in >> j;
  auto get = [&j](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).template get<std::decay_t<decltype(slot)>>();
  };
  get("epochs", config.epochs);
  get("group_size", config.group_size);
  get("learning_rate", config.learning_rate);
  get("beta1", config.beta1);
  get("beta2", config.beta2);
  get("adam_eps", config.adam_eps);
  get("seed", config.seed);
  get("local_dim", config.dims.local_dim);
  get("global_dim", config.dims.global_dim);
  get("components", config.dims.components);
  get("hidden", config.dims.hidden);
  get("sigma_x", config.sigma_x);
  get("checkpoint_interval", config.checkpoint_interval);
  get("clip_norm", config.clip_norm);
  get("limit", limit);
}

Dataset load_limited(const fs::path& images, const fs::path& labels, std::size_t limit) {
  Dataset dataset = load_idx(images, labels);
  if (limit > 0 && limit < dataset.n()) {
    Dataset cut;
    cut.name = dataset.name;
    cut.X = Matrix(limit, dataset.dim());
    std::copy(dataset.X.data.begin(), dataset.X.data.begin() + limit * dataset.dim(),
              cut.X.data.begin());
    if (dataset.labels) {
      cut.labels = std::vector<int>(dataset.labels->begin(), dataset.labels->begin() + limit);
    }
    return cut;
  }
  return dataset;
}

int run(int argc, char** argv) {
  CLI::App app{"UG-VAE: grouped deep generative model with a mixture local space\n"
               "and a product-of-experts global posterior"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Emit a group-structured synthetic dataset as IDX");
  SyntheticConfig synth_config;
  std::string synth_out = ".";
  std::string synth_styles_list;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--groups", synth_config.n_groups, "Number of ground-truth groups");
  synth->add_option("--group-size", synth_config.group_size, "Samples per group");
  synth->add_option("--classes", synth_config.n_classes, "Template classes (<= 8)");
  synth->add_option("--styles", synth_config.n_styles, "Style count (gain x polarity)");
  synth->add_option("--style-list", synth_styles_list, "Restrict styles, e.g. \"0,2\"");
  synth->add_option("--noise", synth_config.noise_std, "Pixel noise std-dev");
  synth->add_option("--seed", synth_config.seed, "RNG seed");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset; writes checkpoint + metrics");
  TrainConfig train_config;
  std::string train_images, train_labels, train_images_b, train_labels_b;
  std::string train_out = "runs/default";
  std::string train_resume, train_json;
  std::size_t train_limit = 0;
  train_cmd->add_option("--data,--images", train_images, "IDX images path")->required();
  train_cmd->add_option("--labels", train_labels, "IDX labels path (optional)");
  train_cmd->add_option("--images-b", train_images_b, "Second-domain IDX images (50/50 mixing)");
  train_cmd->add_option("--labels-b", train_labels_b, "Second-domain IDX labels");
  train_cmd->add_option("--limit", train_limit, "Use only the first N samples");
  train_cmd->add_option("--epochs", train_config.epochs, "Training epochs");
  train_cmd->add_option("--B", train_config.group_size, "Group (mini-batch) size");
  train_cmd->add_option("--lr", train_config.learning_rate, "Learning rate");
  train_cmd->add_option("--d", train_config.dims.local_dim, "Local latent dimension");
  train_cmd->add_option("--g", train_config.dims.global_dim, "Global latent dimension");
  train_cmd->add_option("--K", train_config.dims.components, "Mixture components");
  train_cmd->add_option("--hidden", train_config.dims.hidden, "Hidden layer width");
  train_cmd->add_option("--sigma-x", train_config.sigma_x, "Likelihood std-dev");
  train_cmd->add_option("--seed", train_config.seed, "RNG seed");
  train_cmd->add_option("--ckpt-interval", train_config.checkpoint_interval,
                        "Epochs between checkpoints");
  train_cmd->add_option("--clip-norm", train_config.clip_norm, "Gradient clipping global norm");
  train_cmd->add_option("--out", train_out, "Output directory");
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
  train_cmd->add_option("--config", train_json, "JSON config file (flags win)");

  // ---- sample-grid ----
  auto* grid_cmd = app.add_subcommand("sample-grid", "Prior interpolation grid per component");
  std::string grid_ckpt, grid_out = ".";
  int grid_component = -1;
  std::size_t grid_steps = 7;
  grid_cmd->add_option("--ckpt", grid_ckpt, "Checkpoint path")->required();
  grid_cmd->add_option("--component", grid_component, "Component index (default: all)");
  grid_cmd->add_option("--steps", grid_steps, "Steps per axis");
  grid_cmd->add_option("--out", grid_out, "Output directory");

  // ---- interpolate ----
  auto* interp_cmd =
      app.add_subcommand("interpolate", "Posterior interpolation between two batches");
  std::string interp_ckpt, interp_images_a, interp_images_b, interp_out = "interpolation.pgm";
  std::size_t interp_a = 0, interp_b = 0, interp_steps = 7, interp_batch = 0;
  std::uint64_t interp_seed = 0;
  interp_cmd->add_option("--ckpt", interp_ckpt, "Checkpoint path")->required();
  interp_cmd->add_option("--images-a", interp_images_a, "IDX images for batch A")->required();
  interp_cmd->add_option("--images-b", interp_images_b, "IDX images for batch B")->required();
  interp_cmd->add_option("--index-a", interp_a, "Sample index inside batch A");
  interp_cmd->add_option("--index-b", interp_b, "Sample index inside batch B");
  interp_cmd->add_option("--B", interp_batch, "Batch size (default: train config)");
  interp_cmd->add_option("--steps", interp_steps, "Steps per axis");
  interp_cmd->add_option("--seed", interp_seed, "RNG seed");
  interp_cmd->add_option("--out", interp_out, "Output PGM path");

  // ---- embed ----
  auto* embed_cmd = app.add_subcommand("embed", "Aggregated-posterior embeddings of batches");
  std::string embed_ckpt, embed_images, embed_labels, embed_styles, embed_out = "embeddings.csv";
  std::vector<std::string> embed_sets;
  std::size_t embed_batches_per_set = 20, embed_batch = 0, embed_samples = 0;
  std::uint64_t embed_seed = 0;
  embed_cmd->add_option("--ckpt", embed_ckpt, "Checkpoint path")->required();
  embed_cmd->add_option("--data,--images", embed_images, "IDX images path")->required();
  embed_cmd->add_option("--labels", embed_labels, "IDX labels path");
  embed_cmd->add_option("--style-labels", embed_styles,
                        "IDX labels overriding the filter labels (e.g. synthetic styles)");
  embed_cmd
      ->add_option("--set", embed_sets,
                   "Batch spec tag=selector; selector is a digit-set name "
                   "(even/odd/fibonacci/prime), an int list, or \"random\"")
      ->required();
  embed_cmd->add_option("--batches-per-set", embed_batches_per_set, "Batches per spec");
  embed_cmd->add_option("--B", embed_batch, "Batch size (default: train config)");
  embed_cmd->add_option("--samples", embed_samples, "Posterior samples per batch");
  embed_cmd->add_option("--seed", embed_seed, "RNG seed");
  embed_cmd->add_option("--out", embed_out, "Output CSV path");

  // ---- classify ----
  auto* classify_cmd = app.add_subcommand("classify", "Linear probe over embedding CSVs");
  std::string classify_train, classify_test;
  ProbeConfig probe_config;
  classify_cmd->add_option("--train", classify_train, "Training embeddings CSV")->required();
  classify_cmd->add_option("--test", classify_test, "Test embeddings CSV")->required();
  classify_cmd->add_option("--lr", probe_config.learning_rate, "Probe learning rate");
  classify_cmd->add_option("--iters", probe_config.iterations, "Probe iterations");
  classify_cmd->add_option("--l2", probe_config.l2, "Probe L2 regularization");

  // JSON defaults must land before parse so flags can override them.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      apply_json_defaults(argv[i + 1], train_config, train_limit);
      break;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kExitUsage;
  }

  if (synth->parsed()) {
    if (!synth_styles_list.empty()) {
      for (int s : parse_label_set(synth_styles_list)) synth_config.allowed_styles.push_back(s);
    }
    const Dataset dataset = make_synthetic(synth_config);
    fs::create_directories(synth_out);
    const fs::path dir(synth_out);
    save_idx_images(dir / "synthetic-images-idx3-ubyte", dataset.X);
    save_idx_labels(dir / "synthetic-labels-idx1-ubyte", *dataset.labels);
    save_idx_labels(dir / "synthetic-styles-idx1-ubyte", dataset.style_ids);
    std::cout << "wrote " << dataset.n() << " samples to " << synth_out << "\n";
    return kExitOk;
  }

  if (train_cmd->parsed()) {
    const Dataset dataset = load_limited(train_images, train_labels, train_limit);
    train_config.dims.data_dim = dataset.dim();
    std::optional<Dataset> domain_b;
    if (!train_images_b.empty()) {
      domain_b = load_limited(train_images_b, train_labels_b, train_limit);
    }
    std::optional<Checkpoint> resume;
    if (!train_resume.empty()) resume = load_checkpoint(train_resume);

    const TrainResult result =
        train(dataset, train_config, train_out, domain_b ? &*domain_b : nullptr,
              resume ? &*resume : nullptr);
    const std::size_t last_epoch = result.metrics.back().epoch;
    double epoch_mean = 0.0;
    std::size_t epoch_steps = 0;
    for (const auto& m : result.metrics) {
      if (m.epoch == last_epoch) {
        epoch_mean += m.elbo;
        ++epoch_steps;
      }
    }
    std::cout << "trained " << result.metrics.size() << " steps; final epoch mean elbo/sample "
              << epoch_mean / double(epoch_steps) << "\n"
              << "checkpoint: " << (fs::path(train_out) / "final.ckpt").string() << "\n";
    return kExitOk;
  }

  if (grid_cmd->parsed()) {
    const Checkpoint ckpt = load_checkpoint(grid_ckpt);
    const NetworkBundle bundle = bundle_from_checkpoint(ckpt);
    const GenerativeConfig gen = ckpt.config.generative();
    fs::create_directories(grid_out);
    std::vector<std::size_t> components;
    if (grid_component >= 0) {
      components.push_back(static_cast<std::size_t>(grid_component));
    } else {
      for (std::size_t k = 0; k < bundle.dims.components; ++k) components.push_back(k);
    }
    for (std::size_t k : components) {
      const InterpolationGrid grid = sample_grid(bundle, gen, k, grid_steps, grid_steps);
      const fs::path path = fs::path(grid_out) / ("grid_k" + std::to_string(k) + ".pgm");
      write_pgm_grid(grid, path);
      std::cout << "wrote " << path.string() << "\n";
    }
    return kExitOk;
  }

  if (interp_cmd->parsed()) {
    const Checkpoint ckpt = load_checkpoint(interp_ckpt);
    const NetworkBundle bundle = bundle_from_checkpoint(ckpt);
    const GenerativeConfig gen = ckpt.config.generative();
    const std::size_t B = interp_batch > 0 ? interp_batch : ckpt.config.group_size;

    const Dataset a = load_limited(interp_images_a, "", 0);
    const Dataset b = load_limited(interp_images_b, "", 0);
    RngStream rng(interp_seed);
    RngStream batch_rng = rng.substream(0);
    const Matrix batch_a = gather(a, random_groups(a, std::min(B, a.n()), batch_rng).front());
    const Matrix batch_b = gather(b, random_groups(b, std::min(B, b.n()), batch_rng).front());
    RngStream infer_rng = rng.substream(1);
    const InterpolationGrid grid = cross_interpolation(bundle, gen, batch_a, batch_b, interp_a,
                                                       interp_b, interp_steps, infer_rng);
    write_pgm_grid(grid, interp_out);
    std::cout << "wrote " << interp_out << "\n";
    return kExitOk;
  }

  if (embed_cmd->parsed()) {
    const Checkpoint ckpt = load_checkpoint(embed_ckpt);
    const NetworkBundle bundle = bundle_from_checkpoint(ckpt);
    const std::size_t B = embed_batch > 0 ? embed_batch : ckpt.config.group_size;

    Dataset dataset = load_limited(embed_images, embed_labels, 0);
    std::vector<int> filter_labels;
    if (!embed_styles.empty()) {
      const Dataset styles = load_idx(embed_images, embed_styles);
      filter_labels = *styles.labels;
    } else if (dataset.labels) {
      filter_labels = *dataset.labels;
    }

    RngStream rng(embed_seed);
    std::vector<std::pair<std::string, Matrix>> batches;
    std::size_t spec_index = 0;
    for (const BatchSpec& spec : parse_batch_specs(embed_sets)) {
      RngStream spec_rng = rng.substream(spec_index++);
      std::vector<GroupBatch> groups;
      if (spec.selector == "random") {
        RngStream group_rng = spec_rng;
        groups = random_groups(dataset, B, group_rng);
        if (groups.size() > embed_batches_per_set) groups.resize(embed_batches_per_set);
        for (auto& g : groups) g.tag = spec.tag;
      } else {
        if (filter_labels.empty()) {
          throw ContractViolation("embed: label-filtered sets need --labels or --style-labels");
        }
        groups = structured_groups_by(filter_labels, parse_label_set(spec.selector), B,
                                      embed_batches_per_set, spec_rng, spec.tag);
      }
      for (const auto& g : groups) batches.emplace_back(g.tag, gather(dataset, g));
    }
    RngStream infer_rng = rng.substream(1000);
    const EmbedResult result = embed_batches(bundle, batches, infer_rng, embed_samples);
    write_embedding_csv(result, embed_out);
    std::cout << "wrote " << result.points.size() << " embeddings to " << embed_out << "\n"
              << "note: 2-D coordinates use deterministic PCA projection\n";
    return kExitOk;
  }

  if (classify_cmd->parsed()) {
    const auto train_points = embedding_points(read_embedding_csv(classify_train));
    const auto test_points = embedding_points(read_embedding_csv(classify_test));
    const ProbeReport report = classify_embeddings(train_points, test_points, probe_config);

    std::string categories;
    for (std::size_t i = 0; i < report.classes.size(); ++i) {
      categories += report.classes[i] + " (" + std::to_string(i) + ")";
      if (i + 1 < report.classes.size()) categories += " vs ";
    }
    std::printf("note: in-repo logistic probe (linear); PCA columns unused by the probe\n");
    std::printf("%-40s %-18s %-16s %-16s\n", "Batch categories", "Classifier", "Train accuracy",
                "Test accuracy");
    std::printf("%-40s %-18s %-16.4f %-16.4f\n", categories.c_str(), "Logistic probe",
                report.train_accuracy, report.test_accuracy);
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const TrainingDivergence& e) {
    std::cerr << "training divergence: " << e.what() << "\n"
              << "  elbo=" << e.breakdown.elbo << " recon=" << e.breakdown.recon
              << " kl_z=" << e.breakdown.kl_z << " kl_d=" << e.breakdown.kl_d
              << " kl_beta=" << e.breakdown.kl_beta << "\n";
    return kExitDiverged;
  } catch (const ContractViolation& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const CapacityError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
