// SPDX-License-Identifier: Apache-2.0
// nlr: generate / corrupt datasets, train, run the ablation grid, export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "nlr/config.hpp"
#include "nlr/dataset.hpp"
#include "nlr/error.hpp"
#include "nlr/export.hpp"
#include "nlr/trainer.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kValidation = 3, kDivergence = 4 };

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

nlr::TrainConfig resolve_config(const Globals& g) {
  auto cfg = g.config.empty() ? nlr::default_config(g.overrides) : nlr::load_config(g.config, g.overrides);
  if (g.seed) cfg.set_all_seeds(*g.seed);
  return cfg;
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

void print_summary(const nlr::RunSummary& s, std::ostream& out) {
  out << "best_acc " << s.best_acc << "  best_epoch " << s.best_epoch << "  last_acc " << s.last_acc << "  gap "
      << s.gap << "  config " << nlr::hash_hex(s.config_hash) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy-label training with bootstrapping, restoration and clustering regularizers"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Experiment config file (key = value)");
  app.add_option("--override", g.overrides, "key=value overrides, applied after the config file")->take_all();
  app.add_option("--seed", g.seed, "Seed (generate/corrupt) or every training seed (train/ablate)");
  app.add_option("--out-dir", g.out_dir, "Run directory (train/export) or grid directory (ablate)");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic labeled dataset");
  std::size_t gen_classes = 4, gen_samples = 2000, gen_latent = 8;
  std::string gen_image, gen_out;
  std::size_t gen_dims = 0;
  double gen_sep = 3.0, gen_pixel_noise = 0.02;
  gen->add_option("--classes", gen_classes)->check(CLI::PositiveNumber);
  gen->add_option("--samples", gen_samples)->check(CLI::PositiveNumber);
  auto* image_opt = gen->add_option("--image", gen_image, "HxW or CxHxW image samples");
  gen->add_option("--dims", gen_dims, "Vector samples of this dimension")->excludes(image_opt);
  gen->add_option("--separation", gen_sep);
  gen->add_option("--latent-dims", gen_latent);
  gen->add_option("--pixel-noise", gen_pixel_noise);
  gen->add_option("--out", gen_out, "Dataset file")->required();

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Inject label noise into a dataset");
  std::string cor_in, cor_out, cor_kind = "symmetric";
  double cor_eps = 0;
  bool cor_no_wrap = false;
  cor->add_option("--in", cor_in)->required();
  cor->add_option("--out", cor_out)->required();
  cor->add_option("--kind", cor_kind)->check(CLI::IsMember({"symmetric", "asymmetric"}));
  cor->add_option("--eps", cor_eps)->required();
  cor->add_flag("--no-wrap", cor_no_wrap, "Asymmetric: leave the last class untouched");

  // train / ablate
  auto* train = app.add_subcommand("train", "Train one configuration");
  bool resume = false;
  std::size_t stop_after = 0;
  train->add_flag("--resume", resume, "Continue from checkpoints/last.ckpt");
  train->add_option("--stop-after", stop_after, "Stop after this many epochs (for resumable runs)");
  auto* ablate = app.add_subcommand("ablate", "Run the 7-cell ablation grid");

  // export
  auto* exp = app.add_subcommand("export", "Export embeddings and a reconstruction gallery");
  std::string exp_ckpt;
  std::size_t gallery_count = 16;
  exp->add_option("--checkpoint", exp_ckpt, "Checkpoint (default: <out-dir>/checkpoints/last.ckpt)");
  exp->add_option("--gallery", gallery_count, "Rows in the gallery image");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      nlr::Shape shape;
      if (!gen_image.empty()) shape = nlr::parse_shape(gen_image);
      else shape = {gen_dims ? gen_dims : 2};
      nlr::BlobOptions opts;
      opts.latent_dims = gen_latent;
      opts.pixel_noise = gen_pixel_noise;
      const auto ds = nlr::generate_blobs(gen_samples, gen_classes, shape, gen_sep, g.seed.value_or(0), opts);
      nlr::save_dataset(ds, gen_out);
      nlr::write_label_csv(ds, sibling(gen_out, ".csv"));
      std::cout << "wrote " << ds.size() << " samples, " << ds.num_classes << " classes, shape "
                << nlr::format_shape(ds.input_shape) << " to " << gen_out << "\n";
      return kOk;
    }
    if (*cor) {
      const auto ds = nlr::load_dataset(cor_in);
      nlr::NoiseSpec spec;
      spec.kind = nlr::parse_noise_kind(cor_kind);
      spec.epsilon = cor_eps;
      spec.num_classes = ds.num_classes;
      spec.seed = g.seed.value_or(0);
      spec.wrap_around = !cor_no_wrap;
      const auto noisy = nlr::inject_noise(ds, spec);
      nlr::save_dataset(noisy, cor_out);
      nlr::write_label_csv(noisy, sibling(cor_out, ".csv"));
      const auto tm = nlr::empirical_transition_matrix(noisy);
      nlr::write_transition_csv(tm, sibling(cor_out, ".transition.csv"));
      std::size_t flipped = 0;
      for (auto c : noisy.corrupted) flipped += c;
      std::cout << "corrupted " << flipped << " of " << noisy.size() << " labels (" << cor_kind << ", eps "
                << cor_eps << ")\n";
      return kOk;
    }
    if (*train) {
      const auto cfg = resolve_config(g);
      const fs::path dir = g.out_dir.empty() ? fs::path("runs/train") : fs::path(g.out_dir);
      nlr::RunOptions opts;
      opts.resume = resume;
      opts.stop_after = stop_after;
      opts.log = &std::cerr;
      const auto s = nlr::run_experiment(cfg, dir, opts);
      print_summary(s, std::cout);
      return kOk;
    }
    if (*ablate) {
      const auto cfg = resolve_config(g);
      const fs::path dir = g.out_dir.empty() ? fs::path("runs/ablation") : fs::path(g.out_dir);
      const auto rows = nlr::run_ablation(cfg, dir, &std::cerr);
      nlr::print_ablation_table(cfg, rows, std::cout);
      for (const auto& r : rows)
        if (!r.summary) return kRuntime;
      return kOk;
    }
    if (*exp) {
      const auto cfg = resolve_config(g);
      const fs::path dir = g.out_dir.empty() ? fs::path("runs/train") : fs::path(g.out_dir);
      const fs::path ckpt = exp_ckpt.empty() ? dir / "checkpoints" / "last.ckpt" : fs::path(exp_ckpt);
      const auto data = nlr::prepare_data(cfg);
      const auto models = nlr::load_models(cfg, data.train.input_shape, ckpt);
      const auto rows = nlr::write_embeddings(models, data.train, dir / "embeddings.csv");
      std::cout << "wrote " << rows << " embedding rows to " << (dir / "embeddings.csv").string() << "\n";
      std::ofstream rep(dir / "reconstruction.txt");
      rep << "checkpoint = " << ckpt.string() << "\n";
      rep << "val_mse = " << nlr::reconstruction_mse(models, data.val) << "\n";
      if (data.val.is_image()) {
        const auto cut = nlr::cutout_reconstruction(models, data.val, 0.25, cfg.seed.augment);
        rep << "val_cutout_mse = " << cut.mse << "\nval_cutout_masked_mse = " << cut.masked_mse << "\n";
        const auto policy = nlr::effective_policy(cfg.augment, data.val.input_shape);
        const fs::path gallery = dir / (data.val.input_shape[0] == 3 ? "gallery.ppm" : "gallery.pgm");
        nlr::write_gallery(models, data.val, policy, cfg.seed.augment, gallery_count, gallery);
        std::cout << "wrote " << gallery.string() << "\n";
      }
      std::cout << "wrote " << (dir / "reconstruction.txt").string() << "\n";
      return kOk;
    }
  } catch (const nlr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlr::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::logic_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
