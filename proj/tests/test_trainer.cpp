// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <sstream>
#include <unistd.h>

#include "nlr/checkpoint.hpp"
#include "nlr/error.hpp"
#include "nlr/export.hpp"
#include "nlr/trainer.hpp"
#include "support.hpp"

using namespace nlr;
namespace fs = std::filesystem;

namespace {

// Small vector problem that trains in well under a second per epoch.
TrainConfig tiny(std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"data.source=blobs", "data.shape=8",      "data.samples=256",
                             "data.val_samples=128", "model.hidden=32", "model.feature_dim=16",
                             "train.epochs=4",     "train.batch_size=32"};
  o.insert(o.end(), extra.begin(), extra.end());
  return default_config(o);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<float>> values_of(const ParameterList<float>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

MetricsRecord without_time(MetricsRecord m) {
  m.seconds = 0;
  return m;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto cfg = tiny({"optim.lr=0"});
  Trainer tr(cfg, prepare_data(cfg));
  const auto before = values_of(tr.parameters());
  tr.train_epoch(0);
  CHECK(values_of(tr.parameters()) == before);
}

TEST_CASE("identical seeds give identical epochs") {
  const auto cfg = tiny();
  Trainer a(cfg, prepare_data(cfg)), b(cfg, prepare_data(cfg));
  for (std::size_t e = 0; e < 2; ++e) CHECK(without_time(a.train_epoch(e)) == without_time(b.train_epoch(e)));
  CHECK(values_of(a.parameters()) == values_of(b.parameters()));
}

TEST_CASE("cross-entropy on clean separated blobs learns") {
  const auto cfg = tiny({"data.separation=4", "noise.epsilon=0", "losses.A=false", "losses.B=false",
                         "losses.C=false", "losses.ce_baseline=true", "train.epochs=30", "data.samples=1000",
                         "data.val_samples=500"});
  Trainer tr(cfg, prepare_data(cfg));
  double best = 0;
  for (std::size_t e = 0; e < 30; ++e) best = std::max(best, tr.train_epoch(e).val_acc_clean);
  CHECK(best >= 0.9);
}

TEST_CASE("metrics are well formed") {
  const auto cfg = tiny();
  Trainer tr(cfg, prepare_data(cfg));
  const auto m = tr.train_epoch(0);
  for (double acc : {m.train_acc_noisy, m.val_acc_clean, m.corrupted_subset_acc}) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  CHECK(m.loss.total == doctest::Approx(m.loss.bootstrap + m.loss.reconstruction + m.loss.cluster).epsilon(1e-6));
  CHECK(m.loss.cluster == doctest::Approx(m.loss.cluster_consistency + m.loss.cluster_marginal_kl +
                                          m.loss.cluster_conditional_entropy)
                              .epsilon(1e-5));
}

TEST_CASE("divergence guard aborts the step") {
  const auto cfg = tiny({"train.divergence_threshold=0.001"});
  Trainer tr(cfg, prepare_data(cfg));
  CHECK_THROWS_AS(tr.train_epoch(0), DivergenceError);
}

TEST_CASE("run directory contents and summary") {
  test::TempDir dir("run");
  const auto cfg = tiny();
  const auto s = run_experiment(cfg, dir.path());
  CHECK(s.epochs_completed == 4);
  CHECK(s.best_acc >= s.last_acc);
  CHECK(s.gap == doctest::Approx(s.best_acc - s.last_acc));
  for (const char* f : {"config.copy", "metrics.csv", "timing.csv", "summary.txt", "checkpoints/init.ckpt",
                        "checkpoints/best.ckpt", "checkpoints/last.ckpt"})
    CHECK(fs::exists(dir / f));
  CHECK_FALSE(fs::exists(dir / ".lock"));

  std::istringstream csv(slurp(dir / "metrics.csv"));
  std::string header, line;
  std::getline(csv, header);
  CHECK(header == metrics_header());
  CHECK(header ==
        "epoch,lr,alpha,loss_total,loss_bootstrap,loss_rec,loss_cluster_R,loss_cluster_KL,loss_cluster_Hcx,"
        "train_acc_noisy,val_acc_clean,corrupted_subset_acc,seconds");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4);

  const auto back = read_summary(dir / "summary.txt");
  CHECK(back.best_acc == s.best_acc);
  CHECK(back.config_hash == config_hash(cfg));
  CHECK(to_text(load_config(dir / "config.copy")) == to_text(cfg));
}

TEST_CASE("rerun gives byte-identical metrics") {
  test::TempDir a("rerun-a"), b("rerun-b");
  const auto cfg = tiny();
  run_experiment(cfg, a.path());
  run_experiment(cfg, b.path());
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "summary.txt") == slurp(b / "summary.txt"));
}

TEST_CASE("resume matches uninterrupted training bit for bit") {
  test::TempDir whole("whole"), split("split");
  const auto cfg = tiny();
  run_experiment(cfg, whole.path());
  RunOptions first;
  first.stop_after = 2;
  CHECK(run_experiment(cfg, split.path(), first).epochs_completed == 2);
  RunOptions second;
  second.resume = true;
  run_experiment(cfg, split.path(), second);
  CHECK(slurp(whole / "metrics.csv") == slurp(split / "metrics.csv"));
  CHECK(load_checkpoint(whole / "checkpoints/last.ckpt") == load_checkpoint(split / "checkpoints/last.ckpt"));
}

TEST_CASE("restore rejects a checkpoint from another config") {
  const auto cfg = tiny();
  Trainer tr(cfg, prepare_data(cfg));
  auto ck = tr.snapshot();
  auto other_cfg = tiny({"optim.lr=0.05"});
  Trainer other(other_cfg, prepare_data(other_cfg));
  CHECK_THROWS_AS(other.restore(ck), HashMismatchError);
  CHECK_NOTHROW(tr.restore(ck));
}

TEST_CASE("checkpoint file round trip") {
  test::TempDir dir("ckpt");
  const auto cfg = tiny();
  Trainer tr(cfg, prepare_data(cfg));
  tr.train_epoch(0);
  const auto ck = tr.snapshot({{"epoch", 1.0}});
  save_checkpoint(ck, dir / "a.ckpt");
  CHECK(load_checkpoint(dir / "a.ckpt") == ck);
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "garbage";
  }
  CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
}

TEST_CASE("a live lock blocks a second writer") {
  test::TempDir dir("lock");
  {
    std::ofstream out(dir / ".lock");
    out << ::getppid();  // alive, and not this process
  }
  CHECK_THROWS_AS(run_experiment(tiny(), dir.path()), std::runtime_error);
}

TEST_CASE("invalid configs are rejected before training") {
  test::TempDir dir("invalid");
  auto cfg = tiny();
  cfg.losses.switches = {false, false, false, false};
  CHECK_THROWS_AS(run_experiment(cfg, dir.path()), ConfigError);
}

TEST_CASE("bootstrap pinned at alpha one reproduces the CE row") {
  test::TempDir ce("ce"), a("pinned");
  run_experiment(tiny({"losses.A=false", "losses.B=false", "losses.C=false", "losses.ce_baseline=true"}), ce.path());
  run_experiment(tiny({"losses.A=true", "losses.B=false", "losses.C=false", "alpha.start=1", "alpha.end=2"}),
                 a.path());
  CHECK(slurp(ce / "metrics.csv") == slurp(a / "metrics.csv"));
}

TEST_CASE("ablation grid") {
  const auto grid = ablation_grid();
  REQUIRE(grid.size() == 7);
  const std::vector<std::string> names{"CE", "+A", "+B", "+C", "+A+B", "+A+C", "+A+B+C"};
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(grid[i].name == names[i]);
    CHECK_NOTHROW(grid[i].switches.validate());
  }
  CHECK(grid[0].switches.ce_baseline);
  CHECK(ablation_dir_name("+A+B+C") == "abc");
  CHECK(ablation_dir_name("CE") == "ce");

  test::TempDir dir("ablate");
  const auto rows = run_ablation(tiny({"train.epochs=1"}), dir.path());
  REQUIRE(rows.size() == 7);
  for (const auto& r : rows) {
    INFO(r.name << " " << r.error);
    CHECK(r.summary.has_value());
  }
  std::istringstream csv(slurp(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  int n = 0;
  while (std::getline(csv, line)) {
    ++n;
    CHECK(line.find(",1,1,1,1,") != std::string::npos);  // shared seeds
  }
  CHECK(n == 7);
}

TEST_CASE("export writes one embedding row per sample") {
  test::TempDir dir("export");
  const auto cfg = tiny();
  run_experiment(cfg, dir.path());
  const auto data = prepare_data(cfg);
  const auto models = load_models(cfg, data.train.input_shape, dir / "checkpoints/last.ckpt");
  CHECK(write_embeddings(models, data.train, dir / "emb.csv") == data.train.size());
  std::istringstream csv(slurp(dir / "emb.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("index,f0,", 0) == 0);
  CHECK(header.find("f15,noisy_label,clean_label,cluster,predicted,corrupted") != std::string::npos);
  CHECK_THROWS_AS(load_models(tiny({"optim.lr=0.2"}), data.train.input_shape, dir / "checkpoints/last.ckpt"),
                  HashMismatchError);
}

TEST_CASE("reconstruction improves over the initial checkpoint") {
  test::TempDir dir("restore");
  const auto cfg = default_config({"data.samples=512", "data.val_samples=128", "model.hidden=64",
                                   "model.feature_dim=32", "train.epochs=6", "train.batch_size=32",
                                   "optim.lr=0.05"});
  run_experiment(cfg, dir.path());
  const auto data = prepare_data(cfg);
  const auto init = load_models(cfg, data.val.input_shape, dir / "checkpoints/init.ckpt");
  const auto last = load_models(cfg, data.val.input_shape, dir / "checkpoints/last.ckpt");
  CHECK(reconstruction_mse(last, data.val) < reconstruction_mse(init, data.val));
  const auto c0 = cutout_reconstruction(init, data.val, 0.25, 3);
  const auto c1 = cutout_reconstruction(last, data.val, 0.25, 3);
  CHECK(c1.masked_mse < c0.masked_mse);
  write_gallery(last, data.val, effective_policy(cfg.augment, data.val.input_shape), 1, 4, dir / "g.pgm");
  CHECK(slurp(dir / "g.pgm").rfind("P5\n", 0) == 0);
}
