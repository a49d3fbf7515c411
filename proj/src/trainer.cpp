// SPDX-License-Identifier: Apache-2.0
#include "nlr/trainer.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nlr/augment.hpp"
#include "nlr/error.hpp"
#include "nlr/rng.hpp"

namespace nlr {

namespace fs = std::filesystem;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kDataStream = 0x64617461;     // "data"
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;    // "nois"
constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"
constexpr std::uint64_t kAugmentStream = 0x6175676d;  // "augm"

constexpr std::size_t kEvalChunk = 256;
const std::string kVelocityPrefix = "velocity/";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Exclusive claim on a run directory. A lock left behind by a dead process
/// is taken over.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && owner != ::getpid() && ::kill(static_cast<pid_t>(owner), 0) == 0)
        throw std::runtime_error("run directory is locked by process " + std::to_string(owner) + " (" +
                                 path_.string() + ")");
      fs::remove(path_);
    }
    throw std::runtime_error("cannot create lock file " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

}  // namespace

DataSplit prepare_data(const TrainConfig& cfg) {
  DataSplit split;
  const auto& d = cfg.data;
  if (d.source == DataSource::file) {
    LabeledDataset all = load_dataset(d.path);
    if (all.num_classes != d.classes)
      throw std::invalid_argument("dataset " + d.path + " has " + std::to_string(all.num_classes) +
                                  " classes, config says " + std::to_string(d.classes));
    const auto n_val = static_cast<std::size_t>(std::llround(d.val_fraction * static_cast<double>(all.size())));
    if (n_val == 0 || n_val >= all.size())
      throw std::invalid_argument("data.val_fraction leaves an empty training or validation set");
    split.train = all.slice(0, all.size() - n_val);
    split.val = all.slice(all.size() - n_val, all.size());
  } else {
    const std::size_t total = d.samples + d.val_samples;
    LabeledDataset all = generate_blobs(total, d.classes, d.shape, d.separation,
                                        derive_seed({cfg.seed.data, kDataStream}), d.blob);
    split.train = all.slice(0, d.samples);
    split.val = all.slice(d.samples, total);
  }
  if (!split.train.noise_applied) {
    NoiseSpec spec;
    spec.kind = cfg.noise.kind;
    spec.epsilon = cfg.noise.epsilon;
    spec.num_classes = d.classes;
    spec.seed = derive_seed({cfg.seed.noise, kNoiseStream});
    spec.wrap_around = cfg.noise.wrap_around;
    split.train = inject_noise(split.train, spec);
  }
  return split;
}

std::uint64_t augment_seed(std::uint64_t base, std::size_t epoch, std::size_t index) {
  return derive_seed({base, kAugmentStream, epoch, index});
}

AugmentPolicy effective_policy(const AugmentPolicy& policy, const Shape& input_shape) {
  AugmentPolicy p = policy;
  if (input_shape.size() != 3) {
    std::erase_if(p.pool, [](AugmentKind k) { return is_spatial(k); });
    if (p.pool.empty())
      throw std::invalid_argument("augment.ops holds only spatial ops, which need image inputs");
  }
  return p;
}

Trainer::Trainer(TrainConfig cfg, DataSplit data)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      models_(cfg_.model_spec(data_.train.input_shape), cfg_.seed.init),
      params_(models_.parameters()),
      policy_(effective_policy(cfg_.augment, data_.train.input_shape)),
      hash_(config_hash(cfg_)) {
  opt_.momentum = cfg_.optim.momentum;
  opt_.weight_decay = cfg_.optim.weight_decay;
  opt_.lr = cfg_.optim.lr;
  opt_.decoupled_weight_decay = cfg_.optim.decoupled_weight_decay;
  opt_.init(params_);
}

MetricsRecord Trainer::train_epoch(std::size_t epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& train = data_.train;
  const std::size_t n = train.size();
  const std::size_t bs = cfg_.train.batch_size;
  const std::size_t total_epochs = cfg_.train.epochs;
  const std::size_t steps = (n + bs - 1) / bs;
  const std::size_t d = train.sample_size();
  const std::size_t classes = train.num_classes;
  const auto schedule = cfg_.alpha_schedule();
  const auto& sw = cfg_.losses.switches;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed({cfg_.seed.data, kShuffleStream, epoch}));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.lr = lr_at(cfg_.optim.lr, epoch, total_epochs, cfg_.optim.milestones, cfg_.optim.step_ratio);
  rec.alpha = sw.bootstrap ? loss::alpha_at(schedule, static_cast<double>(epoch), total_epochs) : 1.0;
  opt_.lr = rec.lr;

  ad::Tape<float> tape;
  std::vector<float> clean, augmented;
  std::vector<std::int32_t> labels;
  loss::LossBreakdown sums;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t begin = s * bs, end = std::min(n, begin + bs), b = end - begin;
    clean.resize(b * d);
    augmented.resize(b * d);
    labels.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t idx = order[begin + i];
      const auto x = train.sample(idx);
      std::copy(x.begin(), x.end(), clean.begin() + static_cast<std::ptrdiff_t>(i * d));
      const auto pipeline = sample_pipeline(policy_, augment_seed(cfg_.seed.augment, epoch, idx));
      apply(pipeline, x, train.input_shape, std::span<float>(augmented).subspan(i * d, d));
      labels[i] = train.noisy_labels[idx];
    }
    const double alpha =
        cfg_.alpha.per_step
            ? loss::alpha_at(schedule, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps),
                             total_epochs)
            : rec.alpha;

    tape.clear();
    const Shape shape = batch_shape(b, train.input_shape);
    auto x_clean = Tensor<float>::from_values(shape, clean);
    auto x_aug = Tensor<float>::from_values(shape, augmented);
    auto feat_aug = models_.backbone.encode(tape, x_aug);
    Tensor<float> feat_clean;
    if (sw.cluster || !cfg_.losses.bootstrap_on_augmented) feat_clean = models_.backbone.encode(tape, x_clean);

    loss::LossTerms<float> terms;
    const auto log_pred = models_.classifier.log_probabilities(
        tape, cfg_.losses.bootstrap_on_augmented ? feat_aug : feat_clean);
    const auto noisy = loss::one_hot<float>(labels, classes);
    terms.classification = sw.bootstrap ? loss::bootstrap_loss(tape, log_pred, noisy, alpha)
                                        : loss::cross_entropy(tape, log_pred, noisy);
    if (sw.reconstruction)
      terms.reconstruction = loss::reconstruction_loss(tape, models_.decoder.decode(tape, feat_aug), x_clean);
    if (sw.cluster) {
      const auto p_clean = models_.cluster.probabilities(tape, feat_clean);
      const auto p_aug = models_.cluster.probabilities(tape, feat_aug);
      terms.cluster = loss::cluster_loss(tape, p_clean, p_aug, cfg_.losses.lambda, cfg_.losses.block_clean_grad);
    }
    const auto total = loss::total_loss(tape, terms, sw);
    const double value = total.breakdown.total;
    if (!std::isfinite(value) || value > cfg_.train.divergence_threshold) {
      std::ostringstream msg;
      msg << "loss diverged at epoch " << epoch << ", step " << s << ": " << value;
      throw DivergenceError(msg.str());
    }

    for (auto& p : params_) p.tensor.zero_grad();
    tape.backward(total.total);
    sgd_step(params_, opt_);

    const double w = static_cast<double>(b);
    sums.bootstrap += w * total.breakdown.bootstrap;
    sums.reconstruction += w * total.breakdown.reconstruction;
    sums.cluster += w * total.breakdown.cluster;
    sums.cluster_consistency += w * total.breakdown.cluster_consistency;
    sums.cluster_marginal_kl += w * total.breakdown.cluster_marginal_kl;
    sums.cluster_conditional_entropy += w * total.breakdown.cluster_conditional_entropy;
    sums.total += w * value;
  }
  const double inv = 1.0 / static_cast<double>(n);
  rec.loss = {sums.bootstrap * inv,           sums.reconstruction * inv,      sums.cluster * inv,
              sums.cluster_consistency * inv, sums.cluster_marginal_kl * inv, sums.cluster_conditional_entropy * inv,
              sums.total * inv};

  const Accuracy acc = evaluate();
  rec.train_acc_noisy = acc.train_noisy;
  rec.val_acc_clean = acc.val_clean;
  rec.corrupted_subset_acc = acc.corrupted_clean;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<std::int32_t> Trainer::predict(const LabeledDataset& ds) const {
  ad::Tape<float> tape;
  tape.set_recording(false);
  std::vector<std::int32_t> out(ds.size());
  const std::size_t d = ds.sample_size();
  for (std::size_t begin = 0; begin < ds.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), begin + kEvalChunk);
    const std::size_t b = end - begin;
    std::vector<float> buf(ds.features.begin() + static_cast<std::ptrdiff_t>(begin * d),
                           ds.features.begin() + static_cast<std::ptrdiff_t>(end * d));
    tape.clear();
    auto x = Tensor<float>::from_values(batch_shape(b, ds.input_shape), std::move(buf));
    const auto logits = models_.classifier.logits(tape, models_.backbone.encode(tape, x));
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i)
      out[begin + i] = static_cast<std::int32_t>(argmax_row(logits.values().subspan(i * k, k)));
  }
  return out;
}

Accuracy Trainer::evaluate() const {
  Accuracy acc;
  const auto& train = data_.train;
  const auto pt = predict(train);
  std::size_t hit_noisy = 0, corrupted = 0, hit_corrupted = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    hit_noisy += pt[i] == train.noisy_labels[i];
    if (train.corrupted[i]) {
      ++corrupted;
      hit_corrupted += pt[i] == train.clean_labels[i];
    }
  }
  acc.train_noisy = static_cast<double>(hit_noisy) / static_cast<double>(train.size());
  acc.corrupted_clean = corrupted ? static_cast<double>(hit_corrupted) / static_cast<double>(corrupted) : 0.0;

  const auto& val = data_.val;
  const auto pv = predict(val);
  std::size_t hit_val = 0;
  for (std::size_t i = 0; i < val.size(); ++i) hit_val += pv[i] == val.clean_labels[i];
  acc.val_clean = val.size() ? static_cast<double>(hit_val) / static_cast<double>(val.size()) : 0.0;
  return acc;
}

Checkpoint Trainer::snapshot(const std::map<std::string, double>& meta) const {
  Checkpoint ck;
  ck.config_hash = hash_;
  ck.arrays = export_parameters(params_);
  ParameterList<float> vel;
  for (std::size_t i = 0; i < params_.size(); ++i) vel.push_back({params_[i].name, opt_.velocity[i]});
  auto v = export_parameters(vel, kVelocityPrefix);
  ck.arrays.insert(ck.arrays.end(), v.begin(), v.end());
  ck.meta = meta;
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.config_hash != hash_)
    throw HashMismatchError("checkpoint config hash " + hash_hex(ck.config_hash) +
                            " does not match configuration hash " + hash_hex(hash_));
  import_parameters(ck, params_);
  ParameterList<float> vel;
  bool any = false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    vel.push_back({params_[i].name, opt_.velocity[i]});
    any = any || ck.find(kVelocityPrefix + params_[i].name);
  }
  if (any) import_parameters(ck, vel, kVelocityPrefix);
}

std::string metrics_header() {
  return "epoch,lr,alpha,loss_total,loss_bootstrap,loss_rec,loss_cluster_R,loss_cluster_KL,"
         "loss_cluster_Hcx,train_acc_noisy,val_acc_clean,corrupted_subset_acc,seconds";
}

std::string metrics_row(const MetricsRecord& m) {
  std::string row = std::to_string(m.epoch);
  for (double v : {m.lr, m.alpha, m.loss.total, m.loss.bootstrap, m.loss.reconstruction,
                   m.loss.cluster_consistency, m.loss.cluster_marginal_kl, m.loss.cluster_conditional_entropy,
                   m.train_acc_noisy, m.val_acc_clean, m.corrupted_subset_acc, m.seconds})
    row += "," + fmt(v);
  return row;
}

void write_summary(const RunSummary& s, const fs::path& path) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "best_acc = %.17g\nbest_epoch = %zu\nlast_acc = %.17g\ngap = %.17g\nepochs_completed = %zu\n"
                "config_hash = %s\n",
                s.best_acc, s.best_epoch, s.last_acc, s.gap, s.epochs_completed, hash_hex(s.config_hash).c_str());
  write_text_atomic(path, buf);
}

RunSummary read_summary(const fs::path& path) {
  RunSummary s;
  std::istringstream in(read_text(path));
  std::string key, eq, value;
  while (in >> key >> eq >> value) {
    if (key == "best_acc") s.best_acc = std::stod(value);
    else if (key == "best_epoch") s.best_epoch = std::stoul(value);
    else if (key == "last_acc") s.last_acc = std::stod(value);
    else if (key == "gap") s.gap = std::stod(value);
    else if (key == "epochs_completed") s.epochs_completed = std::stoul(value);
    else if (key == "config_hash") s.config_hash = std::stoull(value, nullptr, 16);
  }
  return s;
}

RunSummary run_experiment(const TrainConfig& cfg, const fs::path& run_dir, const RunOptions& options) {
  if (auto issues = validate(cfg); !issues.empty()) throw ConfigError(std::move(issues));
  fs::create_directories(run_dir / "checkpoints");
  RunLock lock(run_dir / ".lock");

  const fs::path ckpt_dir = run_dir / "checkpoints";
  const fs::path metrics_path = run_dir / "metrics.csv";
  const fs::path timing_path = run_dir / "timing.csv";
  const fs::path last_path = ckpt_dir / "last.ckpt";

  RunSummary summary;
  summary.config_hash = config_hash(cfg);
  Trainer trainer(cfg, prepare_data(cfg));

  std::vector<std::string> rows, timing;
  std::size_t start = 0;
  if (options.resume && fs::exists(last_path)) {
    const Checkpoint ck = load_checkpoint(last_path);
    trainer.restore(ck);
    start = static_cast<std::size_t>(ck.meta.at("epoch"));
    summary.best_acc = ck.meta.at("best_acc");
    summary.best_epoch = static_cast<std::size_t>(ck.meta.at("best_epoch"));
    summary.last_acc = ck.meta.at("last_acc");
    auto keep = [&](const fs::path& p, std::vector<std::string>& out) {
      if (!fs::exists(p)) return;
      std::istringstream in(read_text(p));
      std::string line;
      std::getline(in, line);  // header
      while (out.size() < start && std::getline(in, line)) out.push_back(line);
    };
    keep(metrics_path, rows);
    keep(timing_path, timing);
    if (rows.size() != start)
      throw std::runtime_error("metrics.csv holds " + std::to_string(rows.size()) + " epochs, checkpoint says " +
                               std::to_string(start));
  } else {
    save_checkpoint(trainer.snapshot({{"epoch", 0.0}}), ckpt_dir / "init.ckpt");
  }
  write_text_atomic(run_dir / "config.copy", to_text(cfg));

  auto flush_csv = [](const fs::path& path, const std::string& header, const std::vector<std::string>& lines) {
    std::string text = header + "\n";
    for (const auto& l : lines) text += l + "\n";
    write_text_atomic(path, text);
  };

  const std::size_t total = cfg.train.epochs;
  std::size_t epoch = start;
  for (; epoch < total; ++epoch) {
    if (options.stop_after && epoch >= options.stop_after) break;
    MetricsRecord m;
    try {
      m = trainer.train_epoch(epoch);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + "; last good checkpoint: " +
                            (fs::exists(last_path) ? last_path : ckpt_dir / "init.ckpt").string());
    }
    const double seconds = m.seconds;
    if (!cfg.train.record_time) m.seconds = 0;
    rows.push_back(metrics_row(m));
    timing.push_back(std::to_string(epoch) + "," + fmt(seconds));
    flush_csv(metrics_path, metrics_header(), rows);
    flush_csv(timing_path, "epoch,seconds", timing);

    if (epoch == 0 || m.val_acc_clean > summary.best_acc) {
      summary.best_acc = m.val_acc_clean;
      summary.best_epoch = epoch;
      save_checkpoint(trainer.snapshot({{"epoch", static_cast<double>(epoch + 1)}}), ckpt_dir / "best.ckpt");
    }
    summary.last_acc = m.val_acc_clean;
    save_checkpoint(trainer.snapshot({{"epoch", static_cast<double>(epoch + 1)},
                                      {"best_acc", summary.best_acc},
                                      {"best_epoch", static_cast<double>(summary.best_epoch)},
                                      {"last_acc", summary.last_acc}}),
                    last_path);
    if (options.log)
      *options.log << "epoch " << std::setw(3) << epoch << "  lr " << fmt(m.lr) << "  alpha " << fmt(m.alpha)
                   << "  loss " << fmt(m.loss.total) << "  train(noisy) " << fmt(m.train_acc_noisy) << "  val "
                   << fmt(m.val_acc_clean) << "  corrupted " << fmt(m.corrupted_subset_acc) << "  "
                   << fmt(seconds) << "s\n";
  }
  summary.epochs_completed = epoch;
  summary.gap = summary.best_acc - summary.last_acc;
  write_summary(summary, run_dir / "summary.txt");
  return summary;
}

std::vector<AblationRow> ablation_grid() {
  auto row = [](std::string name, bool a, bool b, bool c) {
    AblationRow r;
    r.name = std::move(name);
    r.switches = {a, b, c, !(a || b || c)};
    return r;
  };
  return {row("CE", false, false, false), row("+A", true, false, false),   row("+B", false, true, false),
          row("+C", false, false, true),  row("+A+B", true, true, false),  row("+A+C", true, false, true),
          row("+A+B+C", true, true, true)};
}

std::string ablation_dir_name(const std::string& row_name) {
  if (row_name == "CE") return "ce";
  std::string out;
  for (char ch : row_name)
    if (ch != '+') out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const fs::path& out_dir, std::ostream* log) {
  fs::create_directories(out_dir);
  auto rows = ablation_grid();
  for (auto& row : rows) {
    TrainConfig cfg = base;
    cfg.losses.switches = row.switches;
    if (log) *log << "== " << row.name << "\n";
    try {
      RunOptions opts;
      opts.log = log;
      row.summary = run_experiment(cfg, out_dir / ablation_dir_name(row.name), opts);
    } catch (const std::exception& e) {
      row.error = e.what();
      if (log) *log << "   failed: " << row.error << "\n";
    }
  }

  std::string csv = "row,A,B,C,seed_init,seed_data,seed_augment,seed_noise,best_acc,best_epoch,last_acc,gap,status\n";
  for (const auto& r : rows) {
    csv += r.name + "," + (r.switches.bootstrap ? "1" : "0") + "," + (r.switches.reconstruction ? "1" : "0") + "," +
           (r.switches.cluster ? "1" : "0") + "," + std::to_string(base.seed.init) + "," +
           std::to_string(base.seed.data) + "," + std::to_string(base.seed.augment) + "," +
           std::to_string(base.seed.noise) + ",";
    if (r.summary)
      csv += fmt(r.summary->best_acc) + "," + std::to_string(r.summary->best_epoch) + "," +
             fmt(r.summary->last_acc) + "," + fmt(r.summary->gap) + ",ok\n";
    else {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      csv += ",,,,failed: " + err + "\n";
    }
  }
  write_text_atomic(out_dir / "ablation.csv", csv);
  return rows;
}

void print_ablation_table(const TrainConfig& base, const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "seeds: init=" << base.seed.init << " data=" << base.seed.data << " augment=" << base.seed.augment
      << " noise=" << base.seed.noise << "\n";
  out << std::left << std::setw(9) << "row" << " A B C   best    last    gap     best_epoch\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(9) << r.name << " " << (r.switches.bootstrap ? 'x' : '-') << ' '
        << (r.switches.reconstruction ? 'x' : '-') << ' ' << (r.switches.cluster ? 'x' : '-') << "   ";
    if (r.summary) {
      out << std::fixed << std::setprecision(4) << r.summary->best_acc << "  " << r.summary->last_acc << "  "
          << std::showpos << r.summary->gap << std::noshowpos << "  " << r.summary->best_epoch << "\n";
      out.unsetf(std::ios::floatfield);
      out << std::setprecision(6);
    } else {
      out << "FAILED: " << r.error << "\n";
    }
  }
}

}  // namespace nlr
