// SPDX-License-Identifier: Apache-2.0
#include "nlr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "nlr/error.hpp"

namespace nlr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty())
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(to_size(p));
  return out;
}

std::string sizes_text(const std::vector<std::size_t>& xs) {
  return join<std::size_t>(xs, [](const std::size_t& v) { return std::to_string(v); });
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"data.source", [](const TrainConfig& c) { return to_string(c.data.source); },
       [](TrainConfig& c, const std::string& v) { c.data.source = parse_data_source(v); }},
      {"data.path", [](const TrainConfig& c) { return c.data.path; },
       [](TrainConfig& c, const std::string& v) { c.data.path = v; }},
      {"data.samples", [](const TrainConfig& c) { return std::to_string(c.data.samples); },
       [](TrainConfig& c, const std::string& v) { c.data.samples = to_size(v); }},
      {"data.val_samples", [](const TrainConfig& c) { return std::to_string(c.data.val_samples); },
       [](TrainConfig& c, const std::string& v) { c.data.val_samples = to_size(v); }},
      {"data.val_fraction", [](const TrainConfig& c) { return fmt(c.data.val_fraction); },
       [](TrainConfig& c, const std::string& v) { c.data.val_fraction = to_double(v); }},
      {"data.classes", [](const TrainConfig& c) { return std::to_string(c.data.classes); },
       [](TrainConfig& c, const std::string& v) { c.data.classes = to_size(v); }},
      {"data.shape", [](const TrainConfig& c) { return format_shape(c.data.shape); },
       [](TrainConfig& c, const std::string& v) { c.data.shape = parse_shape(v); }},
      {"data.separation", [](const TrainConfig& c) { return fmt(c.data.separation); },
       [](TrainConfig& c, const std::string& v) { c.data.separation = to_double(v); }},
      {"data.latent_dims", [](const TrainConfig& c) { return std::to_string(c.data.blob.latent_dims); },
       [](TrainConfig& c, const std::string& v) { c.data.blob.latent_dims = to_size(v); }},
      {"data.pixel_noise", [](const TrainConfig& c) { return fmt(c.data.blob.pixel_noise); },
       [](TrainConfig& c, const std::string& v) { c.data.blob.pixel_noise = to_double(v); }},

      {"noise.kind", [](const TrainConfig& c) { return to_string(c.noise.kind); },
       [](TrainConfig& c, const std::string& v) { c.noise.kind = parse_noise_kind(v); }},
      {"noise.epsilon", [](const TrainConfig& c) { return fmt(c.noise.epsilon); },
       [](TrainConfig& c, const std::string& v) { c.noise.epsilon = to_double(v); }},
      {"noise.wrap_around", [](const TrainConfig& c) { return fmt(c.noise.wrap_around); },
       [](TrainConfig& c, const std::string& v) { c.noise.wrap_around = to_bool(v); }},

      {"model.backbone", [](const TrainConfig& c) { return to_string(c.model.backbone); },
       [](TrainConfig& c, const std::string& v) { c.model.backbone = parse_backbone_kind(v); }},
      {"model.hidden", [](const TrainConfig& c) { return sizes_text(c.model.hidden); },
       [](TrainConfig& c, const std::string& v) { c.model.hidden = to_sizes(v); }},
      {"model.channels", [](const TrainConfig& c) { return sizes_text(c.model.channels); },
       [](TrainConfig& c, const std::string& v) { c.model.channels = to_sizes(v); }},
      {"model.feature_dim", [](const TrainConfig& c) { return std::to_string(c.model.feature_dim); },
       [](TrainConfig& c, const std::string& v) { c.model.feature_dim = to_size(v); }},
      {"model.clusters", [](const TrainConfig& c) { return std::to_string(c.model.clusters); },
       [](TrainConfig& c, const std::string& v) { c.model.clusters = to_size(v); }},

      {"losses.A", [](const TrainConfig& c) { return fmt(c.losses.switches.bootstrap); },
       [](TrainConfig& c, const std::string& v) { c.losses.switches.bootstrap = to_bool(v); }},
      {"losses.B", [](const TrainConfig& c) { return fmt(c.losses.switches.reconstruction); },
       [](TrainConfig& c, const std::string& v) { c.losses.switches.reconstruction = to_bool(v); }},
      {"losses.C", [](const TrainConfig& c) { return fmt(c.losses.switches.cluster); },
       [](TrainConfig& c, const std::string& v) { c.losses.switches.cluster = to_bool(v); }},
      {"losses.ce_baseline", [](const TrainConfig& c) { return fmt(c.losses.switches.ce_baseline); },
       [](TrainConfig& c, const std::string& v) { c.losses.switches.ce_baseline = to_bool(v); }},
      {"losses.lambda", [](const TrainConfig& c) { return fmt(c.losses.lambda); },
       [](TrainConfig& c, const std::string& v) { c.losses.lambda = to_double(v); }},
      {"losses.block_clean_grad", [](const TrainConfig& c) { return fmt(c.losses.block_clean_grad); },
       [](TrainConfig& c, const std::string& v) { c.losses.block_clean_grad = to_bool(v); }},
      {"losses.bootstrap_view",
       [](const TrainConfig& c) { return std::string(c.losses.bootstrap_on_augmented ? "augmented" : "clean"); },
       [](TrainConfig& c, const std::string& v) {
         if (v != "augmented" && v != "clean")
           throw std::invalid_argument("expected augmented or clean, got '" + v + "'");
         c.losses.bootstrap_on_augmented = v == "augmented";
       }},

      {"alpha.kind", [](const TrainConfig& c) { return loss::to_string(c.alpha.kind); },
       [](TrainConfig& c, const std::string& v) { c.alpha.kind = loss::parse_alpha_kind(v); }},
      {"alpha.start", [](const TrainConfig& c) { return fmt(c.alpha.start); },
       [](TrainConfig& c, const std::string& v) { c.alpha.start = to_double(v); }},
      {"alpha.end", [](const TrainConfig& c) { return fmt(c.alpha.end); },
       [](TrainConfig& c, const std::string& v) { c.alpha.end = to_double(v); }},
      {"alpha.per_step", [](const TrainConfig& c) { return fmt(c.alpha.per_step); },
       [](TrainConfig& c, const std::string& v) { c.alpha.per_step = to_bool(v); }},

      {"optim.lr", [](const TrainConfig& c) { return fmt(c.optim.lr); },
       [](TrainConfig& c, const std::string& v) { c.optim.lr = to_double(v); }},
      {"optim.momentum", [](const TrainConfig& c) { return fmt(c.optim.momentum); },
       [](TrainConfig& c, const std::string& v) { c.optim.momentum = to_double(v); }},
      {"optim.weight_decay", [](const TrainConfig& c) { return fmt(c.optim.weight_decay); },
       [](TrainConfig& c, const std::string& v) { c.optim.weight_decay = to_double(v); }},
      {"optim.decoupled_weight_decay", [](const TrainConfig& c) { return fmt(c.optim.decoupled_weight_decay); },
       [](TrainConfig& c, const std::string& v) { c.optim.decoupled_weight_decay = to_bool(v); }},
      {"optim.milestones",
       [](const TrainConfig& c) {
         return join<double>(c.optim.milestones, [](const double& v) { return fmt(v); });
       },
       [](TrainConfig& c, const std::string& v) {
         c.optim.milestones.clear();
         if (!v.empty())
           for (const auto& p : split(v, ',')) c.optim.milestones.push_back(to_double(p));
       }},
      {"optim.step_ratio", [](const TrainConfig& c) { return fmt(c.optim.step_ratio); },
       [](TrainConfig& c, const std::string& v) { c.optim.step_ratio = to_double(v); }},

      {"augment.ops",
       [](const TrainConfig& c) {
         return join<AugmentKind>(c.augment.pool, [](const AugmentKind& k) { return to_string(k); });
       },
       [](TrainConfig& c, const std::string& v) {
         c.augment.pool.clear();
         if (v == "all") {
           c.augment.pool = all_augment_kinds();
           return;
         }
         for (const auto& p : split(v, ',')) c.augment.pool.push_back(parse_augment_kind(p));
       }},
      {"augment.num_ops", [](const TrainConfig& c) { return std::to_string(c.augment.num_ops); },
       [](TrainConfig& c, const std::string& v) { c.augment.num_ops = to_size(v); }},
      {"augment.magnitude", [](const TrainConfig& c) { return fmt(c.augment.magnitude); },
       [](TrainConfig& c, const std::string& v) { c.augment.magnitude = to_double(v); }},

      {"train.epochs", [](const TrainConfig& c) { return std::to_string(c.train.epochs); },
       [](TrainConfig& c, const std::string& v) { c.train.epochs = to_size(v); }},
      {"train.batch_size", [](const TrainConfig& c) { return std::to_string(c.train.batch_size); },
       [](TrainConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
      {"train.divergence_threshold", [](const TrainConfig& c) { return fmt(c.train.divergence_threshold); },
       [](TrainConfig& c, const std::string& v) { c.train.divergence_threshold = to_double(v); }},
      {"train.record_time", [](const TrainConfig& c) { return fmt(c.train.record_time); },
       [](TrainConfig& c, const std::string& v) { c.train.record_time = to_bool(v); }},

      {"seed.init", [](const TrainConfig& c) { return std::to_string(c.seed.init); },
       [](TrainConfig& c, const std::string& v) { c.seed.init = to_u64(v); }},
      {"seed.data", [](const TrainConfig& c) { return std::to_string(c.seed.data); },
       [](TrainConfig& c, const std::string& v) { c.seed.data = to_u64(v); }},
      {"seed.augment", [](const TrainConfig& c) { return std::to_string(c.seed.augment); },
       [](TrainConfig& c, const std::string& v) { c.seed.augment = to_u64(v); }},
      {"seed.noise", [](const TrainConfig& c) { return std::to_string(c.seed.noise); },
       [](TrainConfig& c, const std::string& v) { c.seed.noise = to_u64(v); }},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

struct Entry {
  std::string key, value, where;
};

void assign(TrainConfig& cfg, const std::vector<Entry>& entries, std::vector<std::string>& issues) {
  for (const auto& e : entries) {
    if (e.key == "schema_version") continue;
    const Field* f = find_field(e.key);
    if (!f) {
      issues.push_back(e.where + ": unknown key '" + e.key + "'");
      continue;
    }
    try {
      f->set(cfg, e.value);
    } catch (const std::exception& ex) {
      issues.push_back(e.where + ": " + e.key + ": " + ex.what());
    }
  }
}

bool split_kv(const std::string& s, char sep, std::string& key, std::string& value) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos) return false;
  key = trim(s.substr(0, pos));
  value = trim(s.substr(pos + 1));
  return !key.empty();
}

std::vector<Entry> override_entries(const std::vector<std::string>& overrides,
                                    std::vector<std::string>& issues) {
  std::vector<Entry> out;
  for (const auto& o : overrides) {
    Entry e;
    e.where = "override '" + o + "'";
    if (!split_kv(o, '=', e.key, e.value)) {
      issues.push_back(e.where + ": expected key=value");
      continue;
    }
    if (e.key == "schema_version") {
      issues.push_back(e.where + ": schema_version cannot be overridden");
      continue;
    }
    out.push_back(e);
  }
  return out;
}

TrainConfig finish(TrainConfig cfg, const std::vector<Entry>& entries, std::vector<std::string> issues) {
  assign(cfg, entries, issues);
  for (auto& i : validate(cfg)) issues.push_back(std::move(i));
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

}  // namespace

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::images: return "images";
    case DataSource::blobs: return "blobs";
    case DataSource::file: return "file";
  }
  return "?";
}

DataSource parse_data_source(const std::string& s) {
  if (s == "images") return DataSource::images;
  if (s == "blobs") return DataSource::blobs;
  if (s == "file") return DataSource::file;
  throw std::invalid_argument("unknown data source '" + s + "' (expected images|blobs|file)");
}

Shape parse_shape(const std::string& s) {
  Shape out;
  for (const auto& p : split(s, 'x')) {
    const auto v = to_size(p);
    if (v == 0) throw std::invalid_argument("shape extents must be positive, got '" + s + "'");
    out.push_back(v);
  }
  if (out.size() == 2) out.insert(out.begin(), 1);
  if (out.empty() || out.size() > 3)
    throw std::invalid_argument("expected D, HxW or CxHxW, got '" + s + "'");
  return out;
}

std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

ModelSpec TrainConfig::model_spec(const Shape& input_shape) const {
  ModelSpec spec;
  spec.backbone = model.backbone;
  spec.input_shape = input_shape;
  spec.hidden = model.hidden;
  spec.channels = model.channels;
  spec.feature_dim = model.feature_dim;
  spec.num_classes = data.classes;
  spec.num_clusters = model.clusters == 0 ? data.classes : model.clusters;
  return spec;
}

loss::AlphaSchedule TrainConfig::alpha_schedule() const {
  const auto e = static_cast<double>(train.epochs);
  return {alpha.kind, alpha.start * e, alpha.end * e};
}

void TrainConfig::set_all_seeds(std::uint64_t s) { seed = {s, s, s, s}; }

std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> issues;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) issues.push_back(msg);
  };

  need(c.data.classes >= 2, "data.classes must be >= 2");
  if (c.data.source == DataSource::file) {
    need(!c.data.path.empty(), "data.path is required when data.source = file");
    need(c.data.val_fraction > 0 && c.data.val_fraction < 1, "data.val_fraction must lie in (0, 1)");
  } else {
    need(c.data.samples >= c.data.classes, "data.samples must be >= data.classes");
    need(c.data.val_samples >= 1, "data.val_samples must be >= 1");
    need(c.data.separation >= 0, "data.separation must be >= 0");
    if (c.data.source == DataSource::images) {
      need(c.data.shape.size() == 3, "data.shape must be HxW or CxHxW for data.source = images");
      need(c.data.blob.latent_dims >= 1, "data.latent_dims must be >= 1");
    } else {
      need(c.data.shape.size() == 1, "data.shape must be a single extent D for data.source = blobs");
    }
    need(c.data.blob.pixel_noise >= 0, "data.pixel_noise must be >= 0");
  }

  need(c.noise.epsilon >= 0 && c.noise.epsilon <= 1, "noise.epsilon must lie in [0, 1]");

  if (c.model.backbone == BackboneKind::mlp)
    need(!c.model.hidden.empty(), "model.hidden must list at least one width for the mlp backbone");
  else
    need(!c.model.channels.empty(), "model.channels must list at least one block for the conv backbone");
  for (auto w : c.model.hidden) need(w > 0, "model.hidden widths must be positive");
  for (auto w : c.model.channels) need(w > 0, "model.channels must be positive");
  need(c.model.feature_dim > 0, "model.feature_dim must be positive");
  need(c.model.clusters != 1, "model.clusters must be 0 (= classes) or >= 2");

  const auto& sw = c.losses.switches;
  if (!sw.any_component() && !sw.ce_baseline)
    issues.push_back(
        "losses.A, losses.B and losses.C are all disabled; set losses.ce_baseline = true to train the "
        "cross-entropy baseline");
  if (sw.ce_baseline && sw.any_component())
    issues.push_back("losses.ce_baseline requires losses.A, losses.B and losses.C to be false");
  need(c.losses.lambda >= 0, "losses.lambda must be >= 0");

  need(c.alpha.start >= 0, "alpha.start must be >= 0");
  need(c.alpha.start < c.alpha.end, "alpha.start must be < alpha.end");

  need(c.optim.lr >= 0, "optim.lr must be >= 0");
  need(c.optim.momentum >= 0 && c.optim.momentum < 1, "optim.momentum must lie in [0, 1)");
  need(c.optim.weight_decay >= 0, "optim.weight_decay must be >= 0");
  need(c.optim.step_ratio > 0, "optim.step_ratio must be > 0");
  for (std::size_t i = 0; i < c.optim.milestones.size(); ++i) {
    const double m = c.optim.milestones[i];
    need(m > 0 && m < 1, "optim.milestones must lie in (0, 1)");
    if (i) need(c.optim.milestones[i - 1] < m, "optim.milestones must be strictly increasing");
  }

  need(!c.augment.pool.empty(), "augment.ops must name at least one op");
  need(c.augment.num_ops >= 1, "augment.num_ops must be >= 1");
  need(c.augment.magnitude >= 0 && c.augment.magnitude <= 1, "augment.magnitude must lie in [0, 1]");

  need(c.train.epochs >= 1, "train.epochs must be >= 1");
  need(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  need(c.train.divergence_threshold > 0, "train.divergence_threshold must be > 0");
  return issues;
}

TrainConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  std::vector<std::string> issues;
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> seen;
  bool have_version = false;

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    Entry e;
    e.where = "line " + std::to_string(lineno);
    if (!split_kv(line, '=', e.key, e.value)) {
      issues.push_back(e.where + ": expected 'key = value'");
      continue;
    }
    if (auto [it, fresh] = seen.emplace(e.key, lineno); !fresh) {
      issues.push_back(e.where + ": duplicate key '" + e.key + "' (first on line " +
                       std::to_string(it->second) + ")");
      continue;
    }
    if (e.key == "schema_version") {
      have_version = true;
      if (e.value != std::to_string(kConfigSchemaVersion))
        issues.push_back(e.where + ": unsupported schema_version '" + e.value + "' (expected " +
                         std::to_string(kConfigSchemaVersion) + ")");
      continue;
    }
    entries.push_back(e);
  }
  if (!have_version) issues.push_back("missing schema_version");

  auto more = override_entries(overrides, issues);
  entries.insert(entries.end(), more.begin(), more.end());
  return finish(TrainConfig{}, entries, std::move(issues));
}

TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

TrainConfig default_config(const std::vector<std::string>& overrides) {
  std::vector<std::string> issues;
  auto entries = override_entries(overrides, issues);
  return finish(TrainConfig{}, entries, std::move(issues));
}

std::string to_text(const TrainConfig& cfg) {
  std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace nlr
