#include "semivit/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "semivit/errors.hpp"
#include "semivit/rng.hpp"

namespace semivit {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_')) return false;
  }
  return true;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": invalid " + want + " '" + value + "'");
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "boolean");
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

struct Binding {
  std::function<void(const std::string&, const std::string&)> set;
  std::function<std::string()> get;
};

using Bindings = std::map<std::string, Binding>;

void bind_key(Bindings& b, const std::string& key, int& v) {
  b[key] = {[&v](const std::string& k, const std::string& s) {
              const auto x = to_int(k, s);
              if (x < INT32_MIN || x > INT32_MAX) bad_value(k, s, "integer");
              v = static_cast<int>(x);
            },
            [&v] { return std::to_string(v); }};
}
void bind_key(Bindings& b, const std::string& key, std::uint64_t& v) {
  b[key] = {[&v](const std::string& k, const std::string& s) { v = to_u64(k, s); },
            [&v] { return std::to_string(v); }};
}
void bind_key(Bindings& b, const std::string& key, double& v) {
  b[key] = {[&v](const std::string& k, const std::string& s) { v = to_double(k, s); },
            [&v] { return fmt_double(v); }};
}
void bind_key(Bindings& b, const std::string& key, bool& v) {
  b[key] = {[&v](const std::string& k, const std::string& s) { v = to_bool(k, s); },
            [&v] { return std::string(v ? "true" : "false"); }};
}
void bind_key(Bindings& b, const std::string& key, std::string& v) {
  b[key] = {[&v](const std::string&, const std::string& s) { v = s; }, [&v] { return v; }};
}

template <typename E>
void bind_enum(Bindings& b, const std::string& key, E& v, E (*parse)(std::string_view)) {
  b[key] = {[&v, parse](const std::string& k, const std::string& s) {
              try {
                v = parse(s);
              } catch (const ConfigError& e) {
                throw ConfigError(k + ": " + e.what());
              }
            },
            [&v] { return std::string(to_string(v)); }};
}

void bind_stage(Bindings& b, const std::string& p, StageConfig& s) {
  bind_key(b, p + "epochs", s.epochs);
  bind_key(b, p + "warmup_epochs", s.warmup_epochs);
  bind_key(b, p + "base_lr", s.base_lr);
  bind_key(b, p + "min_lr", s.min_lr);
  bind_key(b, p + "weight_decay", s.weight_decay);
  bind_key(b, p + "layer_decay", s.layer_decay);
  bind_key(b, p + "beta1", s.beta1);
  bind_key(b, p + "beta2", s.beta2);
  bind_key(b, p + "mu", s.mu);
  bind_key(b, p + "tau", s.tau);
  bind_key(b, p + "ema_momentum", s.ema_momentum);
  bind_key(b, p + "label_smoothing", s.label_smoothing);
  bind_key(b, p + "mixup_alpha", s.mixup_alpha);
  bind_key(b, p + "cutmix_alpha", s.cutmix_alpha);
  bind_key(b, p + "switch_prob", s.switch_prob);
  bind_key(b, p + "drop_path", s.drop_path);
  bind_key(b, p + "unlabeled_ratio", s.unlabeled_ratio);
  bind_key(b, p + "batch_size", s.batch_size);
  bind_enum(b, p + "framework", s.framework, &parse_framework);
  bind_enum(b, p + "unlabeled_mixup", s.unlabeled_mixup, &parse_unlabeled_mixup);
  bind_key(b, p + "smooth_pseudo_labels", s.smooth_pseudo_labels);
  bind_key(b, p + "unlabeled_cutmix", s.unlabeled_cutmix);
}

Bindings bindings(RunConfig& c) {
  Bindings b;
  bind_key(b, "run.name", c.name);
  bind_key(b, "run.out_dir", c.out_dir);
  bind_key(b, "run.seed", c.seed);
  bind_key(b, "run.eval_interval", c.eval_interval);
  bind_key(b, "run.checkpoint_interval", c.checkpoint_interval);
  bind_key(b, "run.eval_batch", c.eval_batch);

  bind_key(b, "data.source", c.data.source);
  bind_key(b, "data.train_manifest", c.data.train_manifest);
  bind_key(b, "data.labeled_manifest", c.data.labeled_manifest);
  bind_key(b, "data.unlabeled_manifest", c.data.unlabeled_manifest);
  bind_key(b, "data.eval_manifest", c.data.eval_manifest);
  bind_key(b, "data.num_classes", c.data.num_classes);
  bind_key(b, "data.label_fraction", c.data.label_fraction);
  bind_key(b, "data.synthetic.train_size", c.data.synthetic_train);
  bind_key(b, "data.synthetic.eval_size", c.data.synthetic_eval);
  bind_key(b, "data.synthetic.image_size", c.data.image_size);
  bind_key(b, "data.synthetic.noise", c.data.synthetic_noise);
  bind_key(b, "data.synthetic.seed", c.data.synthetic_seed);

  bind_key(b, "model.image_size", c.model.image_size);
  bind_key(b, "model.patch_size", c.model.patch_size);
  bind_key(b, "model.in_chans", c.model.in_chans);
  bind_key(b, "model.embed_dim", c.model.embed_dim);
  bind_key(b, "model.depth", c.model.depth);
  bind_key(b, "model.num_heads", c.model.num_heads);
  bind_key(b, "model.mlp_ratio", c.model.mlp_ratio);
  bind_enum(b, "model.pos_embed", c.model.pos_embed, &parse_pos_embed);
  bind_enum(b, "model.pool", c.model.pool, &parse_pool);

  bind_key(b, "augment.weak.crop_min", c.augment.weak_crop_min);
  bind_key(b, "augment.weak.jitter", c.augment.weak_jitter);
  bind_key(b, "augment.strong.crop_min", c.augment.strong_crop_min);
  bind_key(b, "augment.strong.ra_ops", c.augment.ra_ops);
  bind_key(b, "augment.strong.ra_magnitude", c.augment.ra_magnitude);
  bind_key(b, "augment.strong.erase_prob", c.augment.erase_prob);
  bind_key(b, "augment.labeled_policy", c.augment.labeled_policy);

  bind_key(b, "stage1.init", c.init);
  bind_key(b, "stage2.enabled", c.stage2_enabled);
  bind_key(b, "stage3.enabled", c.stage3_enabled);
  bind_stage(b, "stage2.", c.stage2);
  bind_stage(b, "stage3.", c.stage3);
  return b;
}

void prefix_error(const std::string& prefix, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  }
}

}  // namespace

ConfigMap ConfigMap::parse(std::string_view text, std::string_view origin) {
  ConfigMap m;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    if (m.entries_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    m.entries_[key] = std::string(trim(line.substr(eq + 1)));
  }
  return m;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError("invalid key '" + key + "'");
  entries_[key] = value;
}

void ConfigMap::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like key=value");
  }
  set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
}

std::optional<std::string> ConfigMap::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string ConfigMap::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

AugmentPolicy AugmentConfig::weak() const {
  AugmentPolicy p = AugmentPolicy::weak();
  p.crop_scale.first = weak_crop_min;
  p.color_jitter = weak_jitter;
  return p;
}

AugmentPolicy AugmentConfig::strong() const {
  AugmentPolicy p = AugmentPolicy::strong();
  p.crop_scale.first = strong_crop_min;
  p.rand_augment.num_ops = ra_ops;
  p.rand_augment.magnitude = ra_magnitude;
  p.erase_prob = erase_prob;
  return p;
}

AugmentPolicy AugmentConfig::labeled() const {
  if (labeled_policy == "weak") return weak();
  if (labeled_policy == "identity") return AugmentPolicy::identity();
  AugmentPolicy p = strong();
  p.name = PolicyName::kLabeled;
  return p;
}

RunConfig::RunConfig() {
  model.embed_dim = 64;
  model.depth = 4;
  model.num_heads = 4;
  model.patch_size = 4;
  stage2.stage = Stage::kSupervisedFt;
  stage2.mu = 0;
  stage3.stage = Stage::kSemiFt;
}

RunConfig RunConfig::from_map(const ConfigMap& map) {
  RunConfig c;
  Bindings b = bindings(c);
  for (const auto& [k, v] : map.entries()) {
    auto it = b.find(k);
    if (it == b.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second.set(k, v);
  }
  c.validate();
  return c;
}

ConfigMap RunConfig::to_map() const {
  RunConfig copy = *this;
  ConfigMap m;
  for (const auto& [k, binding] : bindings(copy)) m.set(k, binding.get());
  return m;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& what) {
    throw ConfigError(key + ": " + what);
  };
  if (name.empty() || name.find('/') != std::string::npos) fail("run.name", "must be a non-empty file name");
  if (eval_interval < 1) fail("run.eval_interval", "must be >= 1");
  if (checkpoint_interval < 0) fail("run.checkpoint_interval", "must be >= 0");
  if (eval_batch < 1) fail("run.eval_batch", "must be >= 1");
  if (data.source != "synthetic" && data.source != "manifest") {
    fail("data.source", "must be synthetic or manifest");
  }
  if (data.num_classes < 1) fail("data.num_classes", "must be >= 1");
  if (!(data.label_fraction > 0 && data.label_fraction <= 1)) {
    fail("data.label_fraction", "must lie in (0, 1]");
  }
  if (data.source == "manifest") {
    if (data.train_manifest.empty() && data.labeled_manifest.empty()) {
      fail("data.train_manifest", "required (or data.labeled_manifest) when data.source = manifest");
    }
    if (data.eval_manifest.empty()) fail("data.eval_manifest", "required when data.source = manifest");
  } else {
    if (data.synthetic_train < data.num_classes) fail("data.synthetic.train_size", "must be >= num_classes");
    if (data.synthetic_eval < 1) fail("data.synthetic.eval_size", "must be >= 1");
    if (data.image_size != model.image_size) {
      fail("data.synthetic.image_size", "must equal model.image_size");
    }
    if (data.synthetic_noise < 0) fail("data.synthetic.noise", "must be >= 0");
    if (model.in_chans != 3) fail("model.in_chans", "synthetic data has 3 channels");
  }
  if (augment.labeled_policy != "strong" && augment.labeled_policy != "weak" &&
      augment.labeled_policy != "identity") {
    fail("augment.labeled_policy", "must be strong, weak or identity");
  }
  prefix_error("augment.weak.", [&] { augment.weak().validate(); });
  prefix_error("augment.strong.", [&] { augment.strong().validate(); });
  if (augment.ra_ops < 0) fail("augment.strong.ra_ops", "must be >= 0");
  if (augment.ra_magnitude < 0 || augment.ra_magnitude > 10) {
    fail("augment.strong.ra_magnitude", "must lie in [0, 10]");
  }
  if (init.empty()) fail("stage1.init", "must be 'scratch' or a checkpoint path");
  ViTConfig m = model;
  m.num_classes = data.num_classes;
  m.drop_path_rate = 0;
  m.validate();
  prefix_error("stage2.", [&] { stage2.validate(); });
  prefix_error("stage3.", [&] { stage3.validate(); });
}

std::uint64_t RunConfig::hash() const {
  return derive_seed(0, to_map().dump());
}

std::uint64_t RunConfig::stage2_hash() const {
  ConfigMap m = to_map();
  for (const auto& k : known_config_keys()) {
    if (k.rfind("stage3.", 0) == 0 || k == "run.name" || k == "run.out_dir") m.erase(k);
  }
  return derive_seed(0, m.dump());
}

ViTConfig RunConfig::model_for(const StageConfig& stage) const {
  ViTConfig m = model;
  m.num_classes = data.num_classes;
  m.drop_path_rate = stage.drop_path;
  return m;
}

std::vector<std::string> known_config_keys() {
  RunConfig c;
  std::vector<std::string> keys;
  for (const auto& [k, b] : bindings(c)) keys.push_back(k);
  return keys;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace semivit
