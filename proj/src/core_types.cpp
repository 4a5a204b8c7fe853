#include "semivit/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "semivit/errors.hpp"
#include "semivit/rng.hpp"

namespace semivit {

std::string_view to_string(Stage s) {
  return s == Stage::kSupervisedFt ? "supervised_ft" : "semi_ft";
}

std::string_view to_string(Framework f) {
  return f == Framework::kEmaTeacher ? "ema_teacher" : "fixmatch";
}

std::string_view to_string(UnlabeledMixup m) {
  switch (m) {
    case UnlabeledMixup::kNone: return "none";
    case UnlabeledMixup::kPseudo: return "pseudo";
    case UnlabeledMixup::kPseudoPlus: return "pseudo_plus";
    case UnlabeledMixup::kProbPseudo: return "prob_pseudo";
  }
  return "none";
}

Stage parse_stage(std::string_view s) {
  if (s == "supervised_ft") return Stage::kSupervisedFt;
  if (s == "semi_ft") return Stage::kSemiFt;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected supervised_ft|semi_ft)");
}

Framework parse_framework(std::string_view s) {
  if (s == "ema_teacher") return Framework::kEmaTeacher;
  if (s == "fixmatch") return Framework::kFixMatch;
  throw ConfigError("unknown framework '" + std::string(s) + "' (expected ema_teacher|fixmatch)");
}

UnlabeledMixup parse_unlabeled_mixup(std::string_view s) {
  if (s == "none") return UnlabeledMixup::kNone;
  if (s == "pseudo") return UnlabeledMixup::kPseudo;
  if (s == "pseudo_plus") return UnlabeledMixup::kPseudoPlus;
  if (s == "prob_pseudo") return UnlabeledMixup::kProbPseudo;
  throw ConfigError("unknown unlabeled_mixup '" + std::string(s) +
                    "' (expected none|pseudo|pseudo_plus|prob_pseudo)");
}

template <typename T>
void LabeledBatch<T>::validate() const {
  if (labels.empty()) throw std::invalid_argument("labeled batch is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw std::invalid_argument("labeled batch images " + shape_string(images.shape()) +
                                " do not match " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at position " +
                                  std::to_string(i) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
  for (T v : images.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("labeled batch has a non-finite pixel");
  }
}

template struct LabeledBatch<float>;
template struct LabeledBatch<double>;

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

void StageConfig::validate() const {
  require(epochs >= 0, "epochs", "must be >= 0");
  require(warmup_epochs >= 0, "warmup_epochs", "must be >= 0");
  require(epochs == 0 || warmup_epochs < epochs, "warmup_epochs", "must be < epochs");
  require(base_lr >= 0, "base_lr", "must be >= 0");
  require(min_lr >= 0 && min_lr <= base_lr, "min_lr", "must lie in [0, base_lr]");
  require(weight_decay >= 0, "weight_decay", "must be >= 0");
  require(layer_decay > 0 && layer_decay <= 1, "layer_decay", "must lie in (0, 1]");
  require(beta1 >= 0 && beta1 < 1, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "beta2", "must lie in [0, 1)");
  require(mu >= 0, "mu", "must be >= 0");
  require(tau >= 0 && tau <= 1, "tau", "must lie in [0, 1]");
  require(ema_momentum >= 0 && ema_momentum <= 1, "ema_momentum", "must lie in [0, 1]");
  require(label_smoothing >= 0 && label_smoothing < 1, "label_smoothing", "must lie in [0, 1)");
  require(mixup_alpha >= 0, "mixup_alpha", "must be >= 0");
  require(cutmix_alpha >= 0, "cutmix_alpha", "must be >= 0");
  require(switch_prob >= 0 && switch_prob <= 1, "switch_prob", "must lie in [0, 1]");
  require(drop_path >= 0 && drop_path < 1, "drop_path", "must lie in [0, 1)");
  require(unlabeled_ratio >= 1, "unlabeled_ratio", "must be >= 1");
  require(batch_size >= 1, "batch_size", "must be >= 1");
}

std::size_t per_class_quota(std::size_t count, double fraction) {
  const double raw = std::floor(fraction * static_cast<double>(count) + 0.5 + 1e-9);
  return std::max<std::size_t>(1, std::min(count, static_cast<std::size_t>(raw)));
}

Split split_dataset(std::span<const int> labels, int num_classes, double fraction,
                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("label fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Split split;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty()) throw DataError("class " + std::to_string(c) + " has no examples");
    Rng rng(derive_seed(seed, "split", {static_cast<std::uint64_t>(c)}));
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t quota = per_class_quota(members.size(), fraction);
    split.labeled.insert(split.labeled.end(), members.begin(), members.begin() + quota);
  }
  std::sort(split.labeled.begin(), split.labeled.end());
  split.unlabeled.resize(labels.size());
  std::iota(split.unlabeled.begin(), split.unlabeled.end(), std::size_t{0});
  return split;
}

BatchStream::BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled,
                         std::size_t labeled_batch, int ratio, std::uint64_t seed)
    : labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      labeled_batch_(labeled_batch),
      ratio_(ratio),
      seed_(seed) {
  if (labeled_batch_ < 1) throw ConfigError("labeled batch size must be >= 1");
  if (ratio_ < 1) throw ConfigError("unlabeled_ratio must be >= 1");
  if (labeled_.empty()) throw ConfigError("batch stream needs at least one labeled index");
  if (unlabeled_.empty()) {
    steps_per_epoch_ = std::max<std::size_t>(1, labeled_.size() / labeled_batch_);
  } else {
    steps_per_epoch_ = std::max<std::size_t>(1, unlabeled_.size() / unlabeled_batch());
  }
}

std::vector<std::size_t> BatchStream::labeled_pass_order(std::size_t pass) const {
  std::vector<std::size_t> order = labeled_;
  Rng rng(derive_seed(seed_, "labeled_pass", {pass}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> BatchStream::unlabeled_epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order = unlabeled_;
  Rng rng(derive_seed(seed_, "unlabeled_epoch", {epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchStream::Batch BatchStream::batch(std::size_t epoch, std::size_t step) const {
  Batch b;
  const std::size_t n = labeled_.size();
  std::size_t pos = (epoch * steps_per_epoch_ + step) * labeled_batch_;
  std::size_t pass = pos / n;
  std::vector<std::size_t> order = labeled_pass_order(pass);
  b.labeled.reserve(labeled_batch_);
  for (std::size_t k = 0; k < labeled_batch_; ++k, ++pos) {
    if (pos / n != pass) {
      pass = pos / n;
      order = labeled_pass_order(pass);
    }
    b.labeled.push_back(order[pos % n]);
  }
  if (!unlabeled_.empty()) {
    const std::vector<std::size_t> order_u = unlabeled_epoch_order(epoch);
    const std::size_t nu = unlabeled_batch();
    const std::size_t start = (step * nu) % order_u.size();
    b.unlabeled.reserve(nu);
    for (std::size_t k = 0; k < nu; ++k) b.unlabeled.push_back(order_u[(start + k) % order_u.size()]);
  }
  return b;
}

BatchStream make_batches(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled,
                         std::size_t labeled_batch, int ratio, std::uint64_t seed) {
  return BatchStream(std::move(labeled), std::move(unlabeled), labeled_batch, ratio, seed);
}

template <typename T>
LabeledBatch<T> gather_labeled(const Dataset& data, std::span<const std::size_t> indices) {
  LabeledBatch<T> batch;
  Tensor<float> imgs = gather_rows(data.images, indices);
  if constexpr (std::is_same_v<T, float>) {
    batch.images = std::move(imgs);
  } else {
    batch.images = imgs.cast<T>();
  }
  batch.num_classes = data.num_classes;
  for (std::size_t i : indices) batch.labels.push_back(data.labels.at(i));
  return batch;
}

template <typename T>
UnlabeledBatch<T> gather_unlabeled(const Dataset& data, std::span<const std::size_t> indices) {
  UnlabeledBatch<T> batch;
  Tensor<float> imgs = gather_rows(data.images, indices);
  if constexpr (std::is_same_v<T, float>) {
    batch.images = std::move(imgs);
  } else {
    batch.images = imgs.cast<T>();
  }
  return batch;
}

template LabeledBatch<float> gather_labeled<float>(const Dataset&, std::span<const std::size_t>);
template LabeledBatch<double> gather_labeled<double>(const Dataset&, std::span<const std::size_t>);
template UnlabeledBatch<float> gather_unlabeled<float>(const Dataset&, std::span<const std::size_t>);
template UnlabeledBatch<double> gather_unlabeled<double>(const Dataset&,
                                                         std::span<const std::size_t>);

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto sep = line.find_last_of(" \t");
    if (sep == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected '<path> <label>'");
    }
    ManifestEntry e;
    e.path = line.substr(0, line.find_last_not_of(" \t", sep) + 1);
    try {
      std::size_t used = 0;
      const std::string tail = line.substr(sep + 1);
      e.label = std::stoi(tail, &used);
      if (used != tail.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad label");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& e : entries) out << e.path << ' ' << e.label << '\n';
}

namespace {

// Next whitespace-delimited header token of a netpbm file, skipping comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

std::vector<float> read_pnm(const std::string& path, std::size_t& c, std::size_t& h,
                            std::size_t& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  const std::string magic = pnm_token(in);
  if (magic != "P6" && magic != "P5") throw DataError(path + ": only binary PPM/PGM supported");
  c = magic == "P6" ? 3 : 1;
  try {
    w = std::stoul(pnm_token(in));
    h = std::stoul(pnm_token(in));
    if (std::stoul(pnm_token(in)) != 255) throw DataError(path + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw DataError(path + ": malformed header");
  }
  std::vector<unsigned char> raw(c * h * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(path + ": truncated");
  std::vector<float> chw(raw.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        chw[(ch * h + y) * w + x] = static_cast<float>(raw[(y * w + x) * c + ch]) / 255.0f;
  return chw;
}

}  // namespace

Dataset load_manifest_dataset(const std::string& manifest_path, int num_classes) {
  const auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw DataError("manifest " + manifest_path + " is empty");
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  Dataset data;
  data.num_classes = num_classes;
  std::vector<float> pixels;
  std::size_t c0 = 0, h0 = 0, w0 = 0;
  for (const auto& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    std::size_t c, h, w;
    auto img = read_pnm(p.string(), c, h, w);
    if (data.labels.empty()) {
      c0 = c, h0 = h, w0 = w;
    } else if (c != c0 || h != h0 || w != w0) {
      throw DataError(p.string() + ": image size differs from the first manifest entry");
    }
    pixels.insert(pixels.end(), img.begin(), img.end());
    data.labels.push_back(e.label);
    data.paths.push_back(e.path);
  }
  data.images = Tensor<float>({entries.size(), c0, h0, w0}, std::move(pixels));
  return data;
}

void write_pnm(const std::string& path, std::span<const float> chw, std::size_t c, std::size_t h,
               std::size_t w) {
  if (c != 1 && c != 3) throw DataError("write_pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path);
  out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(chw[(ch * h + y) * w + x], 0.0f, 1.0f);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace semivit
