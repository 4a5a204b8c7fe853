#include "semivit/mixup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "semivit/errors.hpp"
#include "semivit/kernels.hpp"

namespace semivit {

void MixConfig::validate() const {
  if (mixup_alpha < 0) throw ConfigError("mixup_alpha: must be >= 0");
  if (cutmix_alpha < 0) throw ConfigError("cutmix_alpha: must be >= 0");
  if (!(switch_prob >= 0 && switch_prob <= 1)) throw ConfigError("switch_prob: must lie in [0, 1]");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) {
    throw ConfigError("label_smoothing: must lie in [0, 1)");
  }
}

double sample_lambda(double alpha, Rng& rng) {
  if (alpha < 0) throw ConfigError("mixup alpha must be >= 0, got " + std::to_string(alpha));
  if (alpha == 0) return 1.0;
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b == 0) return 0.5;
  return a / (a + b);
}

std::vector<std::size_t> pair_shuffle(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

template <typename T>
double mix_images(std::span<const T> xi, std::span<const T> xj, std::span<T> out,
                  const Shape& shape, double lambda, MixMode mode, Rng& rng) {
  if (xi.size() != xj.size() || xi.size() != out.size() || shape_numel(shape) != xi.size()) {
    throw std::invalid_argument("mix_images: shape mismatch");
  }
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("mix_images: lambda outside [0,1]");
  if (mode == MixMode::kBlend) {
    if (lambda == 1.0) {
      std::copy(xi.begin(), xi.end(), out.begin());
    } else {
      kernels::blend(xi.size(), static_cast<T>(lambda), xi.data(), static_cast<T>(1.0 - lambda),
                     xj.data(), out.data());
    }
    return lambda;
  }
  if (shape.size() != 3) throw std::invalid_argument("mix_images: cut mode needs [C,H,W]");
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const double cut = std::sqrt(1.0 - lambda);
  const auto bh = static_cast<std::size_t>(std::lround(cut * static_cast<double>(h)));
  const auto bw = static_cast<std::size_t>(std::lround(cut * static_cast<double>(w)));
  const auto top = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(h - bh)));
  const auto left = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(w - bw)));
  std::copy(xi.begin(), xi.end(), out.begin());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = top; y < top + bh; ++y)
      for (std::size_t x = left; x < left + bw; ++x) {
        out[(ch * h + y) * w + x] = xj[(ch * h + y) * w + x];
      }
  return 1.0 - static_cast<double>(bh * bw) / static_cast<double>(h * w);
}

template <typename T>
void mix_labels(std::span<const T> yi, std::span<const T> yj, double lambda, std::span<T> out) {
  if (yi.size() != yj.size() || yi.size() != out.size()) {
    throw std::invalid_argument("mix_labels: size mismatch");
  }
  const T a = static_cast<T>(lambda), b = static_cast<T>(1.0 - lambda);
  for (std::size_t k = 0; k < yi.size(); ++k) out[k] = a * yi[k] + b * yj[k];
}

template <typename T>
std::vector<T> smoothed_one_hot(int label, int num_classes, double eps) {
  if (label < 0 || label >= num_classes) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(num_classes) + ")");
  }
  std::vector<T> y(static_cast<std::size_t>(num_classes), static_cast<T>(eps / num_classes));
  y[static_cast<std::size_t>(label)] += static_cast<T>(1.0 - eps);
  return y;
}

template <typename T>
PseudoBatch<T> make_pseudo_batch(Tensor<T> images_strong, Tensor<T> probs, double tau) {
  PseudoBatch<T> b;
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probs.row(i);
    // First maximum wins: ties resolve to the lowest class index.
    const auto it = std::max_element(row.begin(), row.end());
    b.hard_label.push_back(static_cast<int>(it - row.begin()));
    b.confidence.push_back(*it);
    b.clean_mask.push_back(static_cast<double>(*it) >= tau);
  }
  (void)c;
  b.images_strong = std::move(images_strong);
  b.probs = std::move(probs);
  return b;
}

namespace {

struct MixChoice {
  MixMode mode;
  double alpha;
};

MixChoice choose_mode(const MixConfig& cfg, bool allow_cut, Rng& rng) {
  const double u = uniform01(rng);
  if (allow_cut && cfg.cutmix_alpha > 0 && (cfg.mixup_alpha == 0 || u < cfg.switch_prob)) {
    return {MixMode::kCut, cfg.cutmix_alpha};
  }
  return {MixMode::kBlend, cfg.mixup_alpha};
}

Shape image_shape(const Shape& batch_shape) { return Shape(batch_shape.begin() + 1, batch_shape.end()); }

// Builds output row r from (source, partner, lambda) and one-hot labels.
template <typename T>
class MixWriter {
 public:
  MixWriter(const Tensor<T>& images, std::span<const int> labels, int num_classes, double eps,
            std::size_t rows, MixMode mode)
      : images_(images), labels_(labels), num_classes_(num_classes), eps_(eps) {
    Shape shape = images.shape();
    shape[0] = rows;
    out_.images = Tensor<T>(shape);
    out_.soft_labels = Tensor<T>({rows, static_cast<std::size_t>(num_classes)});
    out_.mode = mode;
    img_shape_ = image_shape(images.shape());
  }

  // Returns the realized lambda.
  double write(std::size_t r, std::size_t i, std::size_t j, double lambda, Rng& rng) {
    const double realized =
        mix_images<T>(images_.row(i), images_.row(j), out_.images.row(r), img_shape_, lambda,
                      out_.mode, rng);
    const auto yi = smoothed_one_hot<T>(labels_[i], num_classes_, eps_);
    const auto yj = smoothed_one_hot<T>(labels_[j], num_classes_, eps_);
    mix_labels<T>(yi, yj, realized, out_.soft_labels.row(r));
    out_.source.push_back(i);
    out_.partner.push_back(j);
    out_.lambda.push_back(realized);
    return realized;
  }

  MixedBatch<T>& result() { return out_; }

 private:
  const Tensor<T>& images_;
  std::span<const int> labels_;
  int num_classes_;
  double eps_;
  Shape img_shape_;
  MixedBatch<T> out_;
};

template <typename T>
void require_nonempty(const PseudoBatch<T>& b, const char* who) {
  if (b.size() == 0) throw std::invalid_argument(std::string(who) + ": empty batch");
}

}  // namespace

template <typename T>
MixedBatch<T> no_unlabeled_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau) {
  require_nonempty(batch, "no_unlabeled_mixup");
  MixWriter<T> w(batch.images_strong, batch.hard_label, batch.num_classes(), cfg.label_smoothing,
                 batch.size(), MixMode::kBlend);
  Rng unused(0);
  for (std::size_t i = 0; i < batch.size(); ++i) w.write(i, i, i, 1.0, unused);
  auto& out = w.result();
  out.confidence_star = batch.confidence;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.include_mask.push_back(static_cast<double>(batch.confidence[i]) >= tau);
  }
  return std::move(out);
}

template <typename T>
MixedBatch<T> pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau, Rng& rng) {
  require_nonempty(batch, "pseudo_mixup");
  const MixChoice choice = choose_mode(cfg, cfg.unlabeled_cutmix, rng);
  const auto perm = pair_shuffle(batch.size(), rng);
  MixWriter<T> w(batch.images_strong, batch.hard_label, batch.num_classes(), cfg.label_smoothing,
                 batch.size(), choice.mode);
  const double shared = sample_lambda(choice.alpha, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lam = cfg.elementwise ? sample_lambda(choice.alpha, rng) : shared;
    w.write(i, i, perm[i], lam, rng);
  }
  auto& out = w.result();
  out.confidence_star = batch.confidence;
  // Gate on the pre-mix confidence of the sample itself.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.include_mask.push_back(static_cast<double>(batch.confidence[i]) >= tau);
  }
  return std::move(out);
}

template <typename T>
MixedBatch<T> pseudo_mixup_plus(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                Rng& rng) {
  require_nonempty(batch, "pseudo_mixup_plus");
  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (static_cast<double>(batch.confidence[i]) >= tau) clean.push_back(i);
  }
  const MixChoice choice = choose_mode(cfg, cfg.unlabeled_cutmix, rng);
  MixWriter<T> w(batch.images_strong, batch.hard_label, batch.num_classes(), cfg.label_smoothing,
                 clean.size(), choice.mode);
  if (clean.size() == 1) {
    w.write(0, clean[0], clean[0], 1.0, rng);
  } else if (clean.size() >= 2) {
    const auto perm = pair_shuffle(clean.size(), rng);
    const double shared = sample_lambda(choice.alpha, rng);
    for (std::size_t r = 0; r < clean.size(); ++r) {
      const double lam = cfg.elementwise ? sample_lambda(choice.alpha, rng) : shared;
      w.write(r, clean[r], clean[perm[r]], lam, rng);
    }
  }
  auto& out = w.result();
  for (std::size_t i : clean) out.confidence_star.push_back(batch.confidence[i]);
  out.include_mask.assign(clean.size(), true);
  return std::move(out);
}

template <typename T>
MixedBatch<T> prob_pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                std::span<const std::size_t> partner, MixMode mode, Rng& rng) {
  require_nonempty(batch, "prob_pseudo_mixup");
  if (partner.size() != batch.size()) {
    throw std::invalid_argument("prob_pseudo_mixup: pairing size mismatch");
  }
  MixWriter<T> w(batch.images_strong, batch.hard_label, batch.num_classes(), cfg.label_smoothing,
                 batch.size(), mode);
  auto& out = w.result();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t j = partner[i];
    if (j >= batch.size()) throw std::invalid_argument("prob_pseudo_mixup: partner out of range");
    const double oi = static_cast<double>(batch.confidence[i]);
    const double oj = static_cast<double>(batch.confidence[j]);
    if (!(oi + oj > 0)) throw std::invalid_argument("prob_pseudo_mixup: confidences sum to 0");
    w.write(i, i, j, oi / (oi + oj), rng);
    const double o_star = std::max(oi, oj);
    out.confidence_star.push_back(static_cast<T>(o_star));
    out.include_mask.push_back(o_star >= tau);
  }
  return std::move(out);
}

template <typename T>
MixedBatch<T> prob_pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                Rng& rng) {
  require_nonempty(batch, "prob_pseudo_mixup");
  const MixChoice choice = choose_mode(cfg, cfg.unlabeled_cutmix, rng);
  const auto perm = pair_shuffle(batch.size(), rng);
  return prob_pseudo_mixup(batch, cfg, tau, perm, choice.mode, rng);
}

template <typename T>
MixedBatch<T> mix_unlabeled(UnlabeledMixup variant, const PseudoBatch<T>& batch,
                            const MixConfig& cfg, double tau, Rng& rng) {
  switch (variant) {
    case UnlabeledMixup::kNone: return no_unlabeled_mixup(batch, cfg, tau);
    case UnlabeledMixup::kPseudo: return pseudo_mixup(batch, cfg, tau, rng);
    case UnlabeledMixup::kPseudoPlus: return pseudo_mixup_plus(batch, cfg, tau, rng);
    case UnlabeledMixup::kProbPseudo: return prob_pseudo_mixup(batch, cfg, tau, rng);
  }
  throw std::invalid_argument("unknown unlabeled mixup variant");
}

template <typename T>
MixedBatch<T> mix_labeled(const LabeledBatch<T>& batch, const MixConfig& cfg, Rng& rng) {
  if (batch.size() == 0) throw std::invalid_argument("mix_labeled: empty batch");
  const MixChoice choice = choose_mode(cfg, true, rng);
  const auto perm = pair_shuffle(batch.size(), rng);
  MixWriter<T> w(batch.images, batch.labels, batch.num_classes, cfg.label_smoothing, batch.size(),
                 choice.mode);
  const double shared = sample_lambda(choice.alpha, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lam = cfg.elementwise ? sample_lambda(choice.alpha, rng) : shared;
    w.write(i, i, perm[i], lam, rng);
  }
  auto& out = w.result();
  out.include_mask.assign(batch.size(), true);
  out.confidence_star.assign(batch.size(), T(1));
  return std::move(out);
}

#define SEMIVIT_INSTANTIATE(T)                                                                    \
  template double mix_images<T>(std::span<const T>, std::span<const T>, std::span<T>,             \
                                const Shape&, double, MixMode, Rng&);                             \
  template void mix_labels<T>(std::span<const T>, std::span<const T>, double, std::span<T>);      \
  template std::vector<T> smoothed_one_hot<T>(int, int, double);                                  \
  template PseudoBatch<T> make_pseudo_batch<T>(Tensor<T>, Tensor<T>, double);                     \
  template MixedBatch<T> no_unlabeled_mixup<T>(const PseudoBatch<T>&, const MixConfig&, double);  \
  template MixedBatch<T> pseudo_mixup<T>(const PseudoBatch<T>&, const MixConfig&, double, Rng&);  \
  template MixedBatch<T> pseudo_mixup_plus<T>(const PseudoBatch<T>&, const MixConfig&, double,    \
                                              Rng&);                                              \
  template MixedBatch<T> prob_pseudo_mixup<T>(const PseudoBatch<T>&, const MixConfig&, double,    \
                                              Rng&);                                              \
  template MixedBatch<T> prob_pseudo_mixup<T>(const PseudoBatch<T>&, const MixConfig&, double,    \
                                              std::span<const std::size_t>, MixMode, Rng&);       \
  template MixedBatch<T> mix_unlabeled<T>(UnlabeledMixup, const PseudoBatch<T>&,                  \
                                          const MixConfig&, double, Rng&);                        \
  template MixedBatch<T> mix_labeled<T>(const LabeledBatch<T>&, const MixConfig&, Rng&);

SEMIVIT_INSTANTIATE(float)
SEMIVIT_INSTANTIATE(double)
#undef SEMIVIT_INSTANTIATE

}  // namespace semivit
