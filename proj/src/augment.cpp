#include "semivit/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "semivit/errors.hpp"

namespace semivit {

std::string_view to_string(PolicyName p) {
  switch (p) {
    case PolicyName::kWeak: return "weak";
    case PolicyName::kStrong: return "strong";
    case PolicyName::kLabeled: return "labeled";
    case PolicyName::kIdentity: return "identity";
  }
  return "identity";
}

PolicyName parse_policy_name(std::string_view s) {
  if (s == "weak") return PolicyName::kWeak;
  if (s == "strong") return PolicyName::kStrong;
  if (s == "labeled") return PolicyName::kLabeled;
  if (s == "identity") return PolicyName::kIdentity;
  throw ConfigError("unknown augment policy '" + std::string(s) + "'");
}

AugmentPolicy AugmentPolicy::identity() { return AugmentPolicy{}; }

AugmentPolicy AugmentPolicy::weak() {
  AugmentPolicy p;
  p.name = PolicyName::kWeak;
  p.random_resized_crop = true;
  p.crop_scale = {0.7, 1.0};
  p.hflip_prob = 0.5;
  p.color_jitter = 0.4;
  return p;
}

AugmentPolicy AugmentPolicy::strong() {
  AugmentPolicy p;
  p.name = PolicyName::kStrong;
  p.random_resized_crop = true;
  p.crop_scale = {0.35, 1.0};
  p.hflip_prob = 0.5;
  p.rand_augment = RandAugmentSpec{2, 9, 0.5, 0.5};
  p.erase_prob = 0.25;
  return p;
}

AugmentPolicy AugmentPolicy::labeled() {
  AugmentPolicy p = strong();
  p.name = PolicyName::kLabeled;
  return p;
}

bool AugmentPolicy::is_identity() const {
  return name == PolicyName::kIdentity || (!random_resized_crop && hflip_prob == 0 &&
                                           color_jitter == 0 && rand_augment.num_ops == 0 &&
                                           erase_prob == 0);
}

void AugmentPolicy::validate() const {
  auto prob = [](double p, const char* field) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string(field) + ": must lie in [0, 1]");
  };
  prob(hflip_prob, "hflip_prob");
  prob(erase_prob, "erase_prob");
  prob(rand_augment.op_prob, "rand_augment.op_prob");
  if (!(crop_scale.first > 0 && crop_scale.first <= crop_scale.second && crop_scale.second <= 1)) {
    throw ConfigError("crop_scale: must satisfy 0 < lo <= hi <= 1");
  }
  if (!(crop_ratio.first > 0 && crop_ratio.first <= crop_ratio.second)) {
    throw ConfigError("crop_ratio: must satisfy 0 < lo <= hi");
  }
  if (color_jitter < 0 || color_jitter >= 1) throw ConfigError("color_jitter: must lie in [0, 1)");
  if (rand_augment.num_ops < 0) throw ConfigError("rand_augment.num_ops: must be >= 0");
  if (rand_augment.magnitude < 0 || rand_augment.magnitude > 10) {
    throw ConfigError("rand_augment.magnitude: must lie in [0, 10]");
  }
  if (rand_augment.magnitude_std < 0) throw ConfigError("rand_augment.magnitude_std: must be >= 0");
  if (!(erase_area.first > 0 && erase_area.first <= erase_area.second && erase_area.second <= 1)) {
    throw ConfigError("erase_area: must satisfy 0 < lo <= hi <= 1");
  }
  if (!(erase_aspect.first > 0 && erase_aspect.first <= erase_aspect.second)) {
    throw ConfigError("erase_aspect: must satisfy 0 < lo <= hi");
  }
  if (min_size < 1) throw ConfigError("min_size: must be >= 1");
}

namespace {

struct Image {
  std::size_t c, h, w;
  float* px;
  float& at(std::size_t ch, std::size_t y, std::size_t x) { return px[(ch * h + y) * w + x]; }
  float at(std::size_t ch, std::size_t y, std::size_t x) const { return px[(ch * h + y) * w + x]; }
  std::size_t plane() const { return h * w; }
};

constexpr float kFill = 0.5f;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

void clamp01(Image img) {
  for (std::size_t i = 0; i < img.c * img.plane(); ++i) img.px[i] = std::clamp(img.px[i], 0.0f, 1.0f);
}

// Bilinear sample with half-pixel centers; outside pixels take `fill`.
float sample_bilinear(const std::vector<float>& src, std::size_t ch, std::size_t h, std::size_t w,
                      double y, double x, float fill) {
  const double fy = y - 0.5, fx = x - 0.5;
  const double y0 = std::floor(fy), x0 = std::floor(fx);
  const double dy = fy - y0, dx = fx - x0;
  auto px = [&](double yy, double xx) -> float {
    if (yy < 0 || xx < 0 || yy >= static_cast<double>(h) || xx >= static_cast<double>(w)) return fill;
    return src[(ch * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
  };
  return static_cast<float>((1 - dy) * ((1 - dx) * px(y0, x0) + dx * px(y0, x0 + 1)) +
                            dy * ((1 - dx) * px(y0 + 1, x0) + dx * px(y0 + 1, x0 + 1)));
}

// Resize the box [top, top+bh) x [left, left+bw) back to the full image size.
void crop_resize(Image img, double top, double left, double bh, double bw) {
  std::vector<float> src(img.px, img.px + img.c * img.plane());
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        double sy = top + (static_cast<double>(y) + 0.5) * bh / static_cast<double>(img.h);
        double sx = left + (static_cast<double>(x) + 0.5) * bw / static_cast<double>(img.w);
        // Clamp to the valid sample range so edges replicate instead of fading to fill.
        sy = std::clamp(sy, 0.5, static_cast<double>(img.h) - 0.5);
        sx = std::clamp(sx, 0.5, static_cast<double>(img.w) - 0.5);
        img.at(ch, y, x) = sample_bilinear(src, ch, img.h, img.w, sy, sx, kFill);
      }
    }
  }
}

void random_resized_crop(Image img, const AugmentPolicy& p, Rng& rng) {
  const double area = static_cast<double>(img.plane());
  const double log_lo = std::log(p.crop_ratio.first), log_hi = std::log(p.crop_ratio.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, p.crop_scale.first, p.crop_scale.second);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const long bw = std::lround(std::sqrt(target * ratio));
    const long bh = std::lround(std::sqrt(target / ratio));
    if (bw > 0 && bh > 0 && bw <= static_cast<long>(img.w) && bh <= static_cast<long>(img.h)) {
      const auto top = uniform_int(rng, 0, static_cast<long>(img.h) - bh);
      const auto left = uniform_int(rng, 0, static_cast<long>(img.w) - bw);
      crop_resize(img, static_cast<double>(top), static_cast<double>(left),
                  static_cast<double>(bh), static_cast<double>(bw));
      return;
    }
  }
  // Fallback: whole image (aspect within range by construction for square inputs).
}

float gray(const Image& img, std::size_t y, std::size_t x) {
  if (img.c < 3) return img.at(0, y, x);
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

void adjust_brightness(Image img, float f) {
  for (std::size_t i = 0; i < img.c * img.plane(); ++i) img.px[i] = std::clamp(img.px[i] * f, 0.f, 1.f);
}

void adjust_contrast(Image img, float f) {
  double mean = 0;
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) mean += gray(img, y, x);
  const float m = static_cast<float>(mean / static_cast<double>(img.plane()));
  for (std::size_t i = 0; i < img.c * img.plane(); ++i) {
    img.px[i] = std::clamp(f * img.px[i] + (1 - f) * m, 0.f, 1.f);
  }
}

void adjust_saturation(Image img, float f) {
  if (img.c < 3) return;
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      const float g = gray(img, y, x);
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        img.at(ch, y, x) = std::clamp(f * img.at(ch, y, x) + (1 - f) * g, 0.f, 1.f);
      }
    }
}

void adjust_sharpness(Image img, float f) {
  if (img.h < 3 || img.w < 3) return;
  std::vector<float> src(img.px, img.px + img.c * img.plane());
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 1; y + 1 < img.h; ++y)
      for (std::size_t x = 1; x + 1 < img.w; ++x) {
        float s = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const float wgt = (dy == 0 && dx == 0) ? 5.f : 1.f;
            s += wgt * src[(ch * img.h + y + dy) * img.w + x + dx];
          }
        const float smooth = s / 13.f;
        const float orig = src[(ch * img.h + y) * img.w + x];
        img.at(ch, y, x) = std::clamp(f * orig + (1 - f) * smooth, 0.f, 1.f);
      }
}

void color_jitter(Image img, double strength, Rng& rng) {
  std::array<int, 3> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), rng);
  for (int op : order) {
    const float f = static_cast<float>(uniform(rng, 1 - strength, 1 + strength));
    if (op == 0) adjust_brightness(img, f);
    if (op == 1) adjust_contrast(img, f);
    if (op == 2) adjust_saturation(img, f);
  }
}

// Inverse-mapped affine warp: output (y, x) samples input at M * (x, y, 1) around the center.
void affine(Image img, double a, double b, double c, double d, double tx, double ty) {
  std::vector<float> src(img.px, img.px + img.c * img.plane());
  const double cy = static_cast<double>(img.h) / 2, cx = static_cast<double>(img.w) / 2;
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) {
        const double ox = static_cast<double>(x) + 0.5 - cx, oy = static_cast<double>(y) + 0.5 - cy;
        const double sx = a * ox + b * oy + tx + cx;
        const double sy = c * ox + d * oy + ty + cy;
        img.at(ch, y, x) = sample_bilinear(src, ch, img.h, img.w, sy, sx, kFill);
      }
}

void auto_contrast(Image img) {
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    float* p = img.px + ch * img.plane();
    const auto [lo, hi] = std::minmax_element(p, p + img.plane());
    const float l = *lo, range = *hi - *lo;
    if (range <= 0) continue;
    for (std::size_t i = 0; i < img.plane(); ++i) p[i] = (p[i] - l) / range;
  }
}

void equalize(Image img) {
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    float* p = img.px + ch * img.plane();
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < img.plane(); ++i) {
      ++hist[static_cast<std::size_t>(std::lround(std::clamp(p[i], 0.f, 1.f) * 255.f))];
    }
    std::array<float, 256> lut{};
    std::size_t cum = 0;
    const std::size_t n = img.plane();
    std::size_t first = 0;
    while (first < 256 && hist[first] == 0) ++first;
    const std::size_t base = first < 256 ? hist[first] : 0;
    if (n == base) continue;
    for (std::size_t v = 0; v < 256; ++v) {
      cum += hist[v];
      lut[v] = cum <= base ? 0.f : static_cast<float>(cum - base) / static_cast<float>(n - base);
    }
    for (std::size_t i = 0; i < img.plane(); ++i) {
      p[i] = lut[static_cast<std::size_t>(std::lround(std::clamp(p[i], 0.f, 1.f) * 255.f))];
    }
  }
}

enum class RaOp {
  kAutoContrast, kEqualize, kInvert, kRotate, kPosterize, kSolarize, kSolarizeAdd, kColor,
  kContrast, kBrightness, kSharpness, kShearX, kShearY, kTranslateX, kTranslateY, kCount
};

// One RandAugment op at magnitude m in [0, 10]; "increasing" variants, so a
// larger magnitude always means a stronger distortion.
void rand_augment_op(Image img, RaOp op, double m, Rng& rng) {
  const double level = m / 10.0;
  const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  switch (op) {
    case RaOp::kAutoContrast: auto_contrast(img); break;
    case RaOp::kEqualize: equalize(img); break;
    case RaOp::kInvert:
      for (std::size_t i = 0; i < img.c * img.plane(); ++i) img.px[i] = 1.f - img.px[i];
      break;
    case RaOp::kRotate: {
      const double rad = sign * 30.0 * level * std::numbers::pi / 180.0;
      affine(img, std::cos(rad), std::sin(rad), -std::sin(rad), std::cos(rad), 0, 0);
      break;
    }
    case RaOp::kPosterize: {
      const int bits = std::max(1, 4 - static_cast<int>(level * 4));
      const int shift = 8 - bits;
      for (std::size_t i = 0; i < img.c * img.plane(); ++i) {
        const int v = static_cast<int>(std::lround(std::clamp(img.px[i], 0.f, 1.f) * 255.f));
        img.px[i] = static_cast<float>((v >> shift) << shift) / 255.f;
      }
      break;
    }
    case RaOp::kSolarize: {
      const float thresh = static_cast<float>(1.0 - level);
      for (std::size_t i = 0; i < img.c * img.plane(); ++i) {
        if (img.px[i] >= thresh) img.px[i] = 1.f - img.px[i];
      }
      break;
    }
    case RaOp::kSolarizeAdd: {
      const float add = static_cast<float>(110.0 / 255.0 * level);
      for (std::size_t i = 0; i < img.c * img.plane(); ++i) {
        if (img.px[i] < 128.f / 255.f) img.px[i] = std::min(1.f, img.px[i] + add);
      }
      break;
    }
    case RaOp::kColor: adjust_saturation(img, static_cast<float>(1 + sign * 0.9 * level)); break;
    case RaOp::kContrast: adjust_contrast(img, static_cast<float>(1 + sign * 0.9 * level)); break;
    case RaOp::kBrightness: adjust_brightness(img, static_cast<float>(1 + sign * 0.9 * level)); break;
    case RaOp::kSharpness: adjust_sharpness(img, static_cast<float>(1 + sign * 0.9 * level)); break;
    case RaOp::kShearX: affine(img, 1, sign * 0.3 * level, 0, 1, 0, 0); break;
    case RaOp::kShearY: affine(img, 1, 0, sign * 0.3 * level, 1, 0, 0); break;
    case RaOp::kTranslateX:
      affine(img, 1, 0, 0, 1, sign * 0.45 * level * static_cast<double>(img.w), 0);
      break;
    case RaOp::kTranslateY:
      affine(img, 1, 0, 0, 1, 0, sign * 0.45 * level * static_cast<double>(img.h));
      break;
    case RaOp::kCount: break;
  }
}

void rand_augment(Image img, const RandAugmentSpec& spec, Rng& rng) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int k = 0; k < spec.num_ops; ++k) {
    const auto op = static_cast<RaOp>(uniform_int(rng, 0, static_cast<int>(RaOp::kCount) - 1));
    double m = spec.magnitude;
    if (spec.magnitude_std > 0) m += spec.magnitude_std * jitter(rng);
    m = std::clamp(m, 0.0, 10.0);
    if (uniform01(rng) < spec.op_prob) rand_augment_op(img, op, m, rng);
  }
  clamp01(img);
}

void augment_one(Image img, const AugmentPolicy& p, Rng& rng) {
  if (p.random_resized_crop) random_resized_crop(img, p, rng);
  if (p.hflip_prob > 0 && uniform01(rng) < p.hflip_prob) ops::hflip(img.px, img.c, img.h, img.w);
  if (p.color_jitter > 0) color_jitter(img, p.color_jitter, rng);
  if (p.rand_augment.num_ops > 0) rand_augment(img, p.rand_augment, rng);
  if (p.erase_prob > 0 && uniform01(rng) < p.erase_prob) {
    ops::random_erase(img.px, img.c, img.h, img.w, p, rng);
  }
  clamp01(img);
}

}  // namespace

namespace ops {

void hflip(float* chw, std::size_t c, std::size_t h, std::size_t w) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      float* row = chw + (ch * h + y) * w;
      std::reverse(row, row + w);
    }
}

void random_erase(float* chw, std::size_t c, std::size_t h, std::size_t w,
                  const AugmentPolicy& p, Rng& rng) {
  const double area = static_cast<double>(h * w);
  const double log_lo = std::log(p.erase_aspect.first), log_hi = std::log(p.erase_aspect.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, p.erase_area.first, p.erase_area.second);
    const double aspect = std::exp(uniform(rng, log_lo, log_hi));
    const long eh = std::lround(std::sqrt(target * aspect));
    const long ew = std::lround(std::sqrt(target / aspect));
    if (eh < 1 || ew < 1 || eh > static_cast<long>(h) || ew > static_cast<long>(w)) continue;
    const auto top = uniform_int(rng, 0, static_cast<long>(h) - eh);
    const auto left = uniform_int(rng, 0, static_cast<long>(w) - ew);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (long y = top; y < top + eh; ++y)
        for (long x = left; x < left + ew; ++x) {
          chw[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] =
              p.erase_fill == EraseFill::kConstant ? static_cast<float>(p.erase_value)
                                                   : static_cast<float>(uniform01(rng));
        }
    return;
  }
}

}  // namespace ops

template <typename T>
Tensor<T> apply(const AugmentPolicy& policy, const Tensor<T>& images, std::uint64_t seed) {
  if (images.rank() != 4) {
    throw std::invalid_argument("augment: expected [N,C,H,W], got " + shape_string(images.shape()));
  }
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h < policy.min_size || w < policy.min_size) {
    throw std::invalid_argument("augment: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " smaller than minimum " + std::to_string(policy.min_size));
  }
  if (policy.is_identity()) return images;
  Tensor<T> out = images;
  std::vector<float> buf(c * h * w);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    std::copy(row.begin(), row.end(), buf.begin());
    Rng rng(sample_seed(seed, i));
    augment_one(Image{c, h, w, buf.data()}, policy, rng);
    std::copy(buf.begin(), buf.end(), row.begin());
  }
  return out;
}

template <typename T>
ViewPair<T> make_views(const UnlabeledBatch<T>& batch, const AugmentPolicy& weak,
                       const AugmentPolicy& strong, std::uint64_t seed) {
  if (batch.size() == 0) throw std::invalid_argument("make_views: empty batch");
  return ViewPair<T>{apply(weak, batch.images, weak_view_seed(seed)),
                     apply(strong, batch.images, strong_view_seed(seed))};
}

template <typename T>
Tensor<T> center_crop(const Tensor<T>& images, std::size_t size) {
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h < size || w < size) {
    throw std::invalid_argument("center_crop: image " + std::to_string(h) + "x" +
                                std::to_string(w) + " smaller than crop " + std::to_string(size));
  }
  if (h == size && w == size) return images;
  Tensor<T> out({n, c, size, size});
  const std::size_t top = (h - size) / 2, left = (w - size) / 2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          out[((i * c + ch) * size + y) * size + x] =
              images[((i * c + ch) * h + top + y) * w + left + x];
        }
  return out;
}

template Tensor<float> apply<float>(const AugmentPolicy&, const Tensor<float>&, std::uint64_t);
template Tensor<double> apply<double>(const AugmentPolicy&, const Tensor<double>&, std::uint64_t);
template ViewPair<float> make_views<float>(const UnlabeledBatch<float>&, const AugmentPolicy&,
                                           const AugmentPolicy&, std::uint64_t);
template ViewPair<double> make_views<double>(const UnlabeledBatch<double>&, const AugmentPolicy&,
                                             const AugmentPolicy&, std::uint64_t);
template Tensor<float> center_crop<float>(const Tensor<float>&, std::size_t);
template Tensor<double> center_crop<double>(const Tensor<double>&, std::size_t);

}  // namespace semivit
