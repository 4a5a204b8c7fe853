#include "semivit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "semivit/errors.hpp"
#include "semivit/rng.hpp"

namespace semivit {

namespace {

constexpr const char* kShapes[] = {"disk", "square", "triangle", "diamond", "cross"};

// Signed inside test in the shape's local frame, unit half-size.
bool inside(int shape, double u, double v) {
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2: return v <= 0.8 && v >= -0.9 + 1.7 * std::abs(u) / 1.0 && std::abs(u) <= 1.0;
    case 3: return std::abs(u) + std::abs(v) <= 1.0;
    default: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  }
}

}  // namespace

std::string synthetic_class_name(int c) {
  return std::string(kShapes[c % 5]) + (c >= 5 ? "_striped" : "_solid");
}

Dataset make_synthetic(const SyntheticSpec& spec, bool eval_part) {
  if (spec.num_classes < 1 || spec.num_classes > 10) {
    throw ConfigError("synthetic num_classes must lie in [1, 10]");
  }
  if (spec.image_size < 8) throw ConfigError("synthetic image_size must be >= 8");
  const int n = eval_part ? spec.eval_size : spec.train_size;
  const int s = spec.image_size;
  Dataset d;
  d.num_classes = spec.num_classes;
  d.images = Tensor<float>({static_cast<std::size_t>(n), 3, static_cast<std::size_t>(s),
                            static_cast<std::size_t>(s)});
  d.labels.resize(static_cast<std::size_t>(n));
  const std::uint64_t base = derive_seed(spec.seed, eval_part ? "synthetic_eval" : "synthetic_train");
  for (int i = 0; i < n; ++i) {
    const int label = i % spec.num_classes;
    d.labels[static_cast<std::size_t>(i)] = label;
    Rng rng(derive_seed(base, {static_cast<std::uint64_t>(i)}));
    const int shape = label % 5;
    const bool striped = label >= 5;

    // Dark background, light foreground: shape and texture carry the class.
    double bg[3], fg[3];
    for (int k = 0; k < 3; ++k) bg[k] = 0.35 * uniform01(rng);
    for (int k = 0; k < 3; ++k) fg[k] = 0.55 + 0.45 * uniform01(rng);
    const double half = (0.28 + 0.14 * uniform01(rng)) * s;
    const double cx = half + uniform01(rng) * (s - 2 * half);
    const double cy = half + uniform01(rng) * (s - 2 * half);
    const double tilt = (uniform01(rng) - 0.5) * (std::numbers::pi / 6);
    const double stripe_angle = uniform01(rng) * std::numbers::pi;
    const double stripe_period = 3.0 + 2.0 * uniform01(rng);
    const double grad_dir = uniform01(rng) * 2 * std::numbers::pi;
    const double grad_amp = 0.25 * uniform01(rng);
    std::normal_distribution<double> noise(0.0, spec.noise);
    const double ct = std::cos(tilt), st = std::sin(tilt);
    const double sa = std::cos(stripe_angle), sb = std::sin(stripe_angle);

    float* img = d.images.data() + static_cast<std::size_t>(i) * 3 * s * s;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double px = x + 0.5 - cx, py = y + 0.5 - cy;
        const double u = (ct * px + st * py) / half;
        const double v = (-st * px + ct * py) / half;
        const double* col = bg;
        double mixed[3];
        if (inside(shape, u, v)) {
          col = fg;
          if (striped) {
            const double phase = (sa * (x + 0.5) + sb * (y + 0.5)) / stripe_period;
            if (phase - std::floor(phase) < 0.5) {
              for (int k = 0; k < 3; ++k) mixed[k] = 0.35 * fg[k];
              col = mixed;
            }
          }
        }
        const double light =
            1.0 + grad_amp * ((std::cos(grad_dir) * (x - s / 2.0) + std::sin(grad_dir) * (y - s / 2.0)) / s);
        for (int k = 0; k < 3; ++k) {
          const double val = col[k] * light + noise(rng);
          img[(static_cast<std::size_t>(k) * s + y) * s + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
    }
  }
  return d;
}

}  // namespace semivit
