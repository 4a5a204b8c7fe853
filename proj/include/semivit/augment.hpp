#pragma once
// Weak / strong / labeled augmentation policies for small images in [0,1].

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

#include "semivit/core_types.hpp"
#include "semivit/rng.hpp"
#include "semivit/tensor.hpp"

namespace semivit {

enum class PolicyName { kWeak, kStrong, kLabeled, kIdentity };
std::string_view to_string(PolicyName p);
PolicyName parse_policy_name(std::string_view s);

enum class EraseFill { kRandom, kConstant };

struct RandAugmentSpec {
  int num_ops = 2;
  int magnitude = 9;         // of 10
  double magnitude_std = 0.5;
  double op_prob = 0.5;      // each sampled op is applied with this probability
};

struct AugmentPolicy {
  PolicyName name = PolicyName::kIdentity;
  std::pair<double, double> crop_scale{1.0, 1.0};   // area fraction
  std::pair<double, double> crop_ratio{3.0 / 4.0, 4.0 / 3.0};
  bool random_resized_crop = false;
  double hflip_prob = 0.0;
  double color_jitter = 0.0;  // brightness/contrast/saturation strength
  RandAugmentSpec rand_augment{0, 9, 0.5, 0.5};
  double erase_prob = 0.0;
  std::pair<double, double> erase_area{0.02, 1.0 / 3.0};
  std::pair<double, double> erase_aspect{0.3, 3.3};
  EraseFill erase_fill = EraseFill::kRandom;
  double erase_value = 0.5;  // used with EraseFill::kConstant
  std::size_t min_size = 4;  // images smaller than this in H or W are rejected

  static AugmentPolicy identity();
  // Random resized crop + horizontal flip + color jitter 0.4.
  static AugmentPolicy weak();
  // Random resized crop + flip + RandAugment(2 ops, m9, std 0.5) + random erasing 0.25.
  static AugmentPolicy strong();
  static AugmentPolicy labeled();

  bool is_identity() const;
  bool uses_strong_ops() const { return rand_augment.num_ops > 0 || erase_prob > 0; }
  // Throws ConfigError.
  void validate() const;
};

// Per-sample seed of sample `index` under batch seed `seed`.
constexpr std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, {static_cast<std::uint64_t>(index)});
}

// Batch seeds of the two views inside make_views.
constexpr std::uint64_t weak_view_seed(std::uint64_t seed) { return derive_seed(seed, "weak"); }
constexpr std::uint64_t strong_view_seed(std::uint64_t seed) { return derive_seed(seed, "strong"); }

// Applies `policy` to each image of [N,C,H,W]; sample i draws from sample_seed(seed, i).
template <typename T>
Tensor<T> apply(const AugmentPolicy& policy, const Tensor<T>& images, std::uint64_t seed);

template <typename T>
ViewPair<T> make_views(const UnlabeledBatch<T>& batch, const AugmentPolicy& weak,
                       const AugmentPolicy& strong, std::uint64_t seed);

// Center crop of every image to size x size. Throws if an image is smaller.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& images, std::size_t size);

// Single-image operations on [C,H,W] buffers, exposed for testing.
namespace ops {
void random_erase(float* chw, std::size_t c, std::size_t h, std::size_t w,
                  const AugmentPolicy& policy, Rng& rng);
void hflip(float* chw, std::size_t c, std::size_t h, std::size_t w);
}  // namespace ops

}  // namespace semivit
