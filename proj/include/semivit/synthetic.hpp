#pragma once
// Seeded synthetic image classification benchmark: each class is a shape
// (disk, square, triangle, diamond, cross) with a texture (solid or striped),
// drawn light on a dark background with random hues, position, size, tilt, a
// lighting gradient and pixel noise.

#include <cstdint>
#include <string>

#include "semivit/core_types.hpp"

namespace semivit {

struct SyntheticSpec {
  int num_classes = 10;  // at most 10
  int image_size = 32;
  int train_size = 5000;
  int eval_size = 1000;
  double noise = 0.06;  // per-pixel Gaussian noise std
  std::uint64_t seed = 0;
};

// Train or eval part; labels are balanced (sample i has class i % C) and the
// two parts never share a random stream.
Dataset make_synthetic(const SyntheticSpec& spec, bool eval_part);

std::string synthetic_class_name(int c);

}  // namespace semivit
