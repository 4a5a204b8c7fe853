#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "semivit/augment.hpp"
#include "semivit/errors.hpp"

using namespace semivit;

namespace {

Tensor<float> random_images(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                            std::uint64_t seed) {
  Tensor<float> t({n, c, h, w});
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : t.storage()) v = u(g);
  return t;
}

AugmentPolicy erase_only(std::pair<double, double> area, EraseFill fill) {
  AugmentPolicy p;
  p.name = PolicyName::kStrong;
  p.erase_prob = 1.0;
  p.erase_area = area;
  p.erase_aspect = {1.0, 1.0};
  p.erase_fill = fill;
  p.erase_value = 0.25;
  return p;
}

}  // namespace

TEST_CASE("augment: identity is bitwise pass-through, fixed seed is deterministic") {
  const auto x = random_images(5, 3, 12, 12, 1);
  CHECK(apply(AugmentPolicy::identity(), x, 99).storage() == x.storage());

  for (const auto& p : {AugmentPolicy::weak(), AugmentPolicy::strong()}) {
    const auto a = apply(p, x, 7), b = apply(p, x, 7), c = apply(p, x, 8);
    CHECK(a.storage() == b.storage());
    CHECK(a.storage() != c.storage());
    CHECK(a.shape() == x.shape());
    for (float v : a.storage()) CHECK((v >= 0.f && v <= 1.f));
  }
}

TEST_CASE("augment: sample i depends only on the batch seed and its index") {
  const auto x = random_images(6, 3, 10, 10, 2);
  Tensor<float> head({3, 3, 10, 10});
  std::copy(x.storage().begin(), x.storage().begin() + head.size(), head.storage().begin());
  const auto full = apply(AugmentPolicy::strong(), x, 31);
  const auto part = apply(AugmentPolicy::strong(), head, 31);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::equal(part.row(i).begin(), part.row(i).end(), full.row(i).begin()));
  }
}

TEST_CASE("random erase: whole image with constant fill matches a per-pixel oracle") {
  auto x = random_images(1, 3, 4, 4, 3);
  Rng rng(5);
  ops::random_erase(x.data(), 3, 4, 4, erase_only({1.0, 1.0}, EraseFill::kConstant), rng);
  for (float v : x.storage()) CHECK(v == 0.25f);

  // Random fill: every pixel is redrawn from [0, 1).
  Tensor<float> y({1, 3, 4, 4}, std::vector<float>(48, 2.0f));
  Rng rng2(5);
  ops::random_erase(y.data(), 3, 4, 4, erase_only({1.0, 1.0}, EraseFill::kRandom), rng2);
  for (float v : y.storage()) CHECK((v >= 0.f && v < 1.f));
}

TEST_CASE("random erase: quarter-area square hits the same block in every channel") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor<float> x({1, 3, 4, 4}, std::vector<float>(48, 0.75f));
    Rng rng(seed);
    ops::random_erase(x.data(), 3, 4, 4, erase_only({0.25, 0.25}, EraseFill::kConstant), rng);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t xx = 0; xx < 4; ++xx) {
        const float v0 = x[y * 4 + xx];
        CHECK(x[16 + y * 4 + xx] == v0);
        CHECK(x[32 + y * 4 + xx] == v0);
      }
    std::size_t erased = 0;
    for (std::size_t i = 0; i < 16; ++i) erased += x[i] == 0.25f;
    CHECK(erased == 4);
  }
}

TEST_CASE("hflip mirrors columns and is an involution") {
  const auto x = random_images(1, 2, 3, 5, 4);
  auto y = x;
  ops::hflip(y.data(), 2, 3, 5);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t col = 0; col < 5; ++col) {
        CHECK(y[(c * 3 + r) * 5 + col] == x[(c * 3 + r) * 5 + 4 - col]);
      }
  ops::hflip(y.data(), 2, 3, 5);
  CHECK(y.storage() == x.storage());
}

TEST_CASE("make_views: index-aligned views from derived seeds") {
  UnlabeledBatch<float> batch{random_images(4, 3, 8, 8, 6)};
  const auto weak = AugmentPolicy::weak(), strong = AugmentPolicy::strong();
  const auto v = make_views(batch, weak, strong, 123);
  CHECK(v.weak.shape() == batch.images.shape());
  CHECK(v.strong.shape() == batch.images.shape());
  CHECK(v.weak.storage() == apply(weak, batch.images, weak_view_seed(123)).storage());
  CHECK(v.strong.storage() == apply(strong, batch.images, strong_view_seed(123)).storage());
  CHECK(weak_view_seed(123) != strong_view_seed(123));

  const auto id = make_views(batch, AugmentPolicy::identity(), AugmentPolicy::identity(), 123);
  CHECK(id.weak.storage() == batch.images.storage());
  CHECK(id.strong.storage() == batch.images.storage());

  CHECK_THROWS(make_views(UnlabeledBatch<float>{}, weak, strong, 1));
}

TEST_CASE("augment: policy contents and validation") {
  CHECK_FALSE(AugmentPolicy::weak().uses_strong_ops());
  CHECK(AugmentPolicy::strong().uses_strong_ops());
  CHECK(AugmentPolicy::labeled().uses_strong_ops());
  CHECK(AugmentPolicy::identity().is_identity());
  CHECK_FALSE(AugmentPolicy::weak().is_identity());

  CHECK_THROWS_AS(apply(AugmentPolicy::weak(), random_images(1, 3, 3, 8, 7), 1), std::invalid_argument);
  CHECK_THROWS_AS(apply(AugmentPolicy::weak(), Tensor<float>({3, 8, 8}), 1), std::invalid_argument);

  AugmentPolicy bad = AugmentPolicy::strong();
  bad.erase_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AugmentPolicy::weak();
  bad.crop_scale = {0.8, 0.5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(AugmentPolicy::strong().validate());
}

TEST_CASE("center_crop takes the middle window") {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const auto y = center_crop(x, 2);
  CHECK(y.storage() == std::vector<double>{5, 6, 9, 10});
  CHECK(center_crop(x, 4).storage() == x.storage());
  CHECK_THROWS(center_crop(x, 5));
}
