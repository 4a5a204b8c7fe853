#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "semivit/errors.hpp"
#include "semivit/losses.hpp"
#include "semivit/vit.hpp"

using namespace semivit;

namespace {

ViTConfig toy_config() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.in_chans = 2;
  c.embed_dim = 16;
  c.depth = 1;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  c.drop_path_rate = 0.0;
  return c;
}

Tensor<double> random_images(std::size_t n, const ViTConfig& c, std::uint64_t seed) {
  Tensor<double> t({n, static_cast<std::size_t>(c.in_chans), static_cast<std::size_t>(c.image_size),
                    static_cast<std::size_t>(c.image_size)});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// L = sum(logits * R); checks dL/dtheta against central differences on every
// coordinate (or a strided subset) and returns the number checked.
int check_model_gradient(const ViTConfig& cfg, bool training, std::size_t max_per_tensor) {
  VisionTransformer<double> model(cfg);
  ParamSet<double> params = model.init_params(11);
  // Non-trivial values everywhere, including norms and biases.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 0.1);
  for (auto& p : params)
    for (auto& v : p.value) v += nd(rng);
  const Tensor<double> images = random_images(3, cfg, 7);
  Tensor<double> r({3, static_cast<std::size_t>(cfg.num_classes)});
  for (auto& v : r.storage()) v = nd(rng) * 10;
  const std::uint64_t drop_seed = 99;

  auto loss = [&](const ParamSet<double>& p) {
    Tensor<double> logits = model.forward(p, images, training, drop_seed);
    double s = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i] * r[i];
    return s;
  };
  ForwardCache<double> cache;
  model.forward(params, images, training, drop_seed, &cache);
  ParamSet<double> grads = params.zeros_like();
  model.backward(params, cache, r, grads);

  int checked = 0;
  const double h = 1e-6;
  for (std::size_t t = 0; t < params.count(); ++t) {
    const std::size_t n = params[t].value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_per_tensor);
    for (std::size_t i = 0; i < n; i += stride) {
      ParamSet<double> p = params;
      p[t].value[i] += h;
      const double lp = loss(p);
      p[t].value[i] -= 2 * h;
      const double lm = loss(p);
      const double fd = (lp - lm) / (2 * h);
      const double an = grads[t].value[i];
      // Floor of 1e-3: central-difference roundoff is ~1e-9 here, and some
      // gradients (key biases) are exactly zero.
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
      INFO(params[t].name << "[" << i << "] analytic " << an << " numeric " << fd);
      CHECK(std::abs(fd - an) / denom < 1e-5);
      ++checked;
    }
  }
  return checked;
}

}  // namespace

TEST_CASE("vit: analytic gradient matches central differences (mean pool, sincos)") {
  CHECK(check_model_gradient(toy_config(), false, 12) >= 50);
}

TEST_CASE("vit: gradient with class token, learnable positions, depth 2, drop path") {
  ViTConfig c = toy_config();
  c.pool = Pool::kClsToken;
  c.pos_embed = PosEmbed::kLearnable;
  c.depth = 2;
  c.drop_path_rate = 0.5;
  CHECK(check_model_gradient(c, true, 8) >= 50);
}

TEST_CASE("vit: parameter layout and naming") {
  ViTConfig c = toy_config();
  c.depth = 2;
  VisionTransformer<float> m(c);
  ParamSet<float> p = m.make_params();
  CHECK(p.at("patch_embed.weight").shape == Shape{16, 2 * 4 * 4});
  CHECK(p.at("blocks.1.attn.qkv.weight").shape == Shape{48, 16});
  CHECK(p.at("blocks.1.mlp.fc1.weight").shape == Shape{32, 16});
  CHECK(p.at("head.weight").shape == Shape{3, 16});
  CHECK_FALSE(p.contains("pos_embed"));
  CHECK_FALSE(p.contains("cls_token"));
  CHECK(p.at("patch_embed.weight").layer_id == 0);
  CHECK(p.at("blocks.0.norm1.weight").layer_id == 1);
  CHECK(p.at("blocks.1.mlp.fc2.bias").layer_id == 2);
  CHECK(p.at("head.bias").layer_id == 3);
  CHECK(p.at("norm.weight").layer_id == 3);
  CHECK(p.at("head.weight").weight_decay);
  CHECK_FALSE(p.at("head.bias").weight_decay);
  CHECK_FALSE(p.at("norm.weight").weight_decay);
}

TEST_CASE("vit: param groups cover every parameter once with layer-wise multipliers") {
  ViTConfig c = toy_config();
  c.depth = 3;
  c.pos_embed = PosEmbed::kLearnable;
  c.pool = Pool::kClsToken;
  VisionTransformer<float> m(c);
  ParamSet<float> p = m.make_params();
  const auto groups = m.param_groups(p, 0.5, 0.05);
  std::multiset<std::size_t> seen;
  int prev_layer = -1;
  for (const auto& g : groups) {
    CHECK(g.layer_id >= prev_layer);
    prev_layer = g.layer_id;
    CHECK(g.lr_multiplier == doctest::Approx(std::pow(0.5, 4 - g.layer_id)));
    for (auto i : g.indices) {
      seen.insert(i);
      CHECK(p[i].layer_id == g.layer_id);
      CHECK(p[i].weight_decay == g.weight_decay);
    }
  }
  CHECK(seen.size() == p.count());
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == p.count());
  CHECK_FALSE(p.at("pos_embed").weight_decay);
  CHECK_FALSE(p.at("cls_token").weight_decay);
  for (const auto& g : m.param_groups(p, 0.5, 0.0)) CHECK_FALSE(g.weight_decay);
}

TEST_CASE("vit: sincos table") {
  ViTConfig c = toy_config();
  c.pool = Pool::kClsToken;
  const auto t = sincos_pos_embed(c);
  REQUIRE(t.size() == 5u * 16u);
  for (int k = 0; k < 16; ++k) CHECK(t[k] == 0.0);  // class-token row
  // Patch (y=0, x=1) at token 2: column coordinate 1 with omega_0 = 1.
  CHECK(t[2 * 16 + 0] == doctest::Approx(std::sin(1.0)));
  CHECK(t[2 * 16 + 4] == doctest::Approx(std::cos(1.0)));
  CHECK(t[2 * 16 + 8] == doctest::Approx(0.0));
  CHECK(t[2 * 16 + 12] == doctest::Approx(1.0));
  ViTConfig bad = toy_config();
  bad.embed_dim = 18;
  bad.num_heads = 3;
  CHECK_THROWS_AS(VisionTransformer<float>{bad}, ConfigError);
}

TEST_CASE("vit: forward validates input shape and is deterministic") {
  VisionTransformer<float> m(toy_config());
  auto p = m.init_params(1);
  Tensor<float> wrong({2, 3, 8, 8});
  CHECK_THROWS_AS(m.forward(p, wrong, false), std::invalid_argument);
  Tensor<float> x({2, 2, 8, 8}, 0.25f);
  CHECK(m.forward(p, x, false) == m.forward(p, x, false));
  CHECK(m.init_params(1) == p);
  CHECK_FALSE(m.init_params(2) == p);
  auto z = m.init_params(1, true);
  for (float v : z.at("head.weight").value) CHECK(v == 0.0f);
}

TEST_CASE("vit: drop path rates increase linearly and are off at inference") {
  ViTConfig c = toy_config();
  c.depth = 4;
  c.drop_path_rate = 0.3;
  CHECK(c.block_drop_rate(0) == 0.0);
  CHECK(c.block_drop_rate(3) == doctest::Approx(0.3));
  CHECK(c.block_drop_rate(1) == doctest::Approx(0.1));
  VisionTransformer<float> m(c);
  auto p = m.init_params(3);
  Tensor<float> x({4, 2, 8, 8}, 0.5f);
  CHECK(m.forward(p, x, false, 1) == m.forward(p, x, false, 2));
}
