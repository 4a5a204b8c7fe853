#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "semivit/losses.hpp"

using namespace semivit;

namespace {

Tensor<double> rows(std::vector<std::vector<double>> r) {
  Tensor<double> t({r.size(), r[0].size()});
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t k = 0; k < r[i].size(); ++k) t.row(i)[k] = r[i][k];
  return t;
}

}  // namespace

TEST_CASE("supervised_loss: worked values") {
  // Confident and correct: loss is about 2 exp(-50).
  CHECK(supervised_loss(rows({{50, 0, 0}}), std::vector<int>{0}, 0.0) < 1e-20);
  CHECK(supervised_loss(rows({{0, 0, 0, 0, 0}}), std::vector<int>{3}, 0.0) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));
  // Smoothing does not change the uniform case.
  CHECK(supervised_loss(rows({{1, 1, 1}}), std::vector<int>{0}, 0.3) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  // Targets (0.95, 0.05) against logits (2, 0): log(1 + e^-2) + 0.05 * 2.
  const double want = std::log1p(std::exp(-2.0)) + 0.1;
  CHECK(std::abs(supervised_loss(rows({{2, 0}, {0, 2}}), std::vector<int>{0, 1}, 0.1) - want) < 1e-14);
  CHECK_THROWS(supervised_loss(rows({{1, 2}}), std::vector<int>{2}, 0.0));
  CHECK_THROWS(supervised_loss(rows({{1, 2}}), std::vector<int>{0}, 1.0));
}

TEST_CASE("soft_target_loss: weights with the full batch as denominator") {
  const auto logits = rows({{2, 0}, {0, 2}, {1, 0}, {0, 1}});
  const auto t = rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const std::vector<double> w{1, 0, 1, 0};
  Tensor<double> g;
  const double l = soft_target_loss<double>(logits, t, w, 4, &g, 2.0);
  const double ce0 = std::log1p(std::exp(-2.0)), ce2 = std::log1p(std::exp(1.0));
  CHECK(l == doctest::Approx((ce0 + ce2) / 4).epsilon(1e-14));
  // Excluded rows get no gradient; included rows get scale / denom * (p - y).
  CHECK(g.row(1)[0] == 0.0);
  CHECK(g.row(3)[1] == 0.0);
  const double p0 = 1 / (1 + std::exp(-2.0));
  CHECK(g.row(0)[0] == doctest::Approx(2.0 / 4 * (p0 - 1)).epsilon(1e-14));
  CHECK_THROWS(soft_target_loss<double>(logits, t, w, 0));
}

TEST_CASE("soft targets from smoothed labels equal the smoothed supervised loss") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 7, c = 6;
    const double eps = 0.05 * trial / 2.0;
    Tensor<double> logits({n, c}), targets({n, c});
    std::vector<int> labels(n);
    for (auto& v : logits.storage()) v = nd(rng);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % c);
      for (std::size_t k = 0; k < c; ++k) {
        targets.row(i)[k] = eps / c + (static_cast<int>(k) == labels[i] ? 1 - eps : 0);
      }
    }
    const std::vector<double> ones(n, 1.0);
    const double a = supervised_loss(logits, labels, eps);
    const double b = soft_target_loss<double>(logits, targets, ones, n);
    double want = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(logits.row(i).begin(), logits.row(i).end());
      std::vector<double> y(targets.row(i).begin(), targets.row(i).end());
      want += oracle::cross_entropy(z, y) / n;
    }
    CHECK(std::abs(a - b) < 1e-7);
    CHECK(std::abs(a - want) < 1e-12);
  }
}

TEST_CASE("soft_cross_entropy: float path agrees with double") {
  const std::vector<float> z{1.5f, -0.25f, 3.0f}, y{0.2f, 0.3f, 0.5f};
  const std::vector<double> zd(z.begin(), z.end()), yd(y.begin(), y.end());
  std::vector<float> g(3);
  const double l = soft_cross_entropy<float>(z, y, g.data());
  CHECK(l == doctest::Approx(oracle::cross_entropy(zd, yd)).epsilon(1e-6));
  const auto p = oracle::softmax(zd);
  for (int k = 0; k < 3; ++k) CHECK(g[k] == doctest::Approx(p[k] - yd[k]).epsilon(1e-6));
}

TEST_CASE("lr_at: warmup from zero, cosine to min, clamping") {
  ScheduleState s{1e-3, 10, 110, 1e-5};
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 5) == doctest::Approx(5e-4));
  CHECK(lr_at(s, 10) == doctest::Approx(1e-3));
  CHECK(lr_at(s, 60) == doctest::Approx(1e-5 + (1e-3 - 1e-5) * 0.5));
  CHECK(lr_at(s, 110) == doctest::Approx(1e-5));
  CHECK(lr_at(s, 500) == lr_at(s, 110));
  CHECK(lr_at(s, -3) == 0.0);
  // Continuous at the warmup boundary and monotone after it.
  CHECK(std::abs(lr_at(s, 9) + 1e-4 - lr_at(s, 10)) < 1e-15);
  for (std::int64_t t = 10; t < 110; ++t) CHECK(lr_at(s, t + 1) <= lr_at(s, t));
  for (std::int64_t t = 0; t < 10; ++t) CHECK(lr_at(s, t + 1) > lr_at(s, t));
  ScheduleState no_warm{2e-3, 0, 50, 0};
  CHECK(lr_at(no_warm, 0) == 2e-3);
}

TEST_CASE("layer_multiplier: decay powers from the head down") {
  CHECK(layer_multiplier(13, 13, 0.65) == 1.0);
  CHECK(layer_multiplier(10, 13, 0.65) == doctest::Approx(0.274625).epsilon(1e-14));
  CHECK(layer_multiplier(0, 2, 0.5) == 0.25);
  CHECK(layer_multiplier(0, 4, 1.0) == 1.0);
  CHECK_THROWS(layer_multiplier(5, 4, 0.7));
}

TEST_CASE("AdamW: matches a hand-written update over several steps") {
  ParamSet<double> p;
  p.add("w", {3}, 1, true);
  p.add("b", {2}, 2, false);
  p[0].value = {0.5, -1.0, 2.0};
  p[1].value = {0.1, 0.2};
  std::vector<ParamGroup> groups(2);
  groups[0] = {{0}, 1, 0.5, true};
  groups[1] = {{1}, 2, 1.0, false};
  AdamWConfig cfg{0.9, 0.999, 1e-8, 0.05};
  AdamW<double> opt(p, cfg);

  std::vector<std::vector<double>> ref{p[0].value, p[1].value}, m(2), v(2);
  for (int t = 0; t < 2; ++t) {
    m[t].assign(ref[t].size(), 0);
    v[t].assign(ref[t].size(), 0);
  }
  const double lr = 1e-2;
  for (int step = 1; step <= 4; ++step) {
    ParamSet<double> g = p.zeros_like();
    for (int t = 0; t < 2; ++t)
      for (std::size_t i = 0; i < g[t].value.size(); ++i) g[t].value[i] = std::sin(step * 1.7 + i + t);
    opt.step(p, g, groups, lr);
    for (int t = 0; t < 2; ++t) {
      const double glr = lr * groups[t].lr_multiplier, wd = groups[t].weight_decay ? 0.05 : 0.0;
      for (std::size_t i = 0; i < ref[t].size(); ++i) {
        const double gi = g[t].value[i];
        m[t][i] = 0.9 * m[t][i] + 0.1 * gi;
        v[t][i] = 0.999 * v[t][i] + 0.001 * gi * gi;
        const double mh = m[t][i] / (1 - std::pow(0.9, step));
        const double vh = v[t][i] / (1 - std::pow(0.999, step));
        ref[t][i] = ref[t][i] * (1 - glr * wd) - glr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    for (int t = 0; t < 2; ++t)
      for (std::size_t i = 0; i < ref[t].size(); ++i) CHECK(std::abs(p[t].value[i] - ref[t][i]) < 1e-12);
  }
  CHECK(opt.steps() == 4);
}
