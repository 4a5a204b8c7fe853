#include <cmath>

#include "doctest.h"
#include "oracle.hpp"
#include "semivit/errors.hpp"
#include "semivit/teacher_student.hpp"

using namespace semivit;

namespace {

ParamSet<double>* const kNoGrads = nullptr;

StageConfig oracle_stage() {
  StageConfig s;
  s.mixup_alpha = 0;
  s.cutmix_alpha = 0;
  s.drop_path = 0;
  s.label_smoothing = 0.1;
  s.tau = 0.3;
  s.mu = 2.0;
  s.unlabeled_mixup = UnlabeledMixup::kProbPseudo;
  return s;
}

// Toy student with a sharpened head so several pseudo labels clear the gate,
// and a teacher that differs from it.
struct Toy {
  ViTConfig cfg = oracle::toy_config(2);
  VisionTransformer<double> model{cfg};
  ParamSet<double> student, teacher;
  LabeledBatch<double> labeled;
  ViewPair<double> views;

  Toy() {
    student = oracle::perturbed_params(model, 21, 0.2);
    for (auto& v : student.at("head.weight").value) v *= 8;
    teacher = oracle::perturbed_params(model, 22, 0.2);
    for (auto& v : teacher.at("head.weight").value) v *= 8;
    labeled = oracle::toy_labeled(cfg, 3, 4);
    views = oracle::toy_views(cfg, 6, 8);
  }
};

ParamSet<double> constant_params(double v) {
  ParamSet<double> p;
  p.add("a", {4}, 0, true);
  p.add("b", {2, 3}, 1, false);
  p.fill(v);
  return p;
}

}  // namespace

TEST_CASE("ema_update: endpoints, geometric decay, contraction") {
  ParamSet<double> t = constant_params(3.0);
  const ParamSet<double> s = constant_params(1.0);
  ema_update(t, s, 1.0);
  CHECK(t == constant_params(3.0));
  ema_update(t, s, 0.0);
  CHECK(t == s);

  // Fixed student: teacher - student shrinks by 0.9 per update.
  t = constant_params(3.0);
  for (int k = 1; k <= 10; ++k) {
    ema_update(t, s, 0.9);
    for (const auto& p : t)
      for (double v : p.value) CHECK(v - 1.0 == doctest::Approx(2.0 * std::pow(0.9, k)).epsilon(1e-12));
  }
  // Float path: distance never grows.
  ParamSet<float> tf = constant_params(-5.0).cast<float>(), sf = constant_params(0.5).cast<float>();
  double prev = 5.5;
  for (int k = 0; k < 50; ++k) {
    ema_update(tf, sf, 0.99);
    const double d = std::abs(tf[0].value[0] - 0.5);
    CHECK(d <= prev);
    prev = d;
  }
  ParamSet<double> wrong;
  wrong.add("a", {5}, 0, true);
  CHECK_THROWS_WITH_AS(ema_update(wrong, s, 0.5), doctest::Contains("a"), std::invalid_argument);
  CHECK_THROWS(ema_update(t, s, 1.5));
}

TEST_CASE("pseudo labels: worked values, ties, non-finite input") {
  Tensor<double> z({3, 3});
  z.row(0)[0] = 10;
  z.row(2)[1] = 4, z.row(2)[2] = 4;
  const auto pl = pseudo_labels_from_logits(z);
  CHECK(pl.hard_label == std::vector<int>{0, 0, 1});
  CHECK(pl.confidence[0] == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 2)).epsilon(1e-14));
  CHECK(pl.confidence[0] == doctest::Approx(0.99991).epsilon(1e-5));
  CHECK(pl.confidence[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  Tensor<float> big({1, 2});
  big[0] = 1000.0f;
  CHECK(pseudo_labels_from_logits(big).confidence[0] == 1.0f);
  big[1] = std::nanf("");
  CHECK_THROWS_AS(pseudo_labels_from_logits(big), NonFiniteError);
}

TEST_CASE("semi loss matches the float64 oracle") {
  Toy toy;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (bool smooth : {true, false}) {
      StageConfig s = oracle_stage();
      s.smooth_pseudo_labels = smooth;
      const auto want = oracle::semi_loss(toy.cfg, s, toy.student, toy.teacher, toy.labeled,
                                          toy.views, seed);
      const auto got = compute_semi_loss(toy.model, toy.student, toy.teacher, toy.labeled,
                                         toy.views, s, seed, kNoGrads);
      CHECK(std::abs(got.labeled - want.labeled) < 1e-9);
      CHECK(std::abs(got.unlabeled - want.unlabeled) < 1e-9);
      CHECK(std::abs(got.total - want.total) < 1e-9);
      std::size_t inc = 0;
      for (bool b : want.include) inc += b;
      CHECK(got.clean_fraction_after == doctest::Approx(inc / 6.0));
    }
  }
}

TEST_CASE("semi loss: mu = 0 is supervised, tau above one zeroes the unlabeled term") {
  Toy toy;
  StageConfig s = oracle_stage();
  s.mu = 0;
  ParamSet<double> g_semi = toy.student.zeros_like(), g_sup = toy.student.zeros_like();
  const auto r = compute_semi_loss(toy.model, toy.student, toy.teacher, toy.labeled, toy.views, s, 5,
                                   &g_semi);
  const auto sup = compute_supervised_loss(toy.model, toy.student, toy.labeled, s, 5, &g_sup);
  CHECK(r.total == sup.total);
  CHECK(g_semi == g_sup);

  s = oracle_stage();
  s.tau = 1.01;
  const auto r2 = compute_semi_loss(toy.model, toy.student, toy.teacher, toy.labeled, toy.views, s, 5,
                                    kNoGrads);
  CHECK(r2.unlabeled == 0.0);
  CHECK(r2.total == r2.labeled);
  CHECK(r2.clean_fraction == 0.0);
}

TEST_CASE("semi step: optimizer and EMA follow a hand computation") {
  Toy toy;
  StageConfig s = oracle_stage();
  s.ema_momentum = 0.9;
  StudentState<double> st{toy.student, AdamW<double>(toy.student, {0.9, 0.999, 1e-8, 0.05}), 0};
  TeacherState<double> te{toy.teacher, 0.9};
  StepContext ctx;
  ctx.lr = 1e-3;
  ctx.groups = toy.model.param_groups(toy.student, 1.0, 0.05);
  ctx.seed = 42;

  ParamSet<double> g = toy.student.zeros_like();
  const auto want = compute_semi_loss(toy.model, toy.student, toy.teacher, toy.labeled, toy.views, s,
                                      42, &g);
  const auto oracle_loss = oracle::semi_loss(toy.cfg, s, toy.student, toy.teacher, toy.labeled,
                                             toy.views, 42);
  const auto r = semi_step(toy.model, st, te, toy.labeled, toy.views, s, ctx);
  CHECK(std::abs(r.total - oracle_loss.total) < 1e-6);
  CHECK(r.total == want.total);
  CHECK(st.step == 1);

  // First AdamW step: bias-corrected moments are g and g^2.
  for (std::size_t t = 0; t < toy.student.count(); ++t) {
    const double wd = toy.student[t].weight_decay ? 0.05 : 0.0;
    for (std::size_t i = 0; i < toy.student[t].value.size(); ++i) {
      const double p0 = toy.student[t].value[i], gi = g[t].value[i];
      const double p1 = p0 * (1 - 1e-3 * wd) - 1e-3 * gi / (std::abs(gi) + 1e-8);
      CHECK(std::abs(st.params[t].value[i] - p1) < 1e-12);
      const double t1 = 0.9 * toy.teacher[t].value[i] + 0.1 * p1;
      CHECK(std::abs(te.params[t].value[i] - t1) < 1e-12);
    }
  }
}

TEST_CASE("semi step: fixmatch pseudo-labels with the student and skips the EMA") {
  Toy toy;
  StageConfig s = oracle_stage();
  s.framework = Framework::kFixMatch;
  StudentState<double> st{toy.student, AdamW<double>(toy.student, {}), 0};
  TeacherState<double> te{toy.teacher, 0.5};
  StepContext ctx{1e-3, toy.model.param_groups(toy.student, 1.0, 0.05), 7};
  const auto want = compute_semi_loss(toy.model, toy.student, toy.student, toy.labeled, toy.views, s,
                                      7, kNoGrads);
  const auto r = semi_step(toy.model, st, te, toy.labeled, toy.views, s, ctx);
  CHECK(r.total == want.total);
  CHECK(te.params == toy.teacher);
}

TEST_CASE("semi loss gradient: finite differences and no teacher path") {
  StageConfig s = oracle_stage();
  const auto gc = oracle::semi_gradient_check(s, 2, 6);
  CHECK(gc.checked > 50);
  CHECK(gc.max_rel_err < 1e-4);
  CHECK(gc.teacher_path_grad == 0.0);
  s.unlabeled_mixup = UnlabeledMixup::kPseudo;
  s.mixup_alpha = 0.8;
  s.drop_path = 0.2;
  const auto g2 = oracle::semi_gradient_check(s, 2, 4);
  CHECK(g2.max_rel_err < 1e-4);
  CHECK(g2.teacher_path_grad == 0.0);
}

TEST_CASE("semi step: non-finite loss raises with the step index") {
  Toy toy;
  StageConfig s = oracle_stage();
  StudentState<double> st{toy.student, AdamW<double>(toy.student, {}), 12};
  st.params.at("head.bias").value[0] = INFINITY;
  TeacherState<double> te{toy.teacher, 0.9};
  StepContext ctx{1e-3, toy.model.param_groups(toy.student, 1.0, 0.05), 1};
  CHECK_THROWS_WITH_AS(semi_step(toy.model, st, te, toy.labeled, toy.views, s, ctx),
                       doctest::Contains("step 12"), NonFiniteError);
}
