#include "semivit/teacher_student.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semivit/errors.hpp"
#include "semivit/kernels.hpp"

namespace semivit {

template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double momentum) {
  if (!(momentum >= 0 && momentum <= 1)) {
    throw std::invalid_argument("ema momentum must lie in [0, 1], got " + std::to_string(momentum));
  }
  teacher.check_same_layout(student);
  if (momentum == 1.0) return;
  for (std::size_t i = 0; i < teacher.count(); ++i) {
    auto& t = teacher[i].value;
    const auto& s = student[i].value;
    if (momentum == 0.0) {
      t = s;
    } else {
      kernels::axpby(t.size(), static_cast<T>(1.0 - momentum), s.data(), static_cast<T>(momentum),
                     t.data());
    }
  }
}

template <typename T>
void ema_update(TeacherState<T>& teacher, const StudentState<T>& student) {
  ema_update(teacher.params, student.params, teacher.momentum);
}

template <typename T>
PseudoLabels<T> pseudo_labels_from_logits(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("pseudo labels: logits must be [N, C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  PseudoLabels<T> out;
  out.probs = Tensor<T>(logits.shape());
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      if (!std::isfinite(row[k])) {
        throw NonFiniteError("non-finite teacher logit at sample " + std::to_string(i));
      }
      mx = std::max(mx, static_cast<double>(row[k]));
    }
    double sum = 0;
    for (std::size_t k = 0; k < c; ++k) sum += p[k] = std::exp(static_cast<double>(row[k]) - mx);
    std::size_t best = 0;
    for (std::size_t k = 0; k < c; ++k) {
      p[k] /= sum;
      if (p[k] > p[best]) best = k;
      out.probs[i * c + k] = static_cast<T>(p[k]);
    }
    out.hard_label.push_back(static_cast<int>(best));
    out.confidence.push_back(static_cast<T>(p[best]));
  }
  return out;
}

template <typename T>
PseudoLabels<T> generate_pseudo_labels(const VisionTransformer<T>& model,
                                       const ParamSet<T>& teacher, const Tensor<T>& weak) {
  return pseudo_labels_from_logits(model.forward(teacher, weak, /*training=*/false));
}

MixConfig labeled_mix_config(const StageConfig& cfg) {
  MixConfig m;
  m.mixup_alpha = cfg.mixup_alpha;
  m.cutmix_alpha = cfg.cutmix_alpha;
  m.switch_prob = cfg.switch_prob;
  m.elementwise = false;
  m.label_smoothing = cfg.label_smoothing;
  return m;
}

MixConfig unlabeled_mix_config(const StageConfig& cfg) {
  MixConfig m = labeled_mix_config(cfg);
  m.elementwise = true;
  m.label_smoothing = cfg.smooth_pseudo_labels ? cfg.label_smoothing : 0.0;
  m.unlabeled_cutmix = cfg.unlabeled_cutmix;
  return m;
}

namespace {

template <typename T>
Tensor<T> take_rows(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  Shape s = t.shape();
  s[0] = count;
  const std::size_t row = t.row_size();
  return Tensor<T>(s, std::vector<T>(t.data() + begin * row, t.data() + (begin + count) * row));
}

void check_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw NonFiniteError(std::string("non-finite ") + what + " at step " + std::to_string(step));
  }
}

}  // namespace

template <typename T>
LossReport compute_supervised_loss(const VisionTransformer<T>& model, const ParamSet<T>& params,
                                   const LabeledBatch<T>& labeled, const StageConfig& cfg,
                                   std::uint64_t step_seed, ParamSet<T>* grads) {
  labeled.validate();
  Rng rng(labeled_mix_seed(step_seed));
  MixedBatch<T> mixed = mix_labeled(labeled, labeled_mix_config(cfg), rng);
  ForwardCache<T> cache;
  Tensor<T> logits = model.forward(params, mixed.images, true, drop_path_seed(step_seed),
                                   grads ? &cache : nullptr);
  const std::vector<T> ones(labeled.size(), T(1));
  Tensor<T> dlogits;
  LossReport r;
  r.labeled = soft_target_loss<T>(logits, mixed.soft_labels, ones, labeled.size(),
                                  grads ? &dlogits : nullptr);
  r.total = r.labeled;
  if (grads) model.backward(params, cache, dlogits, *grads);
  return r;
}

template <typename T>
LossReport compute_semi_loss(const VisionTransformer<T>& model, const ParamSet<T>& student,
                             const ParamSet<T>& teacher, const LabeledBatch<T>& labeled,
                             const ViewPair<T>& views, const StageConfig& cfg,
                             std::uint64_t step_seed, ParamSet<T>* grads) {
  labeled.validate();
  const std::size_t n_l = labeled.size();
  const std::size_t n_u = views.weak.empty() ? 0 : views.weak.dim(0);
  if (n_u == 0 || views.strong.shape() != views.weak.shape()) {
    throw std::invalid_argument("semi step: weak/strong views must be non-empty and aligned");
  }

  // (1) Teacher pseudo labels. No cache is recorded, so no gradient path exists.
  PseudoLabels<T> pl = generate_pseudo_labels(model, teacher, views.weak);
  if (static_cast<int>(pl.probs.dim(1)) != labeled.num_classes) {
    throw std::invalid_argument("semi step: teacher class count differs from labeled batch");
  }
  PseudoBatch<T> pseudo = make_pseudo_batch(views.strong, std::move(pl.probs), cfg.tau);

  // (2) Unlabeled mixing, (3) labeled mixing.
  Rng urng(unlabeled_mix_seed(step_seed));
  MixedBatch<T> umix = mix_unlabeled(cfg.unlabeled_mixup, pseudo, unlabeled_mix_config(cfg),
                                     cfg.tau, urng);
  Rng lrng(labeled_mix_seed(step_seed));
  MixedBatch<T> lmix = mix_labeled(labeled, labeled_mix_config(cfg), lrng);

  LossReport r;
  std::size_t clean = 0, included = 0;
  double conf = 0;
  for (std::size_t i = 0; i < n_u; ++i) {
    clean += pseudo.clean_mask[i] ? 1 : 0;
    conf += static_cast<double>(pseudo.confidence[i]);
  }
  for (bool b : umix.include_mask) included += b ? 1 : 0;
  r.clean_fraction = static_cast<double>(clean) / static_cast<double>(n_u);
  r.clean_fraction_after = static_cast<double>(included) / static_cast<double>(n_u);
  r.mean_confidence = conf / static_cast<double>(n_u);
  if (umix.size() > 0) {
    double s = 0;
    for (double l : umix.lambda) s += l;
    r.mean_lambda = s / static_cast<double>(umix.size());
  }

  // (4) One student pass over labeled + unlabeled rows. With mu == 0 the
  // unlabeled rows are left out so the step equals a supervised step.
  const bool use_unlabeled = cfg.mu != 0 && umix.size() > 0;
  const std::size_t n_mix_u = use_unlabeled ? umix.size() : 0;
  Tensor<T> inputs = use_unlabeled ? concat_rows(lmix.images, umix.images) : lmix.images;
  ForwardCache<T> cache;
  Tensor<T> logits = model.forward(student, inputs, true, drop_path_seed(step_seed),
                                   grads ? &cache : nullptr);

  Tensor<T> logits_l = take_rows(logits, 0, n_l);
  Tensor<T> grad_l;
  const std::vector<T> ones(n_l, T(1));
  r.labeled = soft_target_loss<T>(logits_l, lmix.soft_labels, ones, n_l, grads ? &grad_l : nullptr);

  Tensor<T> grad_u;
  if (use_unlabeled) {
    Tensor<T> logits_u = take_rows(logits, n_l, n_mix_u);
    std::vector<T> w(n_mix_u);
    for (std::size_t i = 0; i < n_mix_u; ++i) w[i] = umix.include_mask[i] ? T(1) : T(0);
    r.unlabeled = soft_target_loss<T>(logits_u, umix.soft_labels, w, n_u,
                                      grads ? &grad_u : nullptr, cfg.mu);
  } else if (cfg.mu == 0) {
    // Reported for monitoring even though it carries no weight.
    if (umix.size() > 0) {
      Tensor<T> lu = model.forward(student, umix.images, false);
      std::vector<T> w(umix.size());
      for (std::size_t i = 0; i < umix.size(); ++i) w[i] = umix.include_mask[i] ? T(1) : T(0);
      r.unlabeled = soft_target_loss<T>(lu, umix.soft_labels, w, n_u);
    }
  }
  r.total = r.labeled + cfg.mu * r.unlabeled;

  if (grads) {
    Tensor<T> dlogits = use_unlabeled ? concat_rows(grad_l, grad_u) : grad_l;
    model.backward(student, cache, dlogits, *grads);
  }
  return r;
}

template <typename T>
LossReport supervised_step(const VisionTransformer<T>& model, StudentState<T>& student,
                           const LabeledBatch<T>& labeled, const StageConfig& cfg,
                           const StepContext& ctx) {
  ParamSet<T> grads = student.params.zeros_like();
  LossReport r = compute_supervised_loss(model, student.params, labeled, cfg, ctx.seed, &grads);
  check_finite(r.total, "loss", student.step);
  if (!grads.all_finite()) {
    throw NonFiniteError("non-finite gradient in " + grads.first_non_finite() + " at step " +
                         std::to_string(student.step));
  }
  student.optimizer.step(student.params, grads, ctx.groups, ctx.lr);
  if (!student.params.all_finite()) {
    throw NonFiniteError("non-finite parameter " + student.params.first_non_finite() +
                         " at step " + std::to_string(student.step));
  }
  ++student.step;
  return r;
}

template <typename T>
LossReport semi_step(const VisionTransformer<T>& model, StudentState<T>& student,
                     TeacherState<T>& teacher, const LabeledBatch<T>& labeled,
                     const ViewPair<T>& views, const StageConfig& cfg, const StepContext& ctx) {
  const bool ema = cfg.framework == Framework::kEmaTeacher;
  if (ema) teacher.params.check_same_layout(student.params);
  ParamSet<T> grads = student.params.zeros_like();
  LossReport r = compute_semi_loss(model, student.params, ema ? teacher.params : student.params,
                                   labeled, views, cfg, ctx.seed, &grads);
  check_finite(r.total, "loss", student.step);
  if (!grads.all_finite()) {
    throw NonFiniteError("non-finite gradient in " + grads.first_non_finite() + " at step " +
                         std::to_string(student.step));
  }
  student.optimizer.step(student.params, grads, ctx.groups, ctx.lr);
  if (!student.params.all_finite()) {
    throw NonFiniteError("non-finite parameter " + student.params.first_non_finite() +
                         " at step " + std::to_string(student.step));
  }
  ++student.step;
  if (ema) ema_update(teacher, student);
  return r;
}

#define SEMIVIT_INSTANTIATE(T)                                                                   \
  template void ema_update<T>(ParamSet<T>&, const ParamSet<T>&, double);                         \
  template void ema_update<T>(TeacherState<T>&, const StudentState<T>&);                         \
  template PseudoLabels<T> pseudo_labels_from_logits<T>(const Tensor<T>&);                       \
  template PseudoLabels<T> generate_pseudo_labels<T>(const VisionTransformer<T>&,                \
                                                     const ParamSet<T>&, const Tensor<T>&);      \
  template LossReport compute_supervised_loss<T>(const VisionTransformer<T>&,                    \
                                                 const ParamSet<T>&, const LabeledBatch<T>&,     \
                                                 const StageConfig&, std::uint64_t,              \
                                                 ParamSet<T>*);                                  \
  template LossReport compute_semi_loss<T>(const VisionTransformer<T>&, const ParamSet<T>&,      \
                                           const ParamSet<T>&, const LabeledBatch<T>&,           \
                                           const ViewPair<T>&, const StageConfig&,               \
                                           std::uint64_t, ParamSet<T>*);                         \
  template LossReport supervised_step<T>(const VisionTransformer<T>&, StudentState<T>&,          \
                                         const LabeledBatch<T>&, const StageConfig&,             \
                                         const StepContext&);                                    \
  template LossReport semi_step<T>(const VisionTransformer<T>&, StudentState<T>&,                \
                                   TeacherState<T>&, const LabeledBatch<T>&, const ViewPair<T>&, \
                                   const StageConfig&, const StepContext&);

SEMIVIT_INSTANTIATE(float)
SEMIVIT_INSTANTIATE(double)
#undef SEMIVIT_INSTANTIATE

}  // namespace semivit
