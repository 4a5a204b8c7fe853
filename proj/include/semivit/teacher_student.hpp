#pragma once
// Student/teacher state, the EMA teacher update, pseudo labeling, and one
// training step of supervised or semi-supervised fine-tuning.

#include <cstdint>
#include <vector>

#include "semivit/core_types.hpp"
#include "semivit/losses.hpp"
#include "semivit/mixup.hpp"
#include "semivit/params.hpp"
#include "semivit/vit.hpp"

namespace semivit {

template <typename T>
struct StudentState {
  ParamSet<T> params;
  AdamW<T> optimizer;
  std::int64_t step = 0;
};

template <typename T>
struct TeacherState {
  ParamSet<T> params;
  double momentum = 0.9999;
};

// teacher = m * teacher + (1 - m) * student, elementwise over every tensor.
// m == 1 leaves the teacher untouched and m == 0 copies the student exactly.
// Throws std::invalid_argument naming the first mismatched tensor.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double momentum);
template <typename T>
void ema_update(TeacherState<T>& teacher, const StudentState<T>& student);

template <typename T>
struct PseudoLabels {
  Tensor<T> probs;  // [N, C] row softmax of the teacher logits
  std::vector<int> hard_label;
  std::vector<T> confidence;
};

// Softmax (computed in double), argmax with ties to the lowest index, max prob.
// Throws NonFiniteError on a non-finite logit.
template <typename T>
PseudoLabels<T> pseudo_labels_from_logits(const Tensor<T>& logits);

// Teacher inference (no drop path, no activation cache) on the weak views.
template <typename T>
PseudoLabels<T> generate_pseudo_labels(const VisionTransformer<T>& model,
                                       const ParamSet<T>& teacher, const Tensor<T>& weak);

// Mixing configs derived from a stage config. Labeled mixing draws one lambda
// per batch; unlabeled mixing draws one per sample.
MixConfig labeled_mix_config(const StageConfig& cfg);
MixConfig unlabeled_mix_config(const StageConfig& cfg);

// Random streams used inside one step, all derived from the step seed.
inline std::uint64_t labeled_mix_seed(std::uint64_t step_seed) { return derive_seed(step_seed, "mix_labeled"); }
inline std::uint64_t unlabeled_mix_seed(std::uint64_t step_seed) { return derive_seed(step_seed, "mix_unlabeled"); }
inline std::uint64_t drop_path_seed(std::uint64_t step_seed) { return derive_seed(step_seed, "drop_path"); }

// Supervised objective on a (mixed) labeled batch. Accumulates into `grads`
// when given. Only `labeled` is filled in the report (total == labeled).
template <typename T>
LossReport compute_supervised_loss(const VisionTransformer<T>& model, const ParamSet<T>& params,
                                   const LabeledBatch<T>& labeled, const StageConfig& cfg,
                                   std::uint64_t step_seed, ParamSet<T>* grads);

// L = L_l + mu * L_u for one step, without touching any state. `teacher` is
// the pseudo-labeling parameter set: the EMA teacher, or the student itself in
// fixmatch mode. Gradients w.r.t. the student are accumulated into `grads`;
// nothing flows into the teacher.
template <typename T>
LossReport compute_semi_loss(const VisionTransformer<T>& model, const ParamSet<T>& student,
                             const ParamSet<T>& teacher, const LabeledBatch<T>& labeled,
                             const ViewPair<T>& views, const StageConfig& cfg,
                             std::uint64_t step_seed, ParamSet<T>* grads);

struct StepContext {
  double lr = 0;                  // base learning rate of this step
  std::vector<ParamGroup> groups;
  std::uint64_t seed = 0;         // step seed
};

// One optimizer step of supervised fine-tuning. Throws NonFiniteError with the
// step index on a non-finite loss, gradient or updated parameter.
template <typename T>
LossReport supervised_step(const VisionTransformer<T>& model, StudentState<T>& student,
                           const LabeledBatch<T>& labeled, const StageConfig& cfg,
                           const StepContext& ctx);

// One semi-supervised step: pseudo labels from the teacher (or the student in
// fixmatch mode), unlabeled mixing, loss, optimizer update of the student, then
// the EMA update iff the framework is ema_teacher.
template <typename T>
LossReport semi_step(const VisionTransformer<T>& model, StudentState<T>& student,
                     TeacherState<T>& teacher, const LabeledBatch<T>& labeled,
                     const ViewPair<T>& views, const StageConfig& cfg, const StepContext& ctx);

}  // namespace semivit
