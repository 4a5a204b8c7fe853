#pragma once
// Independent float64 reference implementations used by the unit tests and the
// acceptance binary. Everything here is written with plain loops and shares no
// arithmetic with the library beyond the documented seed-derivation rules.

#include <cstdint>
#include <vector>

#include "semivit/core_types.hpp"
#include "semivit/params.hpp"
#include "semivit/vit.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// Logits [N][C] of the vision transformer in inference mode.
Matrix vit_forward(const semivit::ViTConfig& cfg, const semivit::ParamSet<double>& p,
                   const semivit::Tensor<double>& images);

std::vector<double> softmax(const std::vector<double>& z);
// -sum_k target_k * log softmax(z)_k
double cross_entropy(const std::vector<double>& z, const std::vector<double>& target);

struct SemiLoss {
  double labeled = 0, unlabeled = 0, total = 0;
  std::vector<double> confidence;
  std::vector<double> lambda;
  std::vector<bool> include;
};

// Straight-line transcription of one semi-supervised loss evaluation for the
// prob_pseudo variant with blend-only unlabeled mixing, labeled mixing disabled
// (mixup and cutmix alphas 0) and drop path off.
SemiLoss semi_loss(const semivit::ViTConfig& cfg, const semivit::StageConfig& stage,
                   const semivit::ParamSet<double>& student, const semivit::ParamSet<double>& teacher,
                   const semivit::LabeledBatch<double>& labeled,
                   const semivit::ViewPair<double>& views, std::uint64_t step_seed);

// Depth-1 or depth-2, dim-16 float64 toy model with 8x8 inputs.
semivit::ViTConfig toy_config(int depth);
semivit::ParamSet<double> perturbed_params(const semivit::VisionTransformer<double>& m,
                                           std::uint64_t seed, double noise);
semivit::LabeledBatch<double> toy_labeled(const semivit::ViTConfig& cfg, std::size_t n,
                                          std::uint64_t seed);
semivit::ViewPair<double> toy_views(const semivit::ViTConfig& cfg, std::size_t n, std::uint64_t seed);

struct GradCheck {
  int checked = 0;
  double max_rel_err = 0;
  // max |g_tied - g_detached|: gradient with the teacher aliased to the student
  // minus gradient with a detached copy. Zero iff nothing flows through the teacher.
  double teacher_path_grad = 0;
};

// Analytic gradient of the full semi-supervised loss (compute_semi_loss) against
// central differences with the teacher held fixed, on a strided coordinate subset.
GradCheck semi_gradient_check(const semivit::StageConfig& stage, int depth, std::size_t per_tensor);

}  // namespace oracle
