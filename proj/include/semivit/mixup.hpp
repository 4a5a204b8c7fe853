#pragma once
// Mixup / cutmix on labeled data and the three unlabeled-data variants:
// pseudo mixup, pseudo mixup+, and probabilistic pseudo mixup.

#include <cstddef>
#include <span>
#include <vector>

#include "semivit/core_types.hpp"
#include "semivit/rng.hpp"
#include "semivit/tensor.hpp"

namespace semivit {

struct MixConfig {
  double mixup_alpha = 0.8;
  double cutmix_alpha = 1.0;
  double switch_prob = 0.5;  // probability of picking cutmix when both alphas > 0
  bool elementwise = true;   // one lambda per sample instead of per batch
  // Smoothing applied to one-hot (pseudo) labels before they are mixed.
  double label_smoothing = 0.1;
  // Unlabeled variants may use cutmix geometry when the per-batch switch picks it.
  bool unlabeled_cutmix = false;

  void validate() const;
};

enum class MixMode { kBlend, kCut };

// Teacher output on the weak views plus the strong views the student will see.
template <typename T>
struct PseudoBatch {
  Tensor<T> images_strong;   // [N, C, H, W]
  Tensor<T> probs;           // [N, num_classes]
  std::vector<int> hard_label;
  std::vector<T> confidence;
  std::vector<bool> clean_mask;  // confidence >= tau

  std::size_t size() const { return hard_label.size(); }
  int num_classes() const { return probs.empty() ? 0 : static_cast<int>(probs.dim(1)); }
};

// Sample i of a MixedBatch is lambda * x[source] + (1 - lambda) * x[partner].
template <typename T>
struct MixedBatch {
  Tensor<T> images;
  Tensor<T> soft_labels;  // [M, num_classes]
  std::vector<double> lambda;
  std::vector<T> confidence_star;
  std::vector<bool> include_mask;
  std::vector<std::size_t> source;
  std::vector<std::size_t> partner;
  MixMode mode = MixMode::kBlend;

  std::size_t size() const { return lambda.size(); }
};

// Beta(alpha, alpha) draw; alpha == 0 returns exactly 1 (mixing disabled).
double sample_lambda(double alpha, Rng& rng);

// Uniform random permutation of [0, n).
std::vector<std::size_t> pair_shuffle(std::size_t n, Rng& rng);

// Blend: out = lambda * xi + (1 - lambda) * xj, returns lambda.
// Cut: copies xi, pastes an in-bounds box of xj covering round(sqrt(1-lambda) * side)
// on each side, and returns the realized 1 - box_area / image_area.
// `shape` is the per-image [C, H, W].
template <typename T>
double mix_images(std::span<const T> xi, std::span<const T> xj, std::span<T> out,
                  const Shape& shape, double lambda, MixMode mode, Rng& rng);

// out = lambda * yi + (1 - lambda) * yj.
template <typename T>
void mix_labels(std::span<const T> yi, std::span<const T> yj, double lambda, std::span<T> out);

// (1 - eps) * onehot(label) + eps / num_classes.
template <typename T>
std::vector<T> smoothed_one_hot(int label, int num_classes, double eps);

// Pseudo batch from teacher probabilities; clean_mask uses the inclusive gate o >= tau.
template <typename T>
PseudoBatch<T> make_pseudo_batch(Tensor<T> images_strong, Tensor<T> probs, double tau);

// Unlabeled variants. `tau` gates inclusion; rows of the output soft labels are
// smoothed one-hot pseudo labels mixed with the same lambda as the images.
template <typename T>
MixedBatch<T> no_unlabeled_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau);
template <typename T>
MixedBatch<T> pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau, Rng& rng);
template <typename T>
MixedBatch<T> pseudo_mixup_plus(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                Rng& rng);
template <typename T>
MixedBatch<T> prob_pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                Rng& rng);
// Same with an explicit pairing: sample i mixes with partner[i]. `rng` is only
// drawn from in cut mode.
template <typename T>
MixedBatch<T> prob_pseudo_mixup(const PseudoBatch<T>& batch, const MixConfig& cfg, double tau,
                                std::span<const std::size_t> partner, MixMode mode, Rng& rng);

// Variant selected by enum; the entry point used by the training step.
template <typename T>
MixedBatch<T> mix_unlabeled(UnlabeledMixup variant, const PseudoBatch<T>& batch,
                            const MixConfig& cfg, double tau, Rng& rng);

// Labeled-data policy: per batch choose cutmix (prob switch_prob) or mixup, one
// lambda for the batch unless cfg.elementwise. Labels are smoothed one-hot.
template <typename T>
MixedBatch<T> mix_labeled(const LabeledBatch<T>& batch, const MixConfig& cfg, Rng& rng);

}  // namespace semivit
