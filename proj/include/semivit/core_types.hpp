#pragma once
// Batch containers, run configuration, dataset splitting and batch streams.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semivit/tensor.hpp"

namespace semivit {

enum class Stage { kSupervisedFt, kSemiFt };
enum class Framework { kEmaTeacher, kFixMatch };
enum class UnlabeledMixup { kNone, kPseudo, kPseudoPlus, kProbPseudo };

std::string_view to_string(Stage s);
std::string_view to_string(Framework f);
std::string_view to_string(UnlabeledMixup m);
Stage parse_stage(std::string_view s);
Framework parse_framework(std::string_view s);
UnlabeledMixup parse_unlabeled_mixup(std::string_view s);

// Images [N, C, H, W] in [0,1] with class labels.
template <typename T>
struct LabeledBatch {
  Tensor<T> images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  // Throws std::invalid_argument on an empty batch, bad label or non-finite pixel.
  void validate() const;
};

template <typename T>
struct UnlabeledBatch {
  Tensor<T> images;
  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
};

// Weak and strong views, index-aligned with the source batch.
template <typename T>
struct ViewPair {
  Tensor<T> weak;
  Tensor<T> strong;
};

// Hyperparameters of one fine-tuning stage.
struct StageConfig {
  Stage stage = Stage::kSemiFt;
  int epochs = 100;
  int warmup_epochs = 5;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  double weight_decay = 0.05;
  double layer_decay = 0.75;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double mu = 5.0;
  double tau = 0.5;
  double ema_momentum = 0.9999;
  double label_smoothing = 0.1;
  double mixup_alpha = 0.8;
  double cutmix_alpha = 1.0;
  double switch_prob = 0.5;
  double drop_path = 0.1;
  int unlabeled_ratio = 5;
  // Labeled samples per step (N_l).
  int batch_size = 128;
  std::uint64_t seed = 0;
  Framework framework = Framework::kEmaTeacher;
  UnlabeledMixup unlabeled_mixup = UnlabeledMixup::kProbPseudo;
  // Apply label_smoothing to hard pseudo labels before mixing.
  bool smooth_pseudo_labels = true;
  // Let unlabeled mixing use cutmix geometry when the per-batch switch picks it.
  bool unlabeled_cutmix = false;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// In-memory image classification dataset with stable ordering.
struct Dataset {
  Tensor<float> images;  // [N, C, H, W]
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> paths;  // empty for generated data

  std::size_t size() const { return labels.size(); }
};

struct Split {
  std::vector<std::size_t> labeled;    // ascending
  std::vector<std::size_t> unlabeled;  // every training index, labels hidden
};

// round-half-up(fraction * count), at least 1.
std::size_t per_class_quota(std::size_t count, double fraction);

// Per-class sampling without replacement; deterministic under `seed`.
Split split_dataset(std::span<const int> labels, int num_classes, double fraction,
                    std::uint64_t seed);

// Index batches for one stage.
//
// The unlabeled set is reshuffled every epoch; one epoch is one pass over it in
// steps of ratio * N_l (a trailing partial batch is dropped). The labeled set is
// consumed as an endless stream of per-pass shuffles: step s of the stage takes
// stream positions [s * N_l, (s + 1) * N_l), wrapping into the next pass as
// needed. With no unlabeled indices an epoch is one pass over the labeled set.
// Every batch is a pure function of (seed, epoch, step).
class BatchStream {
 public:
  struct Batch {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
  };

  BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled,
              std::size_t labeled_batch, int ratio, std::uint64_t seed);

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t labeled_batch() const { return labeled_batch_; }
  std::size_t unlabeled_batch() const { return labeled_batch_ * static_cast<std::size_t>(ratio_); }

  Batch batch(std::size_t epoch, std::size_t step) const;
  std::vector<std::size_t> labeled_pass_order(std::size_t pass) const;
  std::vector<std::size_t> unlabeled_epoch_order(std::size_t epoch) const;

 private:
  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> unlabeled_;
  std::size_t labeled_batch_;
  int ratio_;
  std::uint64_t seed_;
  std::size_t steps_per_epoch_;
};

BatchStream make_batches(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled,
                         std::size_t labeled_batch, int ratio, std::uint64_t seed);

template <typename T>
LabeledBatch<T> gather_labeled(const Dataset& data, std::span<const std::size_t> indices);
template <typename T>
UnlabeledBatch<T> gather_unlabeled(const Dataset& data, std::span<const std::size_t> indices);

// Manifest: one "<path> <label>" per line (UTF-8, LF). Unlabeled manifests write -1.
struct ManifestEntry {
  std::string path;
  int label = -1;
};
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, std::span<const ManifestEntry> entries);

// Loads every image of a manifest (binary PPM/PGM, 8-bit). Relative paths resolve
// against the manifest's directory. All images must share one size.
Dataset load_manifest_dataset(const std::string& manifest_path, int num_classes);

// Writes an [C,H,W] float image in [0,1] as binary PPM (C = 3) or PGM (C = 1).
void write_pnm(const std::string& path, std::span<const float> chw, std::size_t c, std::size_t h,
               std::size_t w);

}  // namespace semivit
