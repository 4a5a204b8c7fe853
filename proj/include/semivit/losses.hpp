#pragma once
// Cross-entropy losses, the learning-rate schedule, layer-wise decay and AdamW.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "semivit/params.hpp"
#include "semivit/tensor.hpp"

namespace semivit {

struct LossReport {
  double labeled = 0;    // L_l
  double unlabeled = 0;  // L_u
  double total = 0;      // L = L_l + mu * L_u
  double clean_fraction = 0;        // pre-mix fraction with o >= tau
  double clean_fraction_after = 0;  // fraction of the unlabeled batch included in L_u
  double mean_confidence = 0;
  double mean_lambda = 1;
};

// Cross-entropy of one row of logits against a target distribution. When `grad`
// is non-null it receives softmax(logits) - target (the gradient for a target
// summing to one).
template <typename T>
double soft_cross_entropy(std::span<const T> logits, std::span<const T> target, T* grad = nullptr);

// Mean over rows of CE against (1 - eps) * onehot + eps / C.
template <typename T>
double supervised_loss(const Tensor<T>& logits, std::span<const int> labels, double eps);

// (1 / denom) * sum_i weight_i * CE(logits_i, targets_i). The denominator is the
// full batch size, not the number of rows with non-zero weight. If `grad` is
// given it is overwritten with scale * dLoss/dlogits.
template <typename T>
double soft_target_loss(const Tensor<T>& logits, const Tensor<T>& targets,
                        std::span<const T> weights, std::size_t denom, Tensor<T>* grad = nullptr,
                        double scale = 1.0);

struct ScheduleState {
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double min_lr = 0;
};

// Linear warmup from 0, then half-cosine to min_lr. Steps beyond total clamp.
double lr_at(const ScheduleState& s, std::int64_t step);

// decay^(num_layers - layer_index); the head (index num_layers) gets 1.
double layer_multiplier(int layer_index, int num_layers, double decay);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamSet<T>& like, AdamWConfig cfg)
      : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  // One update with lr = base_lr * group multiplier; weight decay only on groups that allow it.
  void step(ParamSet<T>& params, const ParamSet<T>& grads, std::span<const ParamGroup> groups,
            double base_lr);

  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  ParamSet<T>& first_moment() { return m_; }
  ParamSet<T>& second_moment() { return v_; }
  const ParamSet<T>& first_moment() const { return m_; }
  const ParamSet<T>& second_moment() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  ParamSet<T> m_;
  ParamSet<T> v_;
  std::int64_t t_ = 0;
};

}  // namespace semivit
