#include "semivit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "semivit/kernels.hpp"

namespace semivit {

template <typename T>
double soft_cross_entropy(std::span<const T> logits, std::span<const T> target, T* grad) {
  const std::size_t c = logits.size();
  double mx = logits[0];
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  double loss = 0;
  for (std::size_t k = 0; k < c; ++k) {
    loss -= static_cast<double>(target[k]) * (static_cast<double>(logits[k]) - lse);
  }
  if (grad) {
    for (std::size_t k = 0; k < c; ++k) {
      grad[k] = static_cast<T>(std::exp(static_cast<double>(logits[k]) - lse) -
                               static_cast<double>(target[k]));
    }
  }
  return loss;
}

template <typename T>
double supervised_loss(const Tensor<T>& logits, std::span<const int> labels, double eps) {
  if (!(eps >= 0 && eps < 1)) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw std::invalid_argument("supervised_loss: label count mismatch");
  std::vector<T> target(c);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::invalid_argument("supervised_loss: label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(c) + ")");
    }
    std::fill(target.begin(), target.end(), static_cast<T>(eps / static_cast<double>(c)));
    target[static_cast<std::size_t>(labels[i])] += static_cast<T>(1.0 - eps);
    total += soft_cross_entropy<T>(logits.row(i), target);
  }
  return total / static_cast<double>(n);
}

template <typename T>
double soft_target_loss(const Tensor<T>& logits, const Tensor<T>& targets,
                        std::span<const T> weights, std::size_t denom, Tensor<T>* grad,
                        double scale) {
  const std::size_t n = logits.empty() ? 0 : logits.dim(0);
  if (targets.size() != logits.size() || weights.size() != n) {
    throw std::invalid_argument("soft_target_loss: shape mismatch");
  }
  if (denom == 0) throw std::invalid_argument("soft_target_loss: denominator must be positive");
  if (grad) *grad = Tensor<T>(logits.shape());
  double total = 0;
  const double inv = 1.0 / static_cast<double>(denom);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = static_cast<double>(weights[i]);
    if (w == 0) continue;
    T* g = grad ? grad->row(i).data() : nullptr;
    total += w * soft_cross_entropy<T>(logits.row(i), targets.row(i), g);
    if (g) {
      const T f = static_cast<T>(scale * w * inv);
      for (std::size_t k = 0; k < logits.row_size(); ++k) g[k] *= f;
    }
  }
  return total * inv;
}

double lr_at(const ScheduleState& s, std::int64_t step) {
  step = std::clamp<std::int64_t>(step, 0, s.total_steps);
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const std::int64_t span = s.total_steps - s.warmup_steps;
  if (span <= 0) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double layer_multiplier(int layer_index, int num_layers, double decay) {
  if (layer_index < 0 || layer_index > num_layers) {
    throw std::invalid_argument("layer index " + std::to_string(layer_index) + " outside [0, " +
                                std::to_string(num_layers) + "]");
  }
  return std::pow(decay, num_layers - layer_index);
}

template <typename T>
void AdamW<T>::step(ParamSet<T>& params, const ParamSet<T>& grads,
                    std::span<const ParamGroup> groups, double base_lr) {
  ++t_;
  kernels::AdamWCoeffs c;
  c.beta1 = cfg_.beta1;
  c.beta2 = cfg_.beta2;
  c.eps = cfg_.eps;
  c.bias_correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  c.bias_correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& g : groups) {
    c.lr = base_lr * g.lr_multiplier;
    c.weight_decay = g.weight_decay ? cfg_.weight_decay : 0.0;
    for (std::size_t idx : g.indices) {
      auto& p = params[idx].value;
      kernels::adamw_update(p.size(), p.data(), grads[idx].value.data(), m_[idx].value.data(),
                            v_[idx].value.data(), c);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

#define SEMIVIT_INSTANTIATE(T)                                                               \
  template double soft_cross_entropy<T>(std::span<const T>, std::span<const T>, T*);        \
  template double supervised_loss<T>(const Tensor<T>&, std::span<const int>, double);       \
  template double soft_target_loss<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, \
                                      std::size_t, Tensor<T>*, double);

SEMIVIT_INSTANTIATE(float)
SEMIVIT_INSTANTIATE(double)
#undef SEMIVIT_INSTANTIATE

}  // namespace semivit
