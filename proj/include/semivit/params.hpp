#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "semivit/tensor.hpp"

namespace semivit {

// One named trainable tensor.
template <typename T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
  int layer_id = 0;          // 0 = embedding, 1..depth = blocks, depth + 1 = head
  bool weight_decay = true;  // false for biases, norm affine, positional/class tokens
};

// Ordered, name-addressable collection of parameters (model weights, gradients,
// optimizer moments all share one layout).
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape, int layer_id, bool weight_decay) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Param<T> p{name, shape, std::vector<T>(shape_numel(shape), T(0)), layer_id, weight_decay};
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t count() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  Param<T>& at(const std::string& name) { return params_[index_of(name)]; }
  const Param<T>& at(const std::string& name) const { return params_[index_of(name)]; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Same names/shapes, zero values.
  ParamSet zeros_like() const {
    ParamSet out = *this;
    out.fill(T(0));
    return out;
  }

  void fill(T v) {
    for (auto& p : params_) std::fill(p.value.begin(), p.value.end(), v);
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.value)
        if (!std::isfinite(v)) return false;
    return true;
  }

  // First non-finite tensor name, or empty.
  std::string first_non_finite() const {
    for (const auto& p : params_)
      for (T v : p.value)
        if (!std::isfinite(v)) return p.name;
    return {};
  }

  // Throws std::invalid_argument naming the first tensor whose name or shape differs.
  void check_same_layout(const ParamSet& other) const {
    if (other.count() != count()) {
      throw std::invalid_argument("parameter count mismatch: " + std::to_string(count()) + " vs " +
                                  std::to_string(other.count()));
    }
    for (std::size_t i = 0; i < count(); ++i) {
      if (params_[i].name != other.params_[i].name || params_[i].shape != other.params_[i].shape) {
        throw std::invalid_argument("parameter layout mismatch at '" + params_[i].name + "' " +
                                    shape_string(params_[i].shape) + " vs '" +
                                    other.params_[i].name + "' " +
                                    shape_string(other.params_[i].shape));
      }
    }
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      const std::size_t i = out.add(p.name, p.shape, p.layer_id, p.weight_decay);
      out[i].value.assign(p.value.begin(), p.value.end());
    }
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.count() != b.count()) return false;
    for (std::size_t i = 0; i < a.count(); ++i) {
      if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].value != b[i].value) return false;
    }
    return true;
  }

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

// Parameters sharing a learning-rate multiplier and weight-decay flag.
struct ParamGroup {
  std::vector<std::size_t> indices;
  int layer_id = 0;
  double lr_multiplier = 1.0;
  bool weight_decay = true;
};

}  // namespace semivit
