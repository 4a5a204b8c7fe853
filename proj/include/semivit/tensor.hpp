#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semivit {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array with an owned buffer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Elements per index along axis 0.
  std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  std::span<T> row(std::size_t i) { return {data_.data() + i * row_size(), row_size()}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * row_size(), row_size()}; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Rows `indices` of `src` along axis 0, in order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const std::size_t> indices) {
  Shape shape = src.shape();
  shape.at(0) = indices.size();
  Tensor<T> out(shape);
  const std::size_t row = src.row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto from = src.row(indices[i]);
    std::copy(from.begin(), from.end(), out.data() + i * row);
  }
  return out;
}

// Concatenation along axis 0; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (Shape(a.shape().begin() + 1, a.shape().end()) != Shape(b.shape().begin() + 1, b.shape().end())) {
    throw std::invalid_argument("concat_rows: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.shape()[0];
  std::vector<T> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(shape, std::move(data));
}

}  // namespace semivit
