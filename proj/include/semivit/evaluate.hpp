#pragma once

#include <cstddef>
#include <span>

#include "semivit/core_types.hpp"
#include "semivit/vit.hpp"

namespace semivit {

struct Accuracy {
  double top1 = 0;  // percent
  double top5 = 0;
  std::size_t count = 0;
};

// Rank of the true class: the number of classes scoring strictly higher plus
// equal-scoring classes with a lower index. Correct at k iff rank < k; k is
// capped at the class count.
struct TopKCounts {
  std::size_t top1 = 0;
  std::size_t top5 = 0;
  std::size_t count = 0;
};

template <typename T>
TopKCounts topk_counts(const Tensor<T>& logits, std::span<const int> labels);

Accuracy to_accuracy(const TopKCounts& c);

// Inference over the whole set in chunks of `batch`; images are center-cropped
// to the model's input size. Throws std::invalid_argument on an empty set.
Accuracy evaluate(const VisionTransformer<float>& model, const ParamSet<float>& params,
                  const Dataset& data, std::size_t batch = 250);

}  // namespace semivit
