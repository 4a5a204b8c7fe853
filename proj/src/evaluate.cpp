#include "semivit/evaluate.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "semivit/augment.hpp"

namespace semivit {

template <typename T>
TopKCounts topk_counts(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("topk: logits " + shape_string(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = logits.dim(1);
  TopKCounts out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::invalid_argument("topk: label " + std::to_string(y) + " out of range");
    }
    auto row = logits.row(i);
    std::size_t rank = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if (row[k] > row[y] || (row[k] == row[y] && k < static_cast<std::size_t>(y))) ++rank;
    }
    out.top1 += rank < 1 ? 1 : 0;
    out.top5 += rank < std::min<std::size_t>(5, c) ? 1 : 0;
    ++out.count;
  }
  return out;
}

Accuracy to_accuracy(const TopKCounts& c) {
  if (c.count == 0) throw std::invalid_argument("accuracy of an empty set");
  const double n = static_cast<double>(c.count);
  return {100.0 * static_cast<double>(c.top1) / n, 100.0 * static_cast<double>(c.top5) / n, c.count};
}

Accuracy evaluate(const VisionTransformer<float>& model, const ParamSet<float>& params,
                  const Dataset& data, std::size_t batch) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty evaluation set");
  if (batch == 0) batch = 1;
  const std::size_t size = static_cast<std::size_t>(model.config().image_size);
  TopKCounts total;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> images = gather_rows(data.images, idx);
    if (images.dim(2) != size || images.dim(3) != size) images = center_crop(images, size);
    Tensor<float> logits = model.forward(params, images, false);
    const TopKCounts c = topk_counts(logits, std::span<const int>(data.labels).subspan(start, end - start));
    total.top1 += c.top1;
    total.top5 += c.top5;
    total.count += c.count;
  }
  return to_accuracy(total);
}

template TopKCounts topk_counts<float>(const Tensor<float>&, std::span<const int>);
template TopKCounts topk_counts<double>(const Tensor<double>&, std::span<const int>);

}  // namespace semivit
