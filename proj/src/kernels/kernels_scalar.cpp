#include <algorithm>
#include <cmath>
#include <vector>

#include "semivit/kernels.hpp"

namespace semivit::kernels::scalar {

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  auto at = [&](int i, int p) { return ta == Trans::kNo ? a[i * lda + p] : a[p * lda + i]; };
  auto bt = [&](int p, int j) { return tb == Trans::kNo ? b[p * ldb + j] : b[j * ldb + p]; };
  std::vector<T> row(static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), T(0));
    for (int p = 0; p < k; ++p) {
      const T av = at(i, p);
      for (int j = 0; j < n; ++j) row[j] += av * bt(p, j);
    }
    T* ci = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      ci[j] = beta == T(0) ? alpha * row[j] : alpha * row[j] + beta * ci[j];
    }
  }
}

template <typename T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

template <typename T>
void blend(std::size_t n, T alpha, const T* x, T beta, const T* y, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i] + beta * y[i];
}

template <typename T>
void softmax_rows(int rows, int cols, T* data, int ld) {
  for (int r = 0; r < rows; ++r) {
    T* x = data + static_cast<std::size_t>(r) * ld;
    const T mx = *std::max_element(x, x + cols);
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      x[j] = std::exp(x[j] - mx);
      sum += x[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) x[j] *= inv;
  }
}

template <typename T>
void adamw_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamWCoeffs& c) {
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step = static_cast<T>(c.lr / c.bias_correction1);
  const T inv_bc2_sqrt = static_cast<T>(1.0 / std::sqrt(c.bias_correction2));
  const T eps = static_cast<T>(c.eps);
  const T decay = static_cast<T>(1.0 - c.lr * c.weight_decay);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
    const T denom = std::sqrt(v[i]) * inv_bc2_sqrt + eps;
    param[i] = param[i] * decay - step * m[i] / denom;
  }
}

#define SEMIVIT_INSTANTIATE(T)                                                          \
  template void gemm<T>(Trans, Trans, int, int, int, T, const T*, int, const T*, int, T, \
                        T*, int);                                                       \
  template void axpby<T>(std::size_t, T, const T*, T, T*);                              \
  template void blend<T>(std::size_t, T, const T*, T, const T*, T*);                    \
  template void softmax_rows<T>(int, int, T*, int);                                     \
  template void adamw_update<T>(std::size_t, T*, const T*, T*, T*, const AdamWCoeffs&);

SEMIVIT_INSTANTIATE(float)
SEMIVIT_INSTANTIATE(double)
#undef SEMIVIT_INSTANTIATE

}  // namespace semivit::kernels::scalar
