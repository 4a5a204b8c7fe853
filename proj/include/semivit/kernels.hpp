#pragma once
// Dense arithmetic kernels used by the model, the optimizer, EMA and mixup.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2+FMA variant of the float kernels is compiled in a separate translation
// unit and selected at runtime when the CPU supports it. Double-precision calls
// always take the scalar path (double is only used for gradient checking).
//
// The SIMD variants reorder floating-point sums, so they agree with the scalar
// reference to rounding tolerance rather than bitwise. Within one backend every
// kernel is deterministic.

#include <cstddef>
#include <string_view>

namespace semivit::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);
bool backend_available(Backend b);

// Best backend for this CPU, unless overridden with SEMIVIT_KERNELS=scalar.
Backend detected_backend();
Backend active_backend();
// Throws std::invalid_argument when the backend is not available.
void set_backend(Backend b);

enum class Trans { kNo, kYes };

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n. With beta == 0, C is overwritten and never read.
void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// y = alpha * x + beta * y
void axpby(std::size_t n, float alpha, const float* x, float beta, float* y);
void axpby(std::size_t n, double alpha, const double* x, double beta, double* y);

// out = alpha * x + beta * y
void blend(std::size_t n, float alpha, const float* x, float beta, const float* y, float* out);
void blend(std::size_t n, double alpha, const double* x, double beta, const double* y,
           double* out);

// Numerically stable in-place softmax over each of `rows` rows of length `cols`.
void softmax_rows(int rows, int cols, float* data, int ld);
void softmax_rows(int rows, int cols, double* data, int ld);

struct AdamWCoeffs {
  double lr = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
  // 1 - beta^t for the current step t.
  double bias_correction1 = 1;
  double bias_correction2 = 1;
};

// Decoupled weight decay Adam update of one contiguous parameter tensor.
void adamw_update(std::size_t n, float* param, const float* grad, float* m, float* v,
                  const AdamWCoeffs& c);
void adamw_update(std::size_t n, double* param, const double* grad, double* m, double* v,
                  const AdamWCoeffs& c);

// Backend-specific entry points; the dispatching functions above route here.
namespace scalar {
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);
template <typename T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y);
template <typename T>
void blend(std::size_t n, T alpha, const T* x, T beta, const T* y, T* out);
template <typename T>
void softmax_rows(int rows, int cols, T* data, int ld);
template <typename T>
void adamw_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamWCoeffs& c);
}  // namespace scalar

namespace avx2 {
void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void axpby(std::size_t n, float alpha, const float* x, float beta, float* y);
void blend(std::size_t n, float alpha, const float* x, float beta, const float* y, float* out);
void softmax_rows(int rows, int cols, float* data, int ld);
void adamw_update(std::size_t n, float* param, const float* grad, float* m, float* v,
                  const AdamWCoeffs& c);
}  // namespace avx2

}  // namespace semivit::kernels
