#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "semivit/kernels.hpp"

namespace semivit::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(SEMIVIT_BUILD_AVX2) && (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("SEMIVIT_KERNELS"); env && std::string(env) == "scalar") {
    return Backend::kScalar;
  }
  return detected_backend();
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

bool use_avx2() { return current().load(std::memory_order_relaxed) == Backend::kAvx2; }

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "unknown";
}

bool backend_available(Backend b) {
  if (b == Backend::kScalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

Backend detected_backend() {
  return backend_available(Backend::kAvx2) ? Backend::kAvx2 : Backend::kScalar;
}

Backend active_backend() { return current().load(); }

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::invalid_argument("kernel backend not available: " + std::string(backend_name(b)));
  }
  current().store(b);
}

#if defined(SEMIVIT_BUILD_AVX2)
#define SEMIVIT_FLOAT_ROUTE(call) \
  if (use_avx2()) {               \
    avx2::call;                   \
    return;                       \
  }
#else
#define SEMIVIT_FLOAT_ROUTE(call)
#endif

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  SEMIVIT_FLOAT_ROUTE(gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc))
  scalar::gemm<float>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  scalar::gemm<double>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void axpby(std::size_t n, float alpha, const float* x, float beta, float* y) {
  SEMIVIT_FLOAT_ROUTE(axpby(n, alpha, x, beta, y))
  scalar::axpby<float>(n, alpha, x, beta, y);
}

void axpby(std::size_t n, double alpha, const double* x, double beta, double* y) {
  scalar::axpby<double>(n, alpha, x, beta, y);
}

void blend(std::size_t n, float alpha, const float* x, float beta, const float* y,
          float* out) {
  SEMIVIT_FLOAT_ROUTE(blend(n, alpha, x, beta, y, out))
  scalar::blend<float>(n, alpha, x, beta, y, out);
}

void blend(std::size_t n, double alpha, const double* x, double beta, const double* y,
                   double* out) {
  scalar::blend<double>(n, alpha, x, beta, y, out);
}

void softmax_rows(int rows, int cols, float* data, int ld) {
  SEMIVIT_FLOAT_ROUTE(softmax_rows(rows, cols, data, ld))
  scalar::softmax_rows<float>(rows, cols, data, ld);
}

void softmax_rows(int rows, int cols, double* data, int ld) {
  scalar::softmax_rows<double>(rows, cols, data, ld);
}

void adamw_update(std::size_t n, float* param, const float* grad, float* m, float* v,
                         const AdamWCoeffs& c) {
  SEMIVIT_FLOAT_ROUTE(adamw_update(n, param, grad, m, v, c))
  scalar::adamw_update<float>(n, param, grad, m, v, c);
}

void adamw_update(std::size_t n, double* param, const double* grad, double* m,
                          double* v, const AdamWCoeffs& c) {
  scalar::adamw_update<double>(n, param, grad, m, v, c);
}

#undef SEMIVIT_FLOAT_ROUTE

}  // namespace semivit::kernels
