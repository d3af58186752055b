#pragma once

#include <cstddef>

namespace flowcast {

// Row-major double GEMM: C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n, C is m x n. Leading dimensions are the
// row strides of the stored (untransposed) matrices.
void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
           double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
           double beta, double* c, std::size_t ldc);

// Convenience: C(m x n) = A(m x k) * B(k x n), all tightly packed row-major.
void matmul_rowmajor(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n);

const char* blas_core_name();

int blas_threads();
void set_blas_threads(int n);

/// Scoped thread-count override. The sequential LSTM recurrence issues
/// thousands of sub-millisecond GEMMs where OpenBLAS thread handoff costs
/// more than the math; those regions run single-threaded.
class BlasThreadGuard {
 public:
  explicit BlasThreadGuard(int n) : saved_(blas_threads()) { set_blas_threads(n); }
  ~BlasThreadGuard() { set_blas_threads(saved_); }
  BlasThreadGuard(const BlasThreadGuard&) = delete;
  BlasThreadGuard& operator=(const BlasThreadGuard&) = delete;

 private:
  int saved_;
};

}  // namespace flowcast
