#include "flowcast/blas.hpp"

#include <cblas.h>

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

extern "C" char* openblas_get_corename(void);
extern "C" int openblas_get_num_threads(void);
extern "C" void openblas_set_num_threads(int);

namespace flowcast {

// OpenBLAS picks its kernels from CPUID at library-init time. Virtualized
// hosts often mask the CPU model, which drops the selection to a generic
// SSE kernel even when AVX-512 is available. The constructor runs before
// the (statically linked) OpenBLAS initializer, so a hint set here is
// honored. An OPENBLAS_CORETYPE already present in the environment wins.
__attribute__((constructor(101))) static void tune_runtime() {
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx512f")) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
  } else if (__builtin_cpu_supports("avx2")) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", /*overwrite=*/0);
  }
#endif
#if defined(__GLIBC__)
  // Training allocates tens of MB of scratch per batch; keeping those blocks
  // on the heap instead of mmap/munmap cycles removes a page-fault storm.
  // glibc rejects thresholds above HEAP_MAX_SIZE (64 MiB), so stay just under.
  setenv("MALLOC_MMAP_THRESHOLD_", "267386880", /*overwrite=*/0);
  setenv("MALLOC_TRIM_THRESHOLD_", "267386880", /*overwrite=*/0);
  mallopt(M_MMAP_THRESHOLD, (64 << 20) - 4096);
  mallopt(M_TRIM_THRESHOLD, (64 << 20) - 4096);
#endif
}

void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
           double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
           double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

void matmul_rowmajor(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  dgemm(false, false, m, n, k, 1.0, a, k, b, n, 0.0, c, n);
}

const char* blas_core_name() { return openblas_get_corename(); }

int blas_threads() { return openblas_get_num_threads(); }

void set_blas_threads(int n) { openblas_set_num_threads(n); }

}  // namespace flowcast
