#include "uvdiff/ops.hpp"

#include <cblas.h>

// OpenBLAS exposes this; declare it weak so linking against a plain CBLAS
// still works and the call degrades to a no-op.
extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace uvdiff::detail {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const float* a, int lda, const float* b, int ldb, double beta,
          float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                static_cast<float>(alpha), a, lda, b, ldb,
                static_cast<float>(beta), c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
                b, ldb, beta, c, ldc);
}

void set_blas_threads(int n) {
    if (openblas_set_num_threads) openblas_set_num_threads(n);
}

} // namespace uvdiff::detail
