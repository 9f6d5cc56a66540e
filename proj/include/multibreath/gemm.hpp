#pragma once

#include <cblas.h>

namespace mb {

// Row-major C = alpha * op(A) * op(B) + beta * C via OpenBLAS.
inline void gemm(bool trans_a, bool trans_b, long m, long n, long k,
                 float alpha, const float* a, long lda, const float* b,
                 long ldb, float beta, float* c, long ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, long m, long n, long k,
                 double alpha, const double* a, long lda, const double* b,
                 long ldb, double beta, double* c, long ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

}  // namespace mb
