// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace synweather {

// C[m,n] += alpha * op(A) * op(B), row-major, beta pre-applied to C.
// op(A) is A[m,k] (trans_a=false) or A[k,m]^T (trans_a=true); same for B.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
          float beta, float* c, std::int64_t ldc);
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc);

}  // namespace synweather
