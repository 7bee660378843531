#pragma once

#include <cstdint>

#include "cupid/common.hpp"

namespace cupid {

// C (m x n) = A (m x k) * B (k x n), row-major, optional accumulate into C.
// Register-blocked; the inner loops are written so the compiler can keep the
// accumulator tile in vector registers.
void gemm_nn(int64_t m, int64_t n, int64_t k,
             const real* a, int64_t lda,
             const real* b, int64_t ldb,
             real* c, int64_t ldc,
             bool accumulate);

// out (n x m) = transpose of in (m x n), row-major. Blocked copy.
void transpose_copy(int64_t m, int64_t n, const real* in, int64_t ld_in,
                    real* out, int64_t ld_out);

}  // namespace cupid
