#include "cupid/gemm.hpp"

#include <algorithm>
#include <cstring>

namespace cupid {

namespace {

// Accumulator tile: MR rows of C held in local arrays of NR columns. NR spans
// four cache lines of doubles; MR*NR stays within the vector register file.
constexpr int64_t kMr = 4;
constexpr int64_t kNr = 32;

// One MR x NR tile of C += A * B. The j-loops vectorize; acc stays in registers.
inline void micro_tile(int64_t k, const real* a, int64_t lda, const real* b, int64_t ldb,
                       real* c, int64_t ldc, bool accumulate) {
    real acc[kMr][kNr];
    if (accumulate) {
        for (int64_t i = 0; i < kMr; ++i)
            for (int64_t j = 0; j < kNr; ++j) acc[i][j] = c[i * ldc + j];
    } else {
        for (int64_t i = 0; i < kMr; ++i)
            for (int64_t j = 0; j < kNr; ++j) acc[i][j] = real(0);
    }
    for (int64_t p = 0; p < k; ++p) {
        const real* brow = b + p * ldb;
        const real a0 = a[0 * lda + p];
        const real a1 = a[1 * lda + p];
        const real a2 = a[2 * lda + p];
        const real a3 = a[3 * lda + p];
        for (int64_t j = 0; j < kNr; ++j) {
            const real bj = brow[j];
            acc[0][j] += a0 * bj;
            acc[1][j] += a1 * bj;
            acc[2][j] += a2 * bj;
            acc[3][j] += a3 * bj;
        }
    }
    for (int64_t i = 0; i < kMr; ++i)
        for (int64_t j = 0; j < kNr; ++j) c[i * ldc + j] = acc[i][j];
}

// Fallback for edge tiles (fewer than MR rows or NR columns).
inline void edge_tile(int64_t mr, int64_t nr, int64_t k, const real* a, int64_t lda,
                      const real* b, int64_t ldb, real* c, int64_t ldc, bool accumulate) {
    for (int64_t i = 0; i < mr; ++i) {
        real* crow = c + i * ldc;
        if (!accumulate)
            for (int64_t j = 0; j < nr; ++j) crow[j] = real(0);
        const real* arow = a + i * lda;
        for (int64_t p = 0; p < k; ++p) {
            const real av = arow[p];
            const real* brow = b + p * ldb;
            for (int64_t j = 0; j < nr; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

void gemm_nn(int64_t m, int64_t n, int64_t k,
             const real* a, int64_t lda,
             const real* b, int64_t ldb,
             real* c, int64_t ldc,
             bool accumulate) {
    if (m <= 0 || n <= 0) return;
    if (k <= 0) {
        if (!accumulate)
            for (int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, size_t(n) * sizeof(real));
        return;
    }

    const int64_t m_main = m - m % kMr;
    const int64_t n_main = n - n % kNr;

    for (int64_t i = 0; i < m_main; i += kMr) {
        for (int64_t j = 0; j < n_main; j += kNr)
            micro_tile(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
        if (n_main < n)
            edge_tile(kMr, n - n_main, k, a + i * lda, lda, b + n_main, ldb,
                      c + i * ldc + n_main, ldc, accumulate);
    }
    if (m_main < m) {
        for (int64_t j = 0; j < n_main; j += kNr)
            edge_tile(m - m_main, kNr, k, a + m_main * lda, lda, b + j, ldb,
                      c + m_main * ldc + j, ldc, accumulate);
        if (n_main < n)
            edge_tile(m - m_main, n - n_main, k, a + m_main * lda, lda, b + n_main, ldb,
                      c + m_main * ldc + n_main, ldc, accumulate);
    }
}

void transpose_copy(int64_t m, int64_t n, const real* in, int64_t ld_in,
                    real* out, int64_t ld_out) {
    constexpr int64_t kBlock = 32;
    for (int64_t i0 = 0; i0 < m; i0 += kBlock) {
        const int64_t i1 = std::min(i0 + kBlock, m);
        for (int64_t j0 = 0; j0 < n; j0 += kBlock) {
            const int64_t j1 = std::min(j0 + kBlock, n);
            for (int64_t i = i0; i < i1; ++i)
                for (int64_t j = j0; j < j1; ++j) out[j * ld_out + i] = in[i * ld_in + j];
        }
    }
}

}  // namespace cupid
