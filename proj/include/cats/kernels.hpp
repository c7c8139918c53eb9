#pragma once

#include <cstddef>

#include "cats/common.hpp"

// Dense numeric kernels. Every kernel comes in two flavours: a plain serial
// reference (kernels::serial) and an OpenMP driver (kernels::parallel) that
// splits the independent outer dimension across threads while running the
// exact same per-row/per-element inner loop. Outputs are therefore
// bit-identical between the two, independent of thread count; tests assert
// this and kernel_bench compares their throughput.
//
// The unqualified entry points dispatch on use_parallel(), which defaults to
// true (a one-thread OpenMP loop costs nothing).

namespace cats::kernels {

void set_parallel(bool enabled);
bool use_parallel();

// Dot product with a fixed 8-lane accumulation pattern. Lane assignment is
// by element index, never by pointer alignment, so the rounding sequence is
// identical for any buffer address; plain vectorized reductions are not
// (alignment peeling reorders the partial sums between runs).
inline Real dot(const Real* a, const Real* b, std::size_t n) {
    Real lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    for (; i < n; ++i) lane[i % 8] += a[i] * b[i];
    const Real s0 = lane[0] + lane[1];
    const Real s1 = lane[2] + lane[3];
    const Real s2 = lane[4] + lane[5];
    const Real s3 = lane[6] + lane[7];
    return (s0 + s1) + (s2 + s3);
}

namespace serial {

// C[m x n] = A[m x k] * B[k x n]; accumulates into C when acc is set.
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);

// Row-wise stabilized softmax over the last dimension.
void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols);

// Row-wise layer norm: per-row mean/variance (population), then gamma/beta.
void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps);

// y = gelu(x), tanh approximation.
void gelu(const Real* x, Real* y, std::size_t n);

}  // namespace serial

namespace parallel {

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps);
void gelu(const Real* x, Real* y, std::size_t n);

}  // namespace parallel

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false);
void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps);
void gelu(const Real* x, Real* y, std::size_t n);

}  // namespace cats::kernels
