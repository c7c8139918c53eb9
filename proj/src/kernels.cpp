#include "cats/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

namespace cats::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Shared inner loops. Each function computes one output row so that serial
// and parallel drivers produce bit-identical results.

inline void gemm_nn_row(const Real* a, const Real* b, Real* c, std::size_t k, std::size_t n,
                        bool acc) {
    if (!acc) std::memset(c, 0, n * sizeof(Real));
    for (std::size_t p = 0; p < k; ++p) {
        const Real av = a[p];
        const Real* brow = b + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void gemm_nt_row(const Real* a, const Real* b, Real* c, std::size_t k, std::size_t n,
                        bool acc) {
    for (std::size_t j = 0; j < n; ++j) {
        const Real sum = dot(a, b + j * k, k);
        c[j] = acc ? c[j] + sum : sum;
    }
}

// Row i of C = A^T * B, i.e. C[i,:] = sum_p A[p,i] * B[p,:].
inline void gemm_tn_row(const Real* a, const Real* b, Real* c, std::size_t i, std::size_t k,
                        std::size_t m, std::size_t n, bool acc) {
    if (!acc) std::memset(c, 0, n * sizeof(Real));
    for (std::size_t p = 0; p < k; ++p) {
        const Real av = a[p * m + i];
        const Real* brow = b + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void softmax_row(const Real* x, Real* y, std::size_t cols) {
    Real mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const Real inv = Real(1) / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                           Real* rstd_out, std::size_t cols, Real eps) {
    Real mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= Real(cols);
    Real var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
        const Real d = x[j] - mean;
        var += d * d;
    }
    var /= Real(cols);
    const Real rstd = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * rstd * gamma[j] + beta[j];
    *mean_out = mean;
    *rstd_out = rstd;
}

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
constexpr Real kGeluA = Real(0.044715);

inline Real gelu_one(Real v) {
    return Real(0.5) * v * (Real(1) + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
}

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool use_parallel() { return g_parallel.load(); }

namespace serial {

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a + i * k, b, c + i * n, k, n, acc);
}

void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a + i * k, b, c + i * n, k, n, acc);
}

void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    for (std::size_t i = 0; i < m; ++i) gemm_tn_row(a, b, c + i * n, i, k, m, n, acc);
}

void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps) {
    for (std::size_t i = 0; i < rows; ++i)
        layer_norm_row(x + i * cols, gamma, beta, y + i * cols, mean_out + i, rstd_out + i, cols, eps);
}

void gelu(const Real* x, Real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

}  // namespace serial

namespace parallel {

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a + i * k, b, c + i * n, k, n, acc);
}

void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a + i * k, b, c + i * n, k, n, acc);
}

void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) gemm_tn_row(a, b, c + i * n, i, k, m, n, acc);
}

void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < rows; ++i)
        layer_norm_row(x + i * cols, gamma, beta, y + i * cols, mean_out + i, rstd_out + i, cols, eps);
}

void gelu(const Real* x, Real* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

}  // namespace parallel

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    use_parallel() ? parallel::gemm_nn(a, b, c, m, k, n, acc) : serial::gemm_nn(a, b, c, m, k, n, acc);
}

void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    use_parallel() ? parallel::gemm_nt(a, b, c, m, k, n, acc) : serial::gemm_nt(a, b, c, m, k, n, acc);
}

void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    use_parallel() ? parallel::gemm_tn(a, b, c, m, k, n, acc) : serial::gemm_tn(a, b, c, m, k, n, acc);
}

void softmax_rows(const Real* x, Real* y, std::size_t rows, std::size_t cols) {
    use_parallel() ? parallel::softmax_rows(x, y, rows, cols) : serial::softmax_rows(x, y, rows, cols);
}

void layer_norm_rows(const Real* x, const Real* gamma, const Real* beta, Real* y, Real* mean_out,
                     Real* rstd_out, std::size_t rows, std::size_t cols, Real eps) {
    use_parallel() ? parallel::layer_norm_rows(x, gamma, beta, y, mean_out, rstd_out, rows, cols, eps)
                   : serial::layer_norm_rows(x, gamma, beta, y, mean_out, rstd_out, rows, cols, eps);
}

void gelu(const Real* x, Real* y, std::size_t n) {
    use_parallel() ? parallel::gelu(x, y, n) : serial::gelu(x, y, n);
}

}  // namespace cats::kernels
