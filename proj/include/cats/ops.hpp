#pragma once

#include <cstddef>
#include <vector>

#include "cats/common.hpp"
#include "cats/tensor.hpp"

namespace cats::ops {

// All binary ops require exact shape agreement unless documented otherwise;
// violations throw std::invalid_argument naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real c);

// x [r x c] plus a length-c bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Row i of x scaled by s[i]; s is 1-d of length rows(x).
Tensor scale_rows(const Tensor& x, const Tensor& s);
// out[i,:] = x[i,:] + t[i mod t.rows(), :]; adds a block-tiled table.
Tensor add_block_tiled(const Tensor& x, const Tensor& t);
// out[i,:] = src[idx[i],:]; backward scatter-adds into src rows.
Tensor gather_rows(const Tensor& src, std::vector<std::size_t> idx);

Tensor reshape(const Tensor& x, Shape shape);
// Columns [c0, c1) of a 2-d tensor.
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// M4-convention symmetric MAPE in [0,200]; zero-denominator terms contribute 0.
Tensor smape_loss(const Tensor& pred, const Tensor& target);

Tensor softmax(const Tensor& x);  // over the last dim of a 2-d tensor
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));
Tensor gelu(const Tensor& x);  // tanh approximation
// Inverted dropout; identity when !train or p == 0.
Tensor dropout(const Tensor& x, Real p, Rng& rng, bool train);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// GELU(x w_gate + b_gate) * (x w_val + b_val)
Tensor geglu(const Tensor& x, const Tensor& w_gate, const Tensor& b_gate, const Tensor& w_val,
             const Tensor& b_val);

// Fused multi-head scaled-dot-product attention over packed 2-d inputs:
// q [batch*n_q x d], k/v [batch*n_kv x d], d divisible by heads. Heads are
// contiguous column slices. Per (sample, head): softmax(Q K^T / sqrt(d/heads)) V.
struct SdpaSpec {
    std::size_t batch = 1;
    std::size_t heads = 1;
    std::size_t n_q = 0;
    std::size_t n_kv = 0;
    Real dropout_p = 0;  // on attention probabilities
    bool train = false;
    Rng* rng = nullptr;  // required when train && dropout_p > 0
};

// probs_out, when non-null, receives the post-softmax probabilities
// (pre-dropout), layout [batch][head][n_q][n_kv]. Capture never changes the output.
Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const SdpaSpec& spec,
            std::vector<Real>* probs_out = nullptr);

}  // namespace cats::ops
