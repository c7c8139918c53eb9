#include "cats/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "cats/kernels.hpp"

namespace cats::ops {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracked(const Tensor& t) { return t.requires_grad() || t.impl()->backward_fn != nullptr; }

bool wants_grad(const ImplPtr& p) { return p->requires_grad || p->backward_fn != nullptr; }

// Builds the output tensor and, when recording is on and any input is
// tracked, attaches parents and the backward rule.
template <typename Fn>
Tensor make_node(Shape shape, std::vector<Real> data, const std::vector<Tensor>& parents, Fn&& bw) {
    Tensor out = Tensor::from_vector(std::move(shape), std::move(data));
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const Tensor& p : parents) any = any || tracked(p);
        track = any;
    }
    if (track) {
        auto impl = out.impl();
        impl->parents.reserve(parents.size());
        for (const Tensor& p : parents) impl->parents.push_back(p.impl());
        impl->backward_fn = std::forward<Fn>(bw);
        impl->requires_grad = true;
    }
    return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

void axpy(std::span<Real> y, std::span<const Real> x, Real alpha = Real(1)) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

constexpr Real kGeluC = Real(0.7978845608028654);
constexpr Real kGeluA = Real(0.044715);

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<Real> out(m * n);
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_node({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
        const ImplPtr& pa = self.parents[0];
        const ImplPtr& pb = self.parents[1];
        if (wants_grad(pa)) {
            pa->ensure_grad();
            kernels::gemm_nt(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k, true);
        }
        if (wants_grad(pb)) {
            pb->ensure_grad();
            kernels::gemm_tn(pa->data.data(), self.grad.data(), pb->grad.data(), k, m, n, true);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<Real> out(a.size());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        for (int p = 0; p < 2; ++p) {
            const ImplPtr& par = self.parents[p];
            if (wants_grad(par)) {
                par->ensure_grad();
                axpy(par->grad, self.grad);
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<Real> out(a.size());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        const ImplPtr& pa = self.parents[0];
        const ImplPtr& pb = self.parents[1];
        if (wants_grad(pa)) {
            pa->ensure_grad();
            axpy(pa->grad, self.grad);
        }
        if (wants_grad(pb)) {
            pb->ensure_grad();
            axpy(pb->grad, self.grad, Real(-1));
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<Real> out(a.size());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        const ImplPtr& pa = self.parents[0];
        const ImplPtr& pb = self.parents[1];
        if (wants_grad(pa)) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (wants_grad(pb)) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->data[i];
        }
    });
}

Tensor scale(const Tensor& x, Real c) {
    std::vector<Real> out(x.size());
    const auto xs = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * c;
    return make_node(x.shape(), std::move(out), {x}, [c](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        axpy(px->grad, self.grad, c);
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.size() != x.cols())
        throw std::invalid_argument("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(bias.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<Real> out(x.size());
    const auto xs = x.data(), bs = bias.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xs[i * c + j] + bs[j];
    return make_node(x.shape(), std::move(out), {x, bias}, [r, c](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        const ImplPtr& pb = self.parents[1];
        if (wants_grad(px)) {
            px->ensure_grad();
            axpy(px->grad, self.grad);
        }
        if (wants_grad(pb)) {
            pb->ensure_grad();
            for (std::size_t j = 0; j < c; ++j) {
                Real s = 0;
                for (std::size_t i = 0; i < r; ++i) s += self.grad[i * c + j];
                pb->grad[j] += s;
            }
        }
    });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    if (x.ndim() != 2 || s.ndim() != 1 || s.size() != x.rows())
        throw std::invalid_argument("scale_rows: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(s.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<Real> out(x.size());
    const auto xs = x.data(), ss = s.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xs[i * c + j] * ss[i];
    return make_node(x.shape(), std::move(out), {x, s}, [r, c](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        const ImplPtr& ps = self.parents[1];
        if (wants_grad(px)) {
            px->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    px->grad[i * c + j] += self.grad[i * c + j] * ps->data[i];
        }
        if (wants_grad(ps)) {
            ps->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                Real acc = 0;
                for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * px->data[i * c + j];
                ps->grad[i] += acc;
            }
        }
    });
}

Tensor add_block_tiled(const Tensor& x, const Tensor& t) {
    if (x.ndim() != 2 || t.ndim() != 2 || t.cols() != x.cols() || x.rows() % t.rows() != 0)
        throw std::invalid_argument("add_block_tiled: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(t.shape()));
    const std::size_t r = x.rows(), c = x.cols(), tr = t.rows();
    std::vector<Real> out(x.size());
    const auto xs = x.data(), ts = t.data();
    for (std::size_t i = 0; i < r; ++i) {
        const Real* trow = ts.data() + (i % tr) * c;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xs[i * c + j] + trow[j];
    }
    return make_node(x.shape(), std::move(out), {x, t}, [r, c, tr](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        const ImplPtr& pt = self.parents[1];
        if (wants_grad(px)) {
            px->ensure_grad();
            axpy(px->grad, self.grad);
        }
        if (wants_grad(pt)) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                Real* trow = pt->grad.data() + (i % tr) * c;
                for (std::size_t j = 0; j < c; ++j) trow[j] += self.grad[i * c + j];
            }
        }
    });
}

Tensor gather_rows(const Tensor& src, std::vector<std::size_t> idx) {
    if (src.ndim() != 2) throw std::invalid_argument("gather_rows: source must be 2-d");
    const std::size_t c = src.cols();
    for (std::size_t i : idx)
        if (i >= src.rows())
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range for " +
                                        shape_str(src.shape()));
    std::vector<Real> out(idx.size() * c);
    const auto xs = src.data();
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + r * c, xs.data() + idx[r] * c, c * sizeof(Real));
    const std::size_t n = idx.size();
    return make_node({n, c}, std::move(out), {src},
                     [c, idx = std::move(idx)](TensorImpl& self) {
                         const ImplPtr& ps = self.parents[0];
                         if (!wants_grad(ps)) return;
                         ps->ensure_grad();
                         for (std::size_t r = 0; r < idx.size(); ++r) {
                             Real* dst = ps->grad.data() + idx[r] * c;
                             const Real* g = self.grad.data() + r * c;
                             for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                         }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(shape));
    std::vector<Real> out(x.data().begin(), x.data().end());
    return make_node(std::move(shape), std::move(out), {x}, [](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        axpy(px->grad, self.grad);
    });
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.ndim() != 2 || c0 >= c1 || c1 > x.cols())
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + shape_str(x.shape()));
    const std::size_t r = x.rows(), c = x.cols(), w = c1 - c0;
    std::vector<Real> out(r * w);
    const auto xs = x.data();
    for (std::size_t i = 0; i < r; ++i)
        std::memcpy(out.data() + i * w, xs.data() + i * c + c0, w * sizeof(Real));
    return make_node({r, w}, std::move(out), {x}, [r, c, c0, w](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            Real* dst = px->grad.data() + i * c + c0;
            const Real* g = self.grad.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
        }
    });
}

Tensor sum(const Tensor& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    return make_node({1}, {s}, {x}, [](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        const Real g = self.grad[0];
        for (Real& v : px->grad) v += g;
    });
}

Tensor mean(const Tensor& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    const Real inv = Real(1) / Real(x.size());
    return make_node({1}, {s * inv}, {x}, [inv](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        const Real g = self.grad[0] * inv;
        for (Real& v : px->grad) v += g;
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape("mse_loss", pred, target);
    const auto ps = pred.data(), ts = target.data();
    Real s = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Real d = ps[i] - ts[i];
        s += d * d;
    }
    const Real inv = Real(1) / Real(ps.size());
    return make_node({1}, {s * inv}, {pred, target}, [inv](TensorImpl& self) {
        const ImplPtr& pp = self.parents[0];
        const ImplPtr& pt = self.parents[1];
        const Real g2 = Real(2) * self.grad[0] * inv;
        if (wants_grad(pp)) {
            pp->ensure_grad();
            for (std::size_t i = 0; i < pp->data.size(); ++i)
                pp->grad[i] += g2 * (pp->data[i] - pt->data[i]);
        }
        if (wants_grad(pt)) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < pt->data.size(); ++i)
                pt->grad[i] -= g2 * (pp->data[i] - pt->data[i]);
        }
    });
}

Tensor smape_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape("smape_loss", pred, target);
    const auto ps = pred.data(), ts = target.data();
    Real s = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Real denom = std::abs(ts[i]) + std::abs(ps[i]);
        if (denom > Real(0)) s += std::abs(ps[i] - ts[i]) / denom;
    }
    const Real factor = Real(200) / Real(ps.size());
    return make_node({1}, {s * factor}, {pred, target}, [factor](TensorImpl& self) {
        const ImplPtr& pp = self.parents[0];
        if (!wants_grad(pp)) return;
        pp->ensure_grad();
        const ImplPtr& pt = self.parents[1];
        const Real g = self.grad[0] * factor;
        for (std::size_t i = 0; i < pp->data.size(); ++i) {
            const Real p = pp->data[i], t = pt->data[i];
            const Real denom = std::abs(t) + std::abs(p);
            if (denom <= Real(0)) continue;
            const Real u = std::abs(p - t);
            const Real su = (p > t) ? Real(1) : (p < t ? Real(-1) : Real(0));
            const Real sp = (p > 0) ? Real(1) : (p < 0 ? Real(-1) : Real(0));
            pp->grad[i] += g * (su * denom - u * sp) / (denom * denom);
        }
    });
}

Tensor softmax(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("softmax: expected 2-d tensor");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<Real> out(x.size());
    kernels::softmax_rows(x.data().data(), out.data(), r, c);
    return make_node(x.shape(), std::move(out), {x}, [r, c](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const Real* y = self.data.data() + i * c;
            const Real* g = self.grad.data() + i * c;
            Real dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            Real* gx = px->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += (g[j] - dot) * y[j];
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1 || gamma.size() != x.cols() ||
        beta.size() != x.cols())
        throw std::invalid_argument("layer_norm: shape mismatch " + shape_str(x.shape()) + " gamma " +
                                    shape_str(gamma.shape()) + " beta " + shape_str(beta.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<Real> out(x.size());
    auto mean = std::make_shared<std::vector<Real>>(r);
    auto rstd = std::make_shared<std::vector<Real>>(r);
    kernels::layer_norm_rows(x.data().data(), gamma.data().data(), beta.data().data(), out.data(),
                             mean->data(), rstd->data(), r, c, eps);
    return make_node(x.shape(), std::move(out), {x, gamma, beta},
                     [r, c, mean, rstd](TensorImpl& self) {
                         const ImplPtr& px = self.parents[0];
                         const ImplPtr& pg = self.parents[1];
                         const ImplPtr& pb = self.parents[2];
                         const bool wx = wants_grad(px), wg = wants_grad(pg), wb = wants_grad(pb);
                         if (wx) px->ensure_grad();
                         if (wg) pg->ensure_grad();
                         if (wb) pb->ensure_grad();
                         std::vector<Real> xhat(c), gh(c);
                         for (std::size_t i = 0; i < r; ++i) {
                             const Real* xr = px->data.data() + i * c;
                             const Real* g = self.grad.data() + i * c;
                             const Real mu = (*mean)[i], rs = (*rstd)[i];
                             for (std::size_t j = 0; j < c; ++j) xhat[j] = (xr[j] - mu) * rs;
                             if (wg)
                                 for (std::size_t j = 0; j < c; ++j) pg->grad[j] += g[j] * xhat[j];
                             if (wb)
                                 for (std::size_t j = 0; j < c; ++j) pb->grad[j] += g[j];
                             if (!wx) continue;
                             Real mean_gh = 0, mean_ghx = 0;
                             for (std::size_t j = 0; j < c; ++j) {
                                 gh[j] = g[j] * pg->data[j];
                                 mean_gh += gh[j];
                                 mean_ghx += gh[j] * xhat[j];
                             }
                             mean_gh /= Real(c);
                             mean_ghx /= Real(c);
                             Real* gx = px->grad.data() + i * c;
                             for (std::size_t j = 0; j < c; ++j)
                                 gx[j] += rs * (gh[j] - mean_gh - xhat[j] * mean_ghx);
                         }
                     });
}

Tensor gelu(const Tensor& x) {
    std::vector<Real> out(x.size());
    kernels::gelu(x.data().data(), out.data(), x.size());
    return make_node(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < px->data.size(); ++i) {
            const Real v = px->data[i];
            const Real u = kGeluC * (v + kGeluA * v * v * v);
            const Real th = std::tanh(u);
            const Real du = kGeluC * (Real(1) + Real(3) * kGeluA * v * v);
            const Real d = Real(0.5) * (Real(1) + th) + Real(0.5) * v * (Real(1) - th * th) * du;
            px->grad[i] += self.grad[i] * d;
        }
    });
}

Tensor dropout(const Tensor& x, Real p, Rng& rng, bool train) {
    if (p < Real(0) || p >= Real(1))
        throw std::invalid_argument("dropout: probability must be in [0,1), got " + std::to_string(p));
    if (!train || p == Real(0)) return x;
    auto mask = std::make_shared<std::vector<Real>>(x.size());
    std::bernoulli_distribution keep(1.0 - double(p));
    const Real scale = Real(1) / (Real(1) - p);
    for (Real& m : *mask) m = keep(rng) ? scale : Real(0);
    std::vector<Real> out(x.size());
    const auto xs = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * (*mask)[i];
    return make_node(x.shape(), std::move(out), {x}, [mask](TensorImpl& self) {
        const ImplPtr& px = self.parents[0];
        if (!wants_grad(px)) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += self.grad[i] * (*mask)[i];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

Tensor geglu(const Tensor& x, const Tensor& w_gate, const Tensor& b_gate, const Tensor& w_val,
             const Tensor& b_val) {
    return mul(gelu(linear(x, w_gate, b_gate)), linear(x, w_val, b_val));
}

Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const SdpaSpec& spec,
            std::vector<Real>* probs_out) {
    const std::size_t d = q.cols();
    if (k.cols() != d || v.cols() != d)
        throw std::invalid_argument("sdpa: q/k/v widths disagree: " + shape_str(q.shape()) + " " +
                                    shape_str(k.shape()) + " " + shape_str(v.shape()));
    if (d % spec.heads != 0)
        throw std::invalid_argument("sdpa: width " + std::to_string(d) + " not divisible by " +
                                    std::to_string(spec.heads) + " heads");
    if (q.rows() != spec.batch * spec.n_q || k.rows() != spec.batch * spec.n_kv ||
        v.rows() != spec.batch * spec.n_kv)
        throw std::invalid_argument("sdpa: row counts do not match batch layout");
    const std::size_t B = spec.batch, H = spec.heads, nq = spec.n_q, nkv = spec.n_kv, dh = d / H;
    const Real scale = Real(1) / std::sqrt(Real(dh));
    const bool use_dropout = spec.train && spec.dropout_p > Real(0);
    if (use_dropout && spec.rng == nullptr)
        throw std::invalid_argument("sdpa: dropout requires an rng in train mode");

    auto probs = std::make_shared<std::vector<Real>>(B * H * nq * nkv);
    std::shared_ptr<std::vector<Real>> dmask;
    if (use_dropout) {
        // Sampled serially up front so results do not depend on thread count.
        dmask = std::make_shared<std::vector<Real>>(B * H * nq * nkv);
        std::bernoulli_distribution keep(1.0 - double(spec.dropout_p));
        const Real ds = Real(1) / (Real(1) - spec.dropout_p);
        for (Real& m : *dmask) m = keep(*spec.rng) ? ds : Real(0);
    }

    std::vector<Real> out(B * nq * d, Real(0));
    const Real* qd = q.data().data();
    const Real* kd = k.data().data();
    const Real* vd = v.data().data();

#pragma omp parallel for schedule(static) collapse(2)
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            Real* p = probs->data() + ((b * H + h) * nq) * nkv;
            // scores then in-place softmax, one query row at a time
            for (std::size_t i = 0; i < nq; ++i) {
                const Real* qrow = qd + (b * nq + i) * d + h * dh;
                Real* prow = p + i * nkv;
                for (std::size_t j = 0; j < nkv; ++j) {
                    const Real* krow = kd + (b * nkv + j) * d + h * dh;
                    prow[j] = kernels::dot(qrow, krow, dh) * scale;
                }
                Real mx = prow[0];
                for (std::size_t j = 1; j < nkv; ++j) mx = std::max(mx, prow[j]);
                Real sum = 0;
                for (std::size_t j = 0; j < nkv; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    sum += prow[j];
                }
                const Real inv = Real(1) / sum;
                for (std::size_t j = 0; j < nkv; ++j) prow[j] *= inv;

                Real* orow = out.data() + (b * nq + i) * d + h * dh;
                for (std::size_t j = 0; j < nkv; ++j) {
                    Real w = prow[j];
                    if (use_dropout) w *= (*dmask)[((b * H + h) * nq + i) * nkv + j];
                    const Real* vrow = vd + (b * nkv + j) * d + h * dh;
#pragma omp simd
                    for (std::size_t t = 0; t < dh; ++t) orow[t] += w * vrow[t];
                }
            }
        }
    }

    if (probs_out) *probs_out = *probs;

    auto bw = [B, H, nq, nkv, d, dh, scale, probs, dmask, use_dropout](TensorImpl& self) {
        const ImplPtr& pq = self.parents[0];
        const ImplPtr& pk = self.parents[1];
        const ImplPtr& pv = self.parents[2];
        const bool wq = wants_grad(pq), wk = wants_grad(pk), wv = wants_grad(pv);
        if (wq) pq->ensure_grad();
        if (wk) pk->ensure_grad();
        if (wv) pv->ensure_grad();
        const Real* qd = pq->data.data();
        const Real* kd = pk->data.data();
        const Real* vd = pv->data.data();
        const Real* go = self.grad.data();
        // Parallel over heads only: different b would race on nothing, but
        // different (b,h) pairs write disjoint column slices of the same
        // grad rows, so (b,h) parallelism is safe; keep it.
#pragma omp parallel
        {
            std::vector<Real> gp(nkv), gs(nkv);
#pragma omp for schedule(static) collapse(2)
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < H; ++h) {
                    const Real* p = probs->data() + ((b * H + h) * nq) * nkv;
                    for (std::size_t i = 0; i < nq; ++i) {
                        const Real* prow = p + i * nkv;
                        const Real* grow = go + (b * nq + i) * d + h * dh;
                        // grad wrt (possibly dropped) probs, and into V
                        for (std::size_t j = 0; j < nkv; ++j)
                            gp[j] = kernels::dot(grow, vd + (b * nkv + j) * d + h * dh, dh);
                        if (use_dropout) {
                            const Real* mrow = dmask->data() + ((b * H + h) * nq + i) * nkv;
                            if (wv) {
                                for (std::size_t j = 0; j < nkv; ++j) {
                                    const Real w = prow[j] * mrow[j];
                                    if (w == Real(0)) continue;
                                    Real* gv = pv->grad.data() + (b * nkv + j) * d + h * dh;
#pragma omp simd
                                    for (std::size_t t = 0; t < dh; ++t) gv[t] += w * grow[t];
                                }
                            }
                            for (std::size_t j = 0; j < nkv; ++j) gp[j] *= mrow[j];
                        } else if (wv) {
                            for (std::size_t j = 0; j < nkv; ++j) {
                                const Real w = prow[j];
                                Real* gv = pv->grad.data() + (b * nkv + j) * d + h * dh;
#pragma omp simd
                                for (std::size_t t = 0; t < dh; ++t) gv[t] += w * grow[t];
                            }
                        }
                        // softmax backward
                        Real dot = 0;
                        for (std::size_t j = 0; j < nkv; ++j) dot += gp[j] * prow[j];
                        for (std::size_t j = 0; j < nkv; ++j) gs[j] = (gp[j] - dot) * prow[j] * scale;
                        if (wq) {
                            Real* gq = pq->grad.data() + (b * nq + i) * d + h * dh;
                            for (std::size_t j = 0; j < nkv; ++j) {
                                const Real* krow = kd + (b * nkv + j) * d + h * dh;
#pragma omp simd
                                for (std::size_t t = 0; t < dh; ++t) gq[t] += gs[j] * krow[t];
                            }
                        }
                        if (wk) {
                            const Real* qrow = qd + (b * nq + i) * d + h * dh;
                            for (std::size_t j = 0; j < nkv; ++j) {
                                Real* gk = pk->grad.data() + (b * nkv + j) * d + h * dh;
#pragma omp simd
                                for (std::size_t t = 0; t < dh; ++t) gk[t] += gs[j] * qrow[t];
                            }
                        }
                    }
                }
            }
        }
    };
    return make_node({B * nq, d}, std::move(out), {q, k, v}, std::move(bw));
}

}  // namespace cats::ops
