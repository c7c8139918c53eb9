#include "cats/model.hpp"

#include <algorithm>
#include <cmath>

#include "cats/ops.hpp"

namespace cats {

std::string to_string(AttentionKind k) { return k == AttentionKind::Cross ? "cross" : "self"; }

AttentionKind attention_kind_from_string(const std::string& s) {
    if (s == "cross") return AttentionKind::Cross;
    if (s == "self") return AttentionKind::Self;
    throw std::invalid_argument("unknown attention kind '" + s + "' (expected cross|self)");
}

std::vector<AttentionKind> CatsConfig::kinds() const {
    if (attention_kinds.empty()) return std::vector<AttentionKind>(layers, AttentionKind::Cross);
    return attention_kinds;
}

void CatsConfig::validate() const {
    if (input_length == 0 || horizon == 0) throw std::invalid_argument("config: L and T must be >= 1");
    if (patch_length == 0) throw std::invalid_argument("config: patch length must be >= 1");
    if (input_length < patch_length)
        throw std::invalid_argument("config: input length " + std::to_string(input_length) +
                                    " shorter than patch length " + std::to_string(patch_length));
    if (stride() == 0 || stride() > patch_length)
        throw std::invalid_argument("config: patch stride must be in [1, patch length]");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        throw std::invalid_argument("config: embed dim " + std::to_string(embed_dim) +
                                    " must be divisible by heads " + std::to_string(heads));
    if (layers == 0) throw std::invalid_argument("config: at least one layer required");
    if (!(mask_p_min >= 0 && mask_p_min <= mask_p_max && mask_p_max < 1))
        throw std::invalid_argument("config: mask probabilities must satisfy 0 <= min <= max < 1");
    if (dropout_p < 0 || dropout_p >= 1)
        throw std::invalid_argument("config: dropout must be in [0,1)");
    if (channels == 0) throw std::invalid_argument("config: channels must be >= 1");
    if (!attention_kinds.empty()) {
        if (attention_kinds.size() != layers)
            throw std::invalid_argument("config: attention kinds list has " +
                                        std::to_string(attention_kinds.size()) + " entries for " +
                                        std::to_string(layers) + " layers");
        const auto n_self = static_cast<std::size_t>(
            std::count(attention_kinds.begin(), attention_kinds.end(), AttentionKind::Self));
        if (n_self >= layers)
            throw std::invalid_argument("config: at least one cross-attention layer is required");
    }
}

PatchLayout build_layout(const CatsConfig& cfg) {
    cfg.validate();
    PatchLayout layout;
    const std::size_t L = cfg.input_length, P = cfg.patch_length, s = cfg.stride();
    // Padding appends `stride` replicas of the final value, then windows the
    // padded series; with stride == P this adds exactly one all-replica patch.
    const std::size_t padded = cfg.end_padding ? L + s : L;
    for (std::size_t start = 0; start + P <= padded; start += s) layout.patch_starts.push_back(start);
    layout.n_input = layout.patch_starts.size();
    layout.n_query = (cfg.horizon + P - 1) / P;
    return layout;
}

std::vector<Real> patchify(std::span<const Real> series, const CatsConfig& cfg) {
    if (series.size() != cfg.input_length)
        throw std::invalid_argument("patchify: series has " + std::to_string(series.size()) +
                                    " steps, config expects " + std::to_string(cfg.input_length));
    const PatchLayout layout = build_layout(cfg);
    const std::size_t P = cfg.patch_length, L = cfg.input_length;
    std::vector<Real> out(layout.n_input * P);
    const Real last = series[L - 1];
    for (std::size_t p = 0; p < layout.n_input; ++p) {
        const std::size_t start = layout.patch_starts[p];
        for (std::size_t j = 0; j < P; ++j) {
            const std::size_t t = start + j;
            out[p * P + j] = t < L ? series[t] : last;
        }
    }
    return out;
}

ParamBreakdown count_parameters(const CatsConfig& cfg) {
    const PatchLayout layout = build_layout(cfg);
    const std::size_t P = cfg.patch_length, D = cfg.embed_dim, F = cfg.ffn();
    ParamBreakdown b;
    b.query = cfg.query_groups() * layout.n_query * P;
    b.positional = layout.n_input * D;
    b.other = P * D + D;                       // patch embedding
    b.other += cfg.layers * (4 * (D * D + D)   // q/k/v/o projections
                             + 4 * D           // two layer-norm affine pairs
                             + 2 * (D * F + F) // GeGLU gate and value
                             + F * D + D);     // FFN output
    b.other += D * P + P;                      // shared output projection
    return b;
}

namespace {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng, const std::string& name) {
    const Real bound = Real(1) / std::sqrt(Real(fan_in));
    std::uniform_real_distribution<double> dist(-double(bound), double(bound));
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<Real> data(n);
    for (Real& v : data) v = static_cast<Real>(dist(rng));
    Tensor t = Tensor::from_vector(std::move(shape), std::move(data), true);
    t.set_name(name);
    return t;
}

Tensor init_normal(Shape shape, Real scale, Rng& rng, const std::string& name) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<Real> data(n);
    for (Real& v : data) v = static_cast<Real>(dist(rng)) * scale;
    Tensor t = Tensor::from_vector(std::move(shape), std::move(data), true);
    t.set_name(name);
    return t;
}

Tensor init_const(Shape shape, Real value, const std::string& name) {
    Tensor t = Tensor::full(std::move(shape), value, true);
    t.set_name(name);
    return t;
}

}  // namespace

ModelParams ModelParams::init(const CatsConfig& cfg, Rng& rng) {
    cfg.validate();
    const PatchLayout layout = build_layout(cfg);
    const std::size_t P = cfg.patch_length, D = cfg.embed_dim, F = cfg.ffn();
    ModelParams m;
    m.patch_embed_w = init_uniform({P, D}, P, rng, "patch_embed.w");
    m.patch_embed_b = init_uniform({D}, P, rng, "patch_embed.b");
    m.pos_embed = init_normal({layout.n_input, D}, Real(0.02), rng, "pos_embed");
    m.queries = init_normal({cfg.query_groups() * layout.n_query, P}, Real(0.02), rng, "queries");
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string pfx = "layer" + std::to_string(l) + ".";
        Layer lp;
        lp.wq = init_uniform({D, D}, D, rng, pfx + "wq");
        lp.bq = init_uniform({D}, D, rng, pfx + "bq");
        lp.wk = init_uniform({D, D}, D, rng, pfx + "wk");
        lp.bk = init_uniform({D}, D, rng, pfx + "bk");
        lp.wv = init_uniform({D, D}, D, rng, pfx + "wv");
        lp.bv = init_uniform({D}, D, rng, pfx + "bv");
        lp.wo = init_uniform({D, D}, D, rng, pfx + "wo");
        lp.bo = init_uniform({D}, D, rng, pfx + "bo");
        lp.ln1_g = init_const({D}, Real(1), pfx + "ln1.g");
        lp.ln1_b = init_const({D}, Real(0), pfx + "ln1.b");
        lp.ln2_g = init_const({D}, Real(1), pfx + "ln2.g");
        lp.ln2_b = init_const({D}, Real(0), pfx + "ln2.b");
        lp.ffn_gate_w = init_uniform({D, F}, D, rng, pfx + "ffn.gate_w");
        lp.ffn_gate_b = init_uniform({F}, D, rng, pfx + "ffn.gate_b");
        lp.ffn_val_w = init_uniform({D, F}, D, rng, pfx + "ffn.val_w");
        lp.ffn_val_b = init_uniform({F}, D, rng, pfx + "ffn.val_b");
        lp.ffn_out_w = init_uniform({F, D}, F, rng, pfx + "ffn.out_w");
        lp.ffn_out_b = init_uniform({D}, F, rng, pfx + "ffn.out_b");
        m.layers.push_back(std::move(lp));
    }
    m.out_proj_w = init_uniform({D, P}, D, rng, "out_proj.w");
    m.out_proj_b = init_uniform({P}, D, rng, "out_proj.b");
    if (m.scalar_count() != count_parameters(cfg).total())
        throw std::logic_error("parameter registry disagrees with count_parameters: " +
                               std::to_string(m.scalar_count()) + " vs " +
                               std::to_string(count_parameters(cfg).total()));
    return m;
}

std::vector<Tensor> ModelParams::all() const {
    std::vector<Tensor> out{patch_embed_w, patch_embed_b, pos_embed, queries};
    for (const Layer& l : layers) {
        for (const Tensor& t : {l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_g, l.ln1_b,
                                l.ln2_g, l.ln2_b, l.ffn_gate_w, l.ffn_gate_b, l.ffn_val_w, l.ffn_val_b,
                                l.ffn_out_w, l.ffn_out_b})
            out.push_back(t);
    }
    out.push_back(out_proj_w);
    out.push_back(out_proj_b);
    return out;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : all()) n += t.size();
    return n;
}

ModelParams ModelParams::clone() const {
    ModelParams m;
    m.patch_embed_w = patch_embed_w.clone();
    m.patch_embed_b = patch_embed_b.clone();
    m.pos_embed = pos_embed.clone();
    m.queries = queries.clone();
    for (const Layer& l : layers) {
        Layer c;
        c.wq = l.wq.clone();
        c.bq = l.bq.clone();
        c.wk = l.wk.clone();
        c.bk = l.bk.clone();
        c.wv = l.wv.clone();
        c.bv = l.bv.clone();
        c.wo = l.wo.clone();
        c.bo = l.bo.clone();
        c.ln1_g = l.ln1_g.clone();
        c.ln1_b = l.ln1_b.clone();
        c.ln2_g = l.ln2_g.clone();
        c.ln2_b = l.ln2_b.clone();
        c.ffn_gate_w = l.ffn_gate_w.clone();
        c.ffn_gate_b = l.ffn_gate_b.clone();
        c.ffn_val_w = l.ffn_val_w.clone();
        c.ffn_val_b = l.ffn_val_b.clone();
        c.ffn_out_w = l.ffn_out_w.clone();
        c.ffn_out_b = l.ffn_out_b.clone();
        m.layers.push_back(std::move(c));
    }
    m.out_proj_w = out_proj_w.clone();
    m.out_proj_b = out_proj_b.clone();
    return m;
}

void ModelParams::check_shapes(const CatsConfig& cfg) const {
    const PatchLayout layout = build_layout(cfg);
    const std::size_t P = cfg.patch_length, D = cfg.embed_dim;
    auto expect = [](const Tensor& t, Shape want) {
        if (t.shape() != want)
            throw CheckpointError("parameter " + t.name() + " has shape " + shape_str(t.shape()) +
                                  ", expected " + shape_str(want));
    };
    expect(patch_embed_w, {P, D});
    expect(pos_embed, {layout.n_input, D});
    expect(queries, {cfg.query_groups() * layout.n_query, P});
    if (layers.size() != cfg.layers)
        throw CheckpointError("parameter set has " + std::to_string(layers.size()) + " layers, config " +
                              std::to_string(cfg.layers));
    expect(out_proj_w, {D, P});
}

std::vector<Real> ScoreRecorder::Map::mean() const {
    std::vector<Real> out(sum.size());
    const Real inv = samples ? Real(1) / Real(samples) : Real(0);
    for (std::size_t i = 0; i < sum.size(); ++i) out[i] = sum[i] * inv;
    return out;
}

void ScoreRecorder::add(std::size_t layer, AttentionKind kind, std::size_t heads, std::size_t batch,
                        std::size_t n_q, std::size_t n_kv, const std::vector<Real>& probs) {
    for (std::size_t h = 0; h < heads; ++h) {
        Map& m = maps_[{layer, h}];
        if (m.sum.empty()) {
            m.kind = kind;
            m.rows = n_q;
            m.cols = n_kv;
            m.sum.assign(n_q * n_kv, Real(0));
        }
        for (std::size_t b = 0; b < batch; ++b) {
            const Real* p = probs.data() + ((b * heads + h) * n_q) * n_kv;
            for (std::size_t i = 0; i < n_q * n_kv; ++i) m.sum[i] += p[i];
        }
        m.samples += batch;
    }
}

std::vector<Real> sample_mask(const CatsConfig& cfg, const PatchLayout& layout, Rng& rng, bool train) {
    std::vector<Real> mask(layout.n_query, Real(1));
    if (!train) return mask;
    const std::size_t n = layout.n_query;
    for (std::size_t i = 0; i < n; ++i) {
        const Real p = cfg.mask_p_min +
                       (cfg.mask_p_max - cfg.mask_p_min) * Real(i) / Real(std::max<std::size_t>(n - 1, 1));
        if (p <= Real(0)) continue;
        std::bernoulli_distribution masked{double(p)};
        mask[i] = masked(rng) ? Real(0) : Real(1) / (Real(1) - p);
    }
    return mask;
}

Tensor attention_block(const Tensor& q_tokens, const Tensor& kv_tokens,
                       const ModelParams::Layer& lp, AttentionKind kind, const CatsConfig& cfg,
                       std::size_t batch, std::size_t layer_index, const Tensor* mask, bool train,
                       Rng* rng, std::vector<Real>* probs_out) {
    const bool is_cross = kind == AttentionKind::Cross;
    const Tensor& kv = is_cross ? kv_tokens : q_tokens;
    ops::SdpaSpec spec;
    spec.batch = batch;
    spec.heads = cfg.heads;
    spec.n_q = q_tokens.rows() / batch;
    spec.n_kv = kv.rows() / batch;
    spec.dropout_p = cfg.dropout_p;
    spec.train = train;
    spec.rng = rng;

    Tensor qh = ops::linear(q_tokens, lp.wq, lp.bq);
    Tensor kh = ops::linear(kv, lp.wk, lp.bk);
    Tensor vh = ops::linear(kv, lp.wv, lp.bv);
    Tensor att = ops::sdpa(qh, kh, vh, spec, probs_out);
    att = ops::linear(att, lp.wo, lp.bo);
    if (mask) att = ops::scale_rows(att, *mask);

    Tensor x = ops::layer_norm(ops::add(q_tokens, att), lp.ln1_g, lp.ln1_b);
    Tensor h = ops::geglu(x, lp.ffn_gate_w, lp.ffn_gate_b, lp.ffn_val_w, lp.ffn_val_b);
    if (train && cfg.dropout_p > Real(0)) h = ops::dropout(h, cfg.dropout_p, *rng, train);
    Tensor f = ops::linear(h, lp.ffn_out_w, lp.ffn_out_b);
    Tensor out = ops::layer_norm(ops::add(x, f), lp.ln2_g, lp.ln2_b);
    if (!all_finite(out.data()))
        throw NumericError("non-finite activations in decoder layer " + std::to_string(layer_index));
    return out;
}

Tensor embed_tokens(const Tensor& tokens, const ModelParams& params, bool with_positional) {
    if (tokens.cols() != params.patch_embed_w.rows())
        throw std::invalid_argument("embed: token width " + std::to_string(tokens.cols()) +
                                    " does not match patch length " +
                                    std::to_string(params.patch_embed_w.rows()));
    Tensor e = ops::linear(tokens, params.patch_embed_w, params.patch_embed_b);
    if (with_positional) e = ops::add_block_tiled(e, params.pos_embed);
    return e;
}

Tensor forward(const Tensor& x, const std::vector<std::size_t>& channel_ids,
               const ModelParams& params, const CatsConfig& cfg, const ForwardOptions& opt) {
    cfg.validate();
    params.check_shapes(cfg);
    const PatchLayout layout = build_layout(cfg);
    const std::size_t B = x.rows();
    const std::size_t P = cfg.patch_length, T = cfg.horizon;
    const std::size_t n_q = layout.n_query, n_in = layout.n_input;
    if (x.cols() != cfg.input_length)
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                    " steps, config expects " + std::to_string(cfg.input_length));
    if (!channel_ids.empty() && channel_ids.size() != B)
        throw std::invalid_argument("forward: channel id count does not match batch");
    const bool masking_active =
        opt.mask_override != nullptr || (opt.train && cfg.mask_p_max > Real(0));
    if (opt.train && (cfg.mask_p_max > Real(0) || cfg.dropout_p > Real(0)) && opt.rng == nullptr)
        throw std::invalid_argument("forward: train mode with masking/dropout requires an rng");

    // Input patches carry no gradient; tokenized outside the record.
    std::vector<Real> patch_data(B * n_in * P);
    for (std::size_t b = 0; b < B; ++b) {
        const auto row = patchify(std::span<const Real>(x.data().data() + b * cfg.input_length,
                                                        cfg.input_length),
                                  cfg);
        std::copy(row.begin(), row.end(), patch_data.begin() + b * n_in * P);
    }
    Tensor in_tokens = Tensor::from_vector({B * n_in, P}, std::move(patch_data));
    Tensor memory = embed_tokens(in_tokens, params, true);

    std::vector<std::size_t> q_idx(B * n_q);
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t group = 0;
        if (cfg.query_groups() > 1) {
            if (channel_ids.empty())
                throw std::invalid_argument("forward: per-channel queries require channel ids");
            group = channel_ids[b];
            if (group >= cfg.query_groups())
                throw std::invalid_argument("forward: channel id " + std::to_string(group) +
                                            " out of range for " + std::to_string(cfg.query_groups()) +
                                            " query groups");
        }
        for (std::size_t i = 0; i < n_q; ++i) q_idx[b * n_q + i] = group * n_q + i;
    }
    Tensor cur = embed_tokens(ops::gather_rows(params.queries, std::move(q_idx)), params, false);

    const auto kinds = cfg.kinds();
    for (std::size_t l = 0; l < kinds.size(); ++l) {
        Tensor mask_tensor;
        const Tensor* mask_ptr = nullptr;
        if (opt.mask_override) {
            if (opt.mask_override->size() != B * n_q)
                throw std::invalid_argument("forward: mask override size mismatch");
            mask_tensor = Tensor::from_vector({B * n_q}, *opt.mask_override);
            mask_ptr = &mask_tensor;
        } else if (masking_active) {
            std::vector<Real> m(B * n_q);
            for (std::size_t b = 0; b < B; ++b) {
                const auto one = sample_mask(cfg, layout, *opt.rng, true);
                std::copy(one.begin(), one.end(), m.begin() + b * n_q);
            }
            mask_tensor = Tensor::from_vector({B * n_q}, std::move(m));
            mask_ptr = &mask_tensor;
        }
        std::vector<Real> probs;
        std::vector<Real>* probs_ptr = opt.recorder ? &probs : nullptr;
        cur = attention_block(cur, memory, params.layers[l], kinds[l], cfg, B, l, mask_ptr, opt.train,
                              opt.rng, probs_ptr);
        if (opt.recorder) {
            const std::size_t n_kv = kinds[l] == AttentionKind::Cross ? n_in : n_q;
            opt.recorder->add(l, kinds[l], cfg.heads, B, n_q, n_kv, probs);
        }
    }

    Tensor out_tokens = ops::linear(cur, params.out_proj_w, params.out_proj_b);  // [B*N_T x P]
    Tensor out = ops::reshape(out_tokens, {B, n_q * P});
    if (n_q * P > T) out = ops::slice_cols(out, 0, T);
    return out;
}

}  // namespace cats
