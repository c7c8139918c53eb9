#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cats/common.hpp"
#include "cats/tensor.hpp"

namespace cats {

enum class AttentionKind { Cross, Self };

std::string to_string(AttentionKind k);
AttentionKind attention_kind_from_string(const std::string& s);

// Forecaster configuration. The decoder consumes learnable per-horizon-patch
// queries and cross-attends into embedded input patches; layers may be
// switched to self-attention over the query tokens for ablations.
struct CatsConfig {
    std::size_t input_length = 96;  // L
    std::size_t horizon = 96;       // T
    std::size_t patch_length = 24;  // P
    std::size_t patch_stride = 0;   // 0 => non-overlapping (= patch_length)
    bool end_padding = true;
    std::size_t embed_dim = 256;  // D
    std::size_t heads = 32;
    std::size_t layers = 3;
    std::size_t ffn_width = 0;  // F, 0 => 2*embed_dim
    Real mask_p_min = 0;
    Real mask_p_max = 0;
    bool query_sharing_across_channels = true;
    std::size_t channels = 1;  // M; sizes per-channel queries when not shared
    std::vector<AttentionKind> attention_kinds;  // empty => all Cross
    Real dropout_p = 0;

    std::size_t stride() const { return patch_stride ? patch_stride : patch_length; }
    std::size_t ffn() const { return ffn_width ? ffn_width : 2 * embed_dim; }
    std::size_t query_groups() const { return query_sharing_across_channels ? 1 : channels; }
    std::vector<AttentionKind> kinds() const;
    void validate() const;
};

// Token geometry induced by the config.
struct PatchLayout {
    std::size_t n_input = 0;  // N_L, includes the padding patch when enabled
    std::size_t n_query = 0;  // N_T = ceil(T / P)
    // Start step of each input patch in the (possibly padded) series.
    std::vector<std::size_t> patch_starts;
};

PatchLayout build_layout(const CatsConfig& cfg);

// Non-overlapping (or strided) windows of one univariate series, with the
// optional replicate-last-value end padding. Returns n_input * P values.
std::vector<Real> patchify(std::span<const Real> series, const CatsConfig& cfg);

struct ParamBreakdown {
    std::size_t query = 0;
    std::size_t positional = 0;
    std::size_t other = 0;  // embedding, attention, norms, FFN, output projection
    std::size_t total() const { return query + positional + other; }
};

ParamBreakdown count_parameters(const CatsConfig& cfg);

struct ModelParams {
    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor ffn_gate_w, ffn_gate_b, ffn_val_w, ffn_val_b, ffn_out_w, ffn_out_b;
    };

    Tensor patch_embed_w;  // [P x D], shared by input patches and queries
    Tensor patch_embed_b;  // [D]
    Tensor pos_embed;      // [N_L x D], input patches only
    Tensor queries;        // [groups*N_T x P]
    std::vector<Layer> layers;
    Tensor out_proj_w;  // [D x P], shared across query tokens
    Tensor out_proj_b;  // [P]

    static ModelParams init(const CatsConfig& cfg, Rng& rng);
    // Stable-ordered list of every learnable tensor (names set).
    std::vector<Tensor> all() const;
    std::size_t scalar_count() const;
    ModelParams clone() const;
    void check_shapes(const CatsConfig& cfg) const;
};

// Post-softmax attention maps accumulated per (layer, head) over every
// sample seen while recording; mean() recovers per-sample-average maps.
class ScoreRecorder {
  public:
    struct Key {
        std::size_t layer;
        std::size_t head;
        bool operator<(const Key& o) const {
            return layer != o.layer ? layer < o.layer : head < o.head;
        }
    };
    struct Map {
        AttentionKind kind = AttentionKind::Cross;
        std::size_t rows = 0;  // query patches
        std::size_t cols = 0;  // input patches (cross) or query patches (self)
        std::vector<Real> sum;
        std::size_t samples = 0;
        std::vector<Real> mean() const;
    };

    void add(std::size_t layer, AttentionKind kind, std::size_t heads, std::size_t batch,
             std::size_t n_q, std::size_t n_kv, const std::vector<Real>& probs);
    bool empty() const { return maps_.empty(); }
    const std::map<Key, Map>& maps() const { return maps_; }

  private:
    std::map<Key, Map> maps_;
};

// Per-query-patch keep/scale multipliers for one sample: entry i is 0 with
// probability p_i (linear schedule from mask_p_min to mask_p_max across
// patches) and 1/(1-p_i) otherwise; all ones in eval mode.
std::vector<Real> sample_mask(const CatsConfig& cfg, const PatchLayout& layout, Rng& rng, bool train);

struct ForwardOptions {
    bool train = false;
    Rng* rng = nullptr;  // required in train mode when masking or dropout is active
    ScoreRecorder* recorder = nullptr;
    // Test hook: fixed per-(sample, query patch) multipliers, size B * N_T;
    // overrides mask sampling in both modes.
    const std::vector<Real>* mask_override = nullptr;
};

// One decoder block: multi-head attention (cross: kv_tokens as key/value;
// self: query tokens only), per-query-token branch mask, residual + layer
// norm, GeGLU feed-forward, residual + layer norm.
Tensor attention_block(const Tensor& q_tokens, const Tensor& kv_tokens,
                       const ModelParams::Layer& lp, AttentionKind kind, const CatsConfig& cfg,
                       std::size_t batch, std::size_t layer_index, const Tensor* mask, bool train,
                       Rng* rng, std::vector<Real>* probs_out);

// Affine patch embedding shared by inputs and queries; positional table
// added only for input patches.
Tensor embed_tokens(const Tensor& tokens, const ModelParams& params, bool with_positional);

// x: [B x L] univariate inputs (channel-independent rows). channel_ids maps
// each row to its channel for per-channel queries; pass {} when queries are
// shared. Returns [B x T].
Tensor forward(const Tensor& x, const std::vector<std::size_t>& channel_ids,
               const ModelParams& params, const CatsConfig& cfg, const ForwardOptions& opt);

}  // namespace cats
