#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cats/common.hpp"
#include "cats/model.hpp"

namespace cats {

Real mse(std::span<const Real> pred, std::span<const Real> target);
Real mae(std::span<const Real> pred, std::span<const Real> target);
// M4 convention: 200 * mean(|y - yhat| / (|y| + |yhat|)); 0/0 terms are 0.
Real smape(std::span<const Real> pred, std::span<const Real> target);
// mean(|y - yhat|) / seasonal-naive in-sample MAE at lag `season`.
Real mase(std::span<const Real> pred, std::span<const Real> target, std::span<const Real> insample,
          std::size_t season);
Real owa(Real smape_value, Real mase_value, Real baseline_smape, Real baseline_mase);

struct MetricReport {
    Real mse = 0;
    Real mae = 0;
    Real smape = 0;
    std::optional<Real> mase;
    std::optional<Real> owa;
    std::optional<Real> mse_unscaled;
    std::optional<Real> mae_unscaled;
    std::size_t window_count = 0;  // window positions x channels
    std::vector<Real> per_step_mse;

    void write_kv(const std::string& path) const;
    static std::string csv_header();
    std::string csv_row(const std::string& run_name) const;
};

// Mean over samples of a recorded per-(layer, head) score map; see
// ScoreRecorder. Matrices are query-major [n_query x n_input].
struct AvgAttention {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Real> values;
    Real at(std::size_t q, std::size_t i) const { return values[q * cols + i]; }
};

// Arithmetic mean over every recorded cross-attention (layer, head) map.
AvgAttention average_attention(const ScoreRecorder& scores);

struct AttnPair {
    std::size_t query_patch = 0;
    std::size_t input_patch = 0;
    Real score = 0;
};

// Top-k cells by score, ties broken by (query, input) ascending.
std::vector<AttnPair> top_attention_pairs(const AvgAttention& map, std::size_t k);

struct LagScore {
    Real periodic_mean = 0;  // pairs whose absolute-time lag is a multiple of the period
    Real other_mean = 0;
    std::size_t periodic_pairs = 0;
    std::size_t other_pairs = 0;
};

// Partitions (query, input) pairs by whether the step lag between patch
// start times is a multiple of period_patches * P.
LagScore periodic_lag_score(std::span<const Real> map, std::size_t n_query, std::size_t n_input,
                            const PatchLayout& layout, const CatsConfig& cfg,
                            std::size_t period_patches);
LagScore periodic_lag_score(const AvgAttention& map, const PatchLayout& layout,
                            const CatsConfig& cfg, std::size_t period_patches);

struct EfficiencyReport {
    std::size_t param_total = 0;
    std::vector<std::size_t> score_elements_per_layer;  // N_T*N_L (cross) or N_T^2 (self)
    long long peak_live_elements = 0;  // data+grad elements, allocation proxy
    double mean_iter_seconds = 0;
    std::size_t iterations = 0;

    void write_kv(const std::string& path) const;
    static std::string csv_header();
    std::string csv_row(const std::string& run_name) const;
};

// Timed training iterations on synthetic data: 3 warm-up iterations, then
// `iterations` measured ones.
EfficiencyReport measure_efficiency(const CatsConfig& cfg, std::size_t iterations,
                                    std::size_t batch = 32, std::uint64_t seed = 2021);

// Attention-map CSV: one metadata comment line naming L, T, P plus layer and
// head, then cols-wide rows (row = query patch).
void write_attention_csv(const std::string& path, std::span<const Real> map, std::size_t rows,
                         std::size_t cols, const CatsConfig& cfg, const std::string& label);

}  // namespace cats
