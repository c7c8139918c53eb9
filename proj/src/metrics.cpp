#include "cats/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cats/ops.hpp"
#include "cats/trainer.hpp"

namespace cats {

namespace {

void check_lengths(const char* op, std::span<const Real> pred, std::span<const Real> target) {
    if (pred.size() != target.size())
        throw std::invalid_argument(std::string(op) + ": length mismatch " +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(target.size()));
    if (pred.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
}

std::string fmt_real(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", double(v));
    return buf;
}

}  // namespace

Real mse(std::span<const Real> pred, std::span<const Real> target) {
    check_lengths("mse", pred, target);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred[i]) - double(target[i]);
        s += d * d;
    }
    return Real(s / double(pred.size()));
}

Real mae(std::span<const Real> pred, std::span<const Real> target) {
    check_lengths("mae", pred, target);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(double(pred[i]) - double(target[i]));
    return Real(s / double(pred.size()));
}

Real smape(std::span<const Real> pred, std::span<const Real> target) {
    check_lengths("smape", pred, target);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double denom = std::abs(double(target[i])) + std::abs(double(pred[i]));
        if (denom > 0) s += std::abs(double(pred[i]) - double(target[i])) / denom;
    }
    return Real(200.0 * s / double(pred.size()));
}

Real mase(std::span<const Real> pred, std::span<const Real> target, std::span<const Real> insample,
          std::size_t season) {
    check_lengths("mase", pred, target);
    if (season == 0) throw std::invalid_argument("mase: season must be >= 1");
    if (insample.size() <= season)
        throw std::invalid_argument("mase: in-sample length " + std::to_string(insample.size()) +
                                    " must exceed season " + std::to_string(season));
    double denom = 0;
    for (std::size_t t = season; t < insample.size(); ++t)
        denom += std::abs(double(insample[t]) - double(insample[t - season]));
    denom /= double(insample.size() - season);
    if (denom == 0)
        throw std::invalid_argument("mase: series is constant at lag " + std::to_string(season) +
                                    "; seasonal-naive error is zero");
    double num = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) num += std::abs(double(pred[i]) - double(target[i]));
    num /= double(pred.size());
    return Real(num / denom);
}

Real owa(Real smape_value, Real mase_value, Real baseline_smape, Real baseline_mase) {
    if (!(baseline_smape > 0) || !(baseline_mase > 0))
        throw std::invalid_argument("owa: baselines must be positive");
    return Real(0.5) * (smape_value / baseline_smape + mase_value / baseline_mase);
}

void MetricReport::write_kv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    out << "mse=" << fmt_real(mse) << '\n';
    out << "mae=" << fmt_real(mae) << '\n';
    out << "smape=" << fmt_real(smape) << '\n';
    if (mase) out << "mase=" << fmt_real(*mase) << '\n';
    if (owa) out << "owa=" << fmt_real(*owa) << '\n';
    if (mse_unscaled) out << "mse_unscaled=" << fmt_real(*mse_unscaled) << '\n';
    if (mae_unscaled) out << "mae_unscaled=" << fmt_real(*mae_unscaled) << '\n';
    out << "window_count=" << window_count << '\n';
    out << "per_step_mse=";
    for (std::size_t t = 0; t < per_step_mse.size(); ++t) {
        if (t) out << ';';
        out << fmt_real(per_step_mse[t]);
    }
    out << '\n';
}

std::string MetricReport::csv_header() {
    return "run,mse,mae,smape,mase,owa,mse_unscaled,mae_unscaled,window_count";
}

std::string MetricReport::csv_row(const std::string& run_name) const {
    std::ostringstream os;
    os << run_name << ',' << fmt_real(mse) << ',' << fmt_real(mae) << ',' << fmt_real(smape) << ','
       << (mase ? fmt_real(*mase) : "") << ',' << (owa ? fmt_real(*owa) : "") << ','
       << (mse_unscaled ? fmt_real(*mse_unscaled) : "") << ','
       << (mae_unscaled ? fmt_real(*mae_unscaled) : "") << ',' << window_count;
    return os.str();
}

AvgAttention average_attention(const ScoreRecorder& scores) {
    AvgAttention avg;
    std::size_t n_maps = 0;
    for (const auto& [key, map] : scores.maps()) {
        if (map.kind != AttentionKind::Cross) continue;
        const auto m = map.mean();
        if (avg.values.empty()) {
            avg.rows = map.rows;
            avg.cols = map.cols;
            avg.values.assign(m.size(), Real(0));
        }
        if (map.rows != avg.rows || map.cols != avg.cols)
            throw std::invalid_argument("average_attention: inconsistent map shapes");
        for (std::size_t i = 0; i < m.size(); ++i) avg.values[i] += m[i];
        ++n_maps;
    }
    if (n_maps == 0) throw std::invalid_argument("average_attention: no cross-attention maps recorded");
    for (Real& v : avg.values) v /= Real(n_maps);
    return avg;
}

std::vector<AttnPair> top_attention_pairs(const AvgAttention& map, std::size_t k) {
    if (k < 1) throw std::invalid_argument("top_attention_pairs: k must be >= 1");
    if (k > map.values.size())
        throw std::invalid_argument("top_attention_pairs: k=" + std::to_string(k) + " exceeds " +
                                    std::to_string(map.values.size()) + " cells");
    std::vector<AttnPair> cells;
    cells.reserve(map.values.size());
    for (std::size_t q = 0; q < map.rows; ++q)
        for (std::size_t i = 0; i < map.cols; ++i) cells.push_back({q, i, map.at(q, i)});
    std::sort(cells.begin(), cells.end(), [](const AttnPair& a, const AttnPair& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.query_patch != b.query_patch) return a.query_patch < b.query_patch;
        return a.input_patch < b.input_patch;
    });
    cells.resize(k);
    return cells;
}

LagScore periodic_lag_score(std::span<const Real> map, std::size_t n_query, std::size_t n_input,
                            const PatchLayout& layout, const CatsConfig& cfg,
                            std::size_t period_patches) {
    if (period_patches < 1) throw std::invalid_argument("periodic_lag_score: period must be >= 1");
    if (map.size() != n_query * n_input || n_input != layout.n_input)
        throw std::invalid_argument("periodic_lag_score: map shape does not match layout");
    const std::size_t period_steps = period_patches * cfg.patch_length;
    LagScore s;
    double p_sum = 0, o_sum = 0;
    for (std::size_t q = 0; q < n_query; ++q) {
        const std::size_t q_start = cfg.input_length + q * cfg.patch_length;
        for (std::size_t i = 0; i < n_input; ++i) {
            const std::size_t lag = q_start - layout.patch_starts[i];
            if (lag % period_steps == 0) {
                p_sum += double(map[q * n_input + i]);
                ++s.periodic_pairs;
            } else {
                o_sum += double(map[q * n_input + i]);
                ++s.other_pairs;
            }
        }
    }
    s.periodic_mean = s.periodic_pairs ? Real(p_sum / double(s.periodic_pairs)) : Real(0);
    s.other_mean = s.other_pairs ? Real(o_sum / double(s.other_pairs)) : Real(0);
    return s;
}

LagScore periodic_lag_score(const AvgAttention& map, const PatchLayout& layout,
                            const CatsConfig& cfg, std::size_t period_patches) {
    return periodic_lag_score(map.values, map.rows, map.cols, layout, cfg, period_patches);
}

void EfficiencyReport::write_kv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    out << "param_total=" << param_total << '\n';
    out << "score_elements_per_layer=";
    for (std::size_t l = 0; l < score_elements_per_layer.size(); ++l) {
        if (l) out << ';';
        out << score_elements_per_layer[l];
    }
    out << '\n';
    out << "peak_live_elements=" << peak_live_elements << '\n';
    out << "mean_iter_seconds=" << fmt_real(Real(mean_iter_seconds)) << '\n';
    out << "iterations=" << iterations << '\n';
}

std::string EfficiencyReport::csv_header() {
    return "run,param_total,score_elements_total,peak_live_elements,mean_iter_seconds,iterations";
}

std::string EfficiencyReport::csv_row(const std::string& run_name) const {
    std::size_t total = 0;
    for (std::size_t e : score_elements_per_layer) total += e;
    std::ostringstream os;
    os << run_name << ',' << param_total << ',' << total << ',' << peak_live_elements << ','
       << fmt_real(Real(mean_iter_seconds)) << ',' << iterations;
    return os.str();
}

EfficiencyReport measure_efficiency(const CatsConfig& cfg, std::size_t iterations, std::size_t batch,
                                    std::uint64_t seed) {
    if (iterations < 1) throw std::invalid_argument("measure_efficiency: iterations must be >= 1");
    cfg.validate();
    const PatchLayout layout = build_layout(cfg);

    EfficiencyReport rep;
    rep.iterations = iterations;
    rep.param_total = count_parameters(cfg).total();
    for (AttentionKind k : cfg.kinds())
        rep.score_elements_per_layer.push_back(
            layout.n_query * (k == AttentionKind::Cross ? layout.n_input : layout.n_query));

    Rng rng(seed);
    ModelParams params = ModelParams::init(cfg, rng);
    auto trainable = params.all();
    AdamState adam(trainable);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Real> x(batch * cfg.input_length), y(batch * cfg.horizon);
    for (Real& v : x) v = Real(normal(rng));
    for (Real& v : y) v = Real(normal(rng));
    Tensor xt = Tensor::from_vector({batch, cfg.input_length}, std::move(x));
    Tensor yt = Tensor::from_vector({batch, cfg.horizon}, std::move(y));
    std::vector<std::size_t> ch(batch, 0);
    if (cfg.query_groups() > 1) {
        // spread synthetic rows over the query groups
        for (std::size_t i = 0; i < batch; ++i) ch[i] = i % cfg.query_groups();
    }

    Rng mask_rng(seed ^ 0x6d61736bULL);
    auto one_iter = [&] {
        ForwardOptions opt;
        opt.train = true;
        opt.rng = &mask_rng;
        Tensor pred = forward(xt, ch, params, cfg, opt);
        Tensor loss = ops::mse_loss(pred, yt);
        loss.backward();
        adam_step(trainable, adam, Real(1e-3));
    };

    for (int i = 0; i < 3; ++i) one_iter();
    LiveElementCounter::reset_peak();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < iterations; ++i) one_iter();
    const auto t1 = std::chrono::steady_clock::now();
    rep.mean_iter_seconds = std::chrono::duration<double>(t1 - t0).count() / double(iterations);
    rep.peak_live_elements = LiveElementCounter::peak();
    return rep;
}

void write_attention_csv(const std::string& path, std::span<const Real> map, std::size_t rows,
                         std::size_t cols, const CatsConfig& cfg, const std::string& label) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    out << "# L=" << cfg.input_length << " T=" << cfg.horizon << " P=" << cfg.patch_length << " "
        << label << " rows=query_patch cols=input_patch\n";
    char buf[40];
    for (std::size_t q = 0; q < rows; ++q) {
        for (std::size_t i = 0; i < cols; ++i) {
            if (i) out << ',';
            std::snprintf(buf, sizeof buf, "%.17g", double(map[q * cols + i]));
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace cats
