#include "cats/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "cats/ops.hpp"

namespace cats {

std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "smape"; }

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::Mse;
    if (s == "smape") return LossKind::Smape;
    throw std::invalid_argument("unknown loss kind '" + s + "' (expected mse|smape)");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (clip_norm < 0) throw std::invalid_argument("train: clip norm must be >= 0");
}

AdamState::AdamState(const std::vector<Tensor>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor& p : params) {
        m_.emplace_back(p.size(), Real(0));
        v_.emplace_back(p.size(), Real(0));
    }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, Real lr) {
    if (state.m_.size() != params.size())
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m_.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    for (const Tensor& p : params)
        if (!p.has_grad())
            throw std::runtime_error("adam_step: missing gradient for parameter '" + p.name() + "'");

    state.step_ += 1;
    const Real b1 = state.beta1, b2 = state.beta2;
    const Real bc1 = Real(1) - std::pow(b1, Real(state.step_));
    const Real bc2 = Real(1) - std::pow(b2, Real(state.step_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto w = params[pi].data_mut();
        auto g = params[pi].grad_mut();
        auto& m = state.m_[pi];
        auto& v = state.v_[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
            v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        params[pi].zero_grad();
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Batch {
    Tensor x;        // [rows x L]
    Tensor target;   // [rows x T]
    std::vector<std::size_t> channel_ids;
};

Batch assemble(const WindowDataset& ds, std::span<const std::size_t> positions) {
    const std::size_t M = ds.channels(), L = ds.input_len(), T = ds.horizon();
    const std::size_t rows = positions.size() * M;
    std::vector<Real> x(rows * L), y(rows * T);
    std::vector<std::size_t> ch(rows);
    std::size_t r = 0;
    for (std::size_t p : positions) {
        for (std::size_t c = 0; c < M; ++c, ++r) {
            const auto in = ds.input(c, p);
            const auto tg = ds.target(c, p);
            std::copy(in.begin(), in.end(), x.begin() + r * L);
            std::copy(tg.begin(), tg.end(), y.begin() + r * T);
            ch[r] = c;
        }
    }
    return {Tensor::from_vector({rows, L}, std::move(x)),
            Tensor::from_vector({rows, T}, std::move(y)), std::move(ch)};
}

Tensor apply_loss(LossKind kind, const Tensor& pred, const Tensor& target) {
    return kind == LossKind::Mse ? ops::mse_loss(pred, target) : ops::smape_loss(pred, target);
}

void clip_gradients(std::vector<Tensor>& params, Real max_norm) {
    Real sq = 0;
    for (Tensor& p : params)
        for (Real g : p.grad_mut()) sq += g * g;
    const Real norm = std::sqrt(sq);
    if (norm <= max_norm || norm == Real(0)) return;
    const Real s = max_norm / norm;
    for (Tensor& p : params)
        for (Real& g : p.grad_mut()) g *= s;
}

Real eval_loss(const ModelParams& params, const CatsConfig& mcfg, const WindowDataset& ds,
               LossKind kind, std::size_t batch_positions) {
    NoGradGuard no_grad;
    double acc = 0;
    std::size_t total = 0;
    std::vector<std::size_t> positions(ds.positions());
    std::iota(positions.begin(), positions.end(), std::size_t(0));
    ForwardOptions opt;  // eval mode
    for (std::size_t b = 0; b < positions.size(); b += batch_positions) {
        const std::size_t e = std::min(positions.size(), b + batch_positions);
        Batch batch = assemble(ds, std::span<const std::size_t>(positions.data() + b, e - b));
        Tensor pred = forward(batch.x, batch.channel_ids, params, mcfg, opt);
        Tensor loss = apply_loss(kind, pred, batch.target);
        acc += double(loss.item()) * double(pred.size());
        total += pred.size();
    }
    return total ? Real(acc / double(total)) : Real(0);
}

}  // namespace

FitResult fit(ModelParams& params, const CatsConfig& model_cfg, const WindowDataset& train,
              const WindowDataset& val, const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("fit: training dataset is empty");

    FitResult result;
    result.best_params = params.clone();
    result.best_val = std::numeric_limits<Real>::infinity();

    auto trainable = params.all();
    AdamState adam(trainable);
    Rng shuffle_rng(splitmix64(cfg.seed));
    Rng mask_rng(splitmix64(cfg.seed ^ 0x6d61736bULL));

    std::vector<std::size_t> positions(train.positions());
    std::iota(positions.begin(), positions.end(), std::size_t(0));

    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.shuffle) std::shuffle(positions.begin(), positions.end(), shuffle_rng);

        double acc = 0;
        std::size_t total = 0;
        std::size_t batch_idx = 0;
        for (std::size_t b = 0; b < positions.size(); b += cfg.batch_size, ++batch_idx) {
            const std::size_t e = std::min(positions.size(), b + cfg.batch_size);
            Batch batch = assemble(train, std::span<const std::size_t>(positions.data() + b, e - b));
            ForwardOptions opt;
            opt.train = true;
            opt.rng = &mask_rng;
            Tensor pred = forward(batch.x, batch.channel_ids, params, model_cfg, opt);
            Tensor loss = apply_loss(cfg.loss, pred, batch.target);
            if (!std::isfinite(loss.item()))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_idx));
            loss.backward();
            if (cfg.clip_norm > 0) clip_gradients(trainable, cfg.clip_norm);
            adam_step(trainable, adam, cfg.learning_rate);
            acc += double(loss.item()) * double(pred.size());
            total += pred.size();
        }
        const Real train_loss = Real(acc / double(total));
        const Real val_loss = val.empty()
                                  ? std::numeric_limits<Real>::quiet_NaN()
                                  : eval_loss(params, model_cfg, val, cfg.loss, cfg.batch_size);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, train_loss, val_loss, secs});

        const Real score = val.empty() ? train_loss : val_loss;
        if (score < result.best_val) {
            result.best_val = score;
            result.best_epoch = epoch;
            result.best_params = params.clone();
            stale = 0;
        } else {
            ++stale;
            if (cfg.patience > 0 && stale >= cfg.patience) break;
        }
    }
    return result;
}

void FitResult::write_log_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    out << "epoch,train_loss,val_loss,elapsed_seconds\n";
    char buf[128];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.6f\n", e.epoch, double(e.train_loss),
                      double(e.val_loss), e.seconds);
        out << buf;
    }
}

MetricReport evaluate(const ModelParams& params, const CatsConfig& model_cfg,
                      const WindowDataset& ds, const EvalOptions& opt) {
    if (ds.empty()) throw std::invalid_argument("evaluate: dataset is empty");
    NoGradGuard no_grad;
    const std::size_t M = ds.channels(), T = ds.horizon();

    std::vector<double> sq_step(T, 0.0);
    double sq = 0, ab = 0, sm = 0;
    std::vector<double> sq_u(M, 0.0), ab_u(M, 0.0);  // per channel, for unscaled report
    std::vector<double> ab_ch(M, 0.0);               // per channel, for MASE
    std::size_t count = 0;

    std::vector<std::size_t> positions(ds.positions());
    std::iota(positions.begin(), positions.end(), std::size_t(0));
    ForwardOptions fopt;  // eval mode
    for (std::size_t b = 0; b < positions.size(); b += opt.batch_positions) {
        const std::size_t e = std::min(positions.size(), b + opt.batch_positions);
        const std::size_t n_pos = e - b;
        std::vector<Real> x(n_pos * M * ds.input_len()), y(n_pos * M * T);
        std::vector<std::size_t> ch(n_pos * M);
        std::size_t r = 0;
        for (std::size_t pi = b; pi < e; ++pi)
            for (std::size_t c = 0; c < M; ++c, ++r) {
                const auto in = ds.input(c, positions[pi]);
                const auto tg = ds.target(c, positions[pi]);
                std::copy(in.begin(), in.end(), x.begin() + r * ds.input_len());
                std::copy(tg.begin(), tg.end(), y.begin() + r * T);
                ch[r] = c;
            }
        Tensor xt = Tensor::from_vector({n_pos * M, ds.input_len()}, std::move(x));
        Tensor pred = forward(xt, ch, params, model_cfg, fopt);
        const auto p = pred.data();
        for (std::size_t row = 0; row < n_pos * M; ++row) {
            const std::size_t c = ch[row];
            for (std::size_t t = 0; t < T; ++t) {
                const double pv = double(p[row * T + t]);
                const double tv = double(y[row * T + t]);
                const double d = pv - tv;
                sq += d * d;
                ab += std::abs(d);
                sq_step[t] += d * d;
                ab_ch[c] += std::abs(d);
                const double denom = std::abs(pv) + std::abs(tv);
                if (denom > 0) sm += std::abs(d) / denom;
                if (opt.scaler) {
                    const double du = d * double(opt.scaler->stddev[c]);
                    sq_u[c] += du * du;
                    ab_u[c] += std::abs(du);
                }
            }
        }
        count += n_pos * M * T;
    }

    MetricReport rep;
    rep.window_count = ds.num_examples();
    rep.mse = Real(sq / double(count));
    rep.mae = Real(ab / double(count));
    rep.smape = Real(200.0 * sm / double(count));
    rep.per_step_mse.resize(T);
    const double per_step_n = double(count) / double(T);
    for (std::size_t t = 0; t < T; ++t) rep.per_step_mse[t] = Real(sq_step[t] / per_step_n);
    if (opt.scaler) {
        double su = 0, au = 0;
        for (std::size_t c = 0; c < M; ++c) {
            su += sq_u[c];
            au += ab_u[c];
        }
        rep.mse_unscaled = Real(su / double(count));
        rep.mae_unscaled = Real(au / double(count));
    }
    if (opt.insample) {
        if (opt.insample->channels() != M)
            throw std::invalid_argument("evaluate: in-sample channel count mismatch");
        const std::size_t per_ch = count / M;
        double ratio_sum = 0;
        for (std::size_t c = 0; c < M; ++c) {
            const auto& hist = opt.insample->values[c];
            if (hist.size() <= opt.season)
                throw std::invalid_argument("evaluate: in-sample shorter than season");
            double denom = 0;
            for (std::size_t t = opt.season; t < hist.size(); ++t)
                denom += std::abs(double(hist[t] - hist[t - opt.season]));
            denom /= double(hist.size() - opt.season);
            if (denom == 0)
                throw std::invalid_argument("evaluate: seasonal-naive denominator is zero for channel " +
                                            std::to_string(c));
            ratio_sum += (ab_ch[c] / double(per_ch)) / denom;
        }
        rep.mase = Real(ratio_sum / double(M));
    }
    if (opt.baseline_smape && opt.baseline_mase) {
        if (!rep.mase) throw std::invalid_argument("evaluate: OWA requires MASE (provide insample)");
        rep.owa = owa(rep.smape, *rep.mase, *opt.baseline_smape, *opt.baseline_mase);
    }
    return rep;
}

}  // namespace cats
