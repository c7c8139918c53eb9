#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cats/ops.hpp"
#include "cats/trainer.hpp"
#include "fd_check.hpp"

using namespace cats;

namespace {

CatsConfig tiny_config() {
    CatsConfig cfg;
    cfg.input_length = 8;
    cfg.horizon = 4;
    cfg.patch_length = 2;
    cfg.end_padding = false;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ffn_width = 12;
    return cfg;
}

SeriesTable wave_table(std::size_t steps, std::size_t channels = 1) {
    SeriesTable t;
    t.values.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        t.channel_names.push_back("ch" + std::to_string(c));
        for (std::size_t i = 0; i < steps; ++i)
            t.values[c].push_back(Real(std::sin(0.37 * double(i + 3 * c)) +
                                       0.2 * std::cos(1.3 * double(i))));
    }
    return t;
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
    const auto ta = a.all(), tb = b.all();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].shape() != tb[i].shape()) return false;
        for (std::size_t j = 0; j < ta[i].size(); ++j)
            if (ta[i].data()[j] != tb[i].data()[j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Tensor w = Tensor::from_vector({3}, {Real(1), Real(2), Real(3)}, true).set_name("w");
    std::vector<Tensor> params{w};
    AdamState state(params);
    w.grad_mut();  // populated with zeros
    adam_step(params, state, Real(0.1));
    CHECK(w.data()[0] == Real(1));
    CHECK(w.data()[1] == Real(2));
    CHECK(w.data()[2] == Real(3));
    CHECK(state.step_count() == 1);
}

TEST_CASE("adam: hand-computed first step on a scalar") {
    Tensor w = Tensor::from_vector({1}, {Real(0)}, true).set_name("w");
    std::vector<Tensor> params{w};
    AdamState state(params);
    w.grad_mut()[0] = Real(1);
    adam_step(params, state, Real(0.1));
    // bias-corrected mhat = 1, vhat = 1 -> step = lr / (1 + eps)
    CHECK(double(w.data()[0]) == doctest::Approx(-0.1).epsilon(1e-7));
    const bool grad_left = w.has_grad() && w.grad()[0] != Real(0);
    CHECK_FALSE(grad_left);  // grads zeroed afterwards
}

TEST_CASE("adam: missing gradient names the parameter") {
    Tensor w = Tensor::from_vector({1}, {Real(0)}, true).set_name("layer0.wq");
    std::vector<Tensor> params{w};
    AdamState state(params);
    CHECK_THROWS_WITH_AS(adam_step(params, state, Real(0.1)), doctest::Contains("layer0.wq"),
                         std::runtime_error);
}

TEST_CASE("adam: two seeded runs produce bit-identical parameters after 10 steps") {
    auto run = [] {
        Rng rng(77);
        Tensor w = fd::random_tensor({4, 4}, rng).set_name("w");
        Tensor x = fd::random_tensor({4, 4}, rng, false);
        std::vector<Tensor> params{w};
        AdamState state(params);
        for (int i = 0; i < 10; ++i) {
            Tensor loss = ops::mse_loss(ops::matmul(x, w), x);
            loss.backward();
            adam_step(params, state, Real(1e-2));
        }
        return std::vector<Real>(w.data().begin(), w.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("fit: zero epochs returns initial parameters and an empty log") {
    CatsConfig cfg = tiny_config();
    Rng rng(1);
    ModelParams params = ModelParams::init(cfg, rng);
    ModelParams before = params.clone();
    const WindowDataset ds = WindowDataset::make(wave_table(64), 8, 4);

    TrainConfig tcfg;
    tcfg.epochs = 0;
    const FitResult res = fit(params, cfg, ds, ds, tcfg);
    CHECK(res.log.empty());
    CHECK(params_bitwise_equal(params, before));
    CHECK(params_bitwise_equal(res.best_params, before));
}

TEST_CASE("fit: loss decreases on an overfit-one-batch problem within 50 steps") {
    CatsConfig cfg = tiny_config();
    Rng rng(2);
    ModelParams params = ModelParams::init(cfg, rng);
    const WindowDataset ds = WindowDataset::make(wave_table(12), 8, 4);  // single window
    REQUIRE(ds.positions() == 1);

    TrainConfig tcfg;
    tcfg.epochs = 50;
    tcfg.batch_size = 1;
    tcfg.learning_rate = Real(1e-2);
    const FitResult res = fit(params, cfg, ds, ds, tcfg);
    REQUIRE(res.log.size() == 50);
    CHECK(res.log.back().train_loss < res.log.front().train_loss);
    CHECK(res.log.back().train_loss < Real(0.05));
}

TEST_CASE("fit: identical seeds give identical loss sequences; masking active") {
    CatsConfig cfg = tiny_config();
    cfg.mask_p_min = Real(0.1);
    cfg.mask_p_max = Real(0.7);
    const WindowDataset train = WindowDataset::make(wave_table(80), 8, 4);
    const WindowDataset val = WindowDataset::make(wave_table(40), 8, 4);

    auto run = [&] {
        Rng rng(2021);
        ModelParams params = ModelParams::init(cfg, rng);
        TrainConfig tcfg;
        tcfg.epochs = 5;
        tcfg.batch_size = 8;
        tcfg.seed = 2021;
        return fit(params, cfg, train, val, tcfg);
    };
    const FitResult a = run();
    const FitResult b = run();
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].val_loss == b.log[i].val_loss);
    }
    CHECK(params_bitwise_equal(a.best_params, b.best_params));
}

TEST_CASE("fit: early stopping respects patience and keeps the best checkpoint") {
    CatsConfig cfg = tiny_config();
    const WindowDataset train = WindowDataset::make(wave_table(60), 8, 4);
    const WindowDataset val = WindowDataset::make(wave_table(30), 8, 4);
    Rng rng(3);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainConfig tcfg;
    tcfg.epochs = 100;
    tcfg.patience = 3;
    tcfg.learning_rate = Real(0.5);  // aggressively bad; validation stalls fast
    const FitResult res = fit(params, cfg, train, val, tcfg);
    CHECK(res.log.size() < 100);
    CHECK(res.best_epoch >= 1);
    Real best = std::numeric_limits<Real>::infinity();
    for (const auto& e : res.log) best = std::min(best, e.val_loss);
    CHECK(res.best_val == best);
}

TEST_CASE("fit: non-finite loss aborts with coordinates") {
    CatsConfig cfg = tiny_config();
    const WindowDataset ds = WindowDataset::make(wave_table(40), 8, 4);
    Rng rng(4);
    ModelParams params = ModelParams::init(cfg, rng);
    for (Real& v : params.out_proj_w.data_mut()) v = std::numeric_limits<Real>::quiet_NaN();
    TrainConfig tcfg;
    tcfg.epochs = 1;
    CHECK_THROWS_WITH_AS(fit(params, cfg, ds, ds, tcfg), doctest::Contains("epoch 1"), NumericError);
}

TEST_CASE("fit: smape loss trains to finite losses") {
    CatsConfig cfg = tiny_config();
    const WindowDataset ds = WindowDataset::make(wave_table(60), 8, 4);
    Rng rng(21);
    ModelParams params = ModelParams::init(cfg, rng);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.loss = LossKind::Smape;
    const FitResult res = fit(params, cfg, ds, ds, tcfg);
    REQUIRE(res.log.size() == 2);
    for (const auto& e : res.log) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.train_loss >= Real(0));
        CHECK(e.train_loss <= Real(200));
    }
}

TEST_CASE("fit: channel folding with per-channel queries") {
    CatsConfig cfg = tiny_config();
    cfg.query_sharing_across_channels = false;
    cfg.channels = 3;
    cfg.mask_p_min = Real(0.1);
    cfg.mask_p_max = Real(0.5);
    const WindowDataset ds = WindowDataset::make(wave_table(60, 3), 8, 4);
    Rng rng(22);
    ModelParams params = ModelParams::init(cfg, rng);
    const Tensor q_before = params.queries.clone();
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 4;
    const FitResult res = fit(params, cfg, ds, ds, tcfg);
    REQUIRE(res.log.size() == 2);
    CHECK(std::isfinite(res.log.back().train_loss));
    // every channel's query block received updates
    const std::size_t n_q = params.queries.rows() / 3;
    for (std::size_t c = 0; c < 3; ++c) {
        bool moved = false;
        for (std::size_t r = 0; r < n_q; ++r)
            for (std::size_t j = 0; j < params.queries.cols(); ++j)
                moved = moved || params.queries.at(c * n_q + r, j) != q_before.at(c * n_q + r, j);
        CHECK(moved);
    }
}

TEST_CASE("evaluate: a model reproducing the target exactly scores zero") {
    CatsConfig cfg = tiny_config();
    Rng rng(5);
    ModelParams params = ModelParams::init(cfg, rng);

    // build a series whose non-overlapping window targets are exactly the
    // model's own predictions for the preceding inputs
    const std::size_t L = 8, T = 4, blocks = 6;
    SeriesTable t;
    t.channel_names = {"x"};
    t.values.resize(1);
    Rng drng(6);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        std::vector<Real> input(L);
        for (Real& v : input) v = Real(dist(drng));
        Tensor x = Tensor::from_vector({1, L}, input);
        NoGradGuard g;
        Tensor pred = forward(x, {}, params, cfg, {});
        for (Real v : input) t.values[0].push_back(v);
        for (Real v : pred.data()) t.values[0].push_back(v);
    }
    const WindowDataset ds = WindowDataset::make(t, L, T, L + T);  // stride L+T
    REQUIRE(ds.positions() == blocks);

    const MetricReport rep = evaluate(params, cfg, ds);
    CHECK(rep.mse == Real(0));
    CHECK(rep.mae == Real(0));
    CHECK(rep.smape == Real(0));
    CHECK(rep.window_count == blocks);
}

TEST_CASE("evaluate: constant-zero predictor scores the target variance") {
    CatsConfig cfg = tiny_config();
    Rng rng(7);
    ModelParams params = ModelParams::init(cfg, rng);
    for (Real& v : params.out_proj_w.data_mut()) v = Real(0);
    for (Real& v : params.out_proj_b.data_mut()) v = Real(0);

    const WindowDataset ds = WindowDataset::make(wave_table(100, 2), 8, 4);
    const MetricReport rep = evaluate(params, cfg, ds);

    double sq = 0, mean = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < ds.channels(); ++c)
        for (std::size_t p = 0; p < ds.positions(); ++p)
            for (Real v : ds.target(c, p)) {
                mean += double(v);
                sq += double(v) * double(v);
                ++n;
            }
    const double second_moment = sq / double(n);
    CHECK(double(rep.mse) == doctest::Approx(second_moment).epsilon(1e-12));
    CHECK(rep.window_count == ds.positions() * 2);
    CHECK(rep.per_step_mse.size() == 4);

    // evaluation is side-effect free
    ModelParams before = params.clone();
    evaluate(params, cfg, ds);
    CHECK(params_bitwise_equal(params, before));
}

TEST_CASE("evaluate: empty dataset is an error") {
    CatsConfig cfg = tiny_config();
    Rng rng(8);
    ModelParams params = ModelParams::init(cfg, rng);
    CHECK_THROWS_AS(evaluate(params, cfg, WindowDataset{}), std::invalid_argument);
}

TEST_CASE("evaluate: MASE and OWA plumbing") {
    CatsConfig cfg = tiny_config();
    Rng rng(9);
    ModelParams params = ModelParams::init(cfg, rng);
    const SeriesTable hist = wave_table(64);
    const WindowDataset ds = WindowDataset::make(wave_table(48), 8, 4);

    EvalOptions opt;
    opt.insample = &hist;
    opt.season = 4;
    MetricReport rep = evaluate(params, cfg, ds, opt);
    REQUIRE(rep.mase.has_value());
    CHECK(*rep.mase > Real(0));

    opt.baseline_smape = rep.smape * 2;
    opt.baseline_mase = *rep.mase * 2;
    rep = evaluate(params, cfg, ds, opt);
    REQUIRE(rep.owa.has_value());
    CHECK(double(*rep.owa) == doctest::Approx(0.5).epsilon(1e-12));
}
