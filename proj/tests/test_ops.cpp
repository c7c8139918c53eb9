#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cats/ops.hpp"
#include "fd_check.hpp"

using namespace cats;

TEST_CASE("matmul identity and hand cases") {
    Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor r = ops::matmul(eye, m);
    CHECK(std::vector<Real>(r.data().begin(), r.data().end()) == std::vector<Real>{1, 2, 3, 4});

    Tensor a = Tensor::from_vector({1, 2}, {1, 2});
    Tensor b = Tensor::from_vector({2, 1}, {3, 4});
    CHECK(ops::matmul(a, b).item() == Real(11));
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        ops::matmul(a, b);
        FAIL("expected dimension error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences on 3x4 * 4x2") {
    Rng rng(5);
    Tensor a = fd::random_tensor({3, 4}, rng);
    Tensor b = fd::random_tensor({4, 2}, rng);
    auto res = fd::check_gradients({a, b}, [&] { return ops::sum(ops::matmul(a, b)); });
    INFO(res.detail);
    CHECK(res.ok);
}

TEST_CASE("softmax hand values and shift invariance") {
    Tensor u = ops::softmax(Tensor::from_vector({1, 3}, {0, 0, 0}));
    for (Real v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor s = ops::softmax(Tensor::from_vector({1, 2}, {1, 2}));
    CHECK(s.data()[0] == doctest::Approx(0.26894142136999512).epsilon(1e-10));
    CHECK(s.data()[1] == doctest::Approx(0.73105857863000487).epsilon(1e-10));

    Rng rng(6);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = fd::random_tensor({3, 7}, rng, false);
        std::uniform_real_distribution<double> cd(-30.0, 30.0);
        const Real c = Real(cd(rng));
        std::vector<Real> shifted(x.data().begin(), x.data().end());
        for (Real& v : shifted) v += c;
        Tensor y0 = ops::softmax(x);
        Tensor y1 = ops::softmax(Tensor::from_vector(x.shape(), std::move(shifted)));
        for (std::size_t i = 0; i < y0.size(); ++i)
            CHECK(std::abs(y0.data()[i] - y1.data()[i]) <= 1e-12);
        // rows sum to 1, all entries in (0,1)
        for (std::size_t r = 0; r < 3; ++r) {
            Real sum = 0;
            for (std::size_t j = 0; j < 7; ++j) {
                const Real v = y0.at(r, j);
                CHECK(v > Real(0));
                CHECK(v < Real(1));
                sum += v;
            }
            CHECK(std::abs(sum - Real(1)) <= 1e-9);
        }
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = fd::random_tensor({2, 5}, rng);
        Tensor w = fd::random_tensor({2, 5}, rng, false);  // weight the outputs
        auto res = fd::check_gradients({x}, [&] { return ops::sum(ops::mul(ops::softmax(x), w)); });
        INFO(res.detail);
        CHECK(res.ok);
    }
}

TEST_CASE("layer norm hand cases") {
    Tensor gamma = Tensor::full({4}, Real(1));
    Tensor beta = Tensor::full({4}, Real(0));
    Tensor c = ops::layer_norm(Tensor::full({2, 4}, Real(3)), gamma, beta);
    for (Real v : c.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Tensor g2 = Tensor::full({2}, Real(1));
    Tensor b2 = Tensor::full({2}, Real(0));
    Tensor r = ops::layer_norm(Tensor::from_vector({1, 2}, {1, 3}), g2, b2, Real(0));
    CHECK(r.data()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer norm gradient matches finite differences on random 2x5") {
    Rng rng(8);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = fd::random_tensor({2, 5}, rng);
        Tensor gamma = fd::random_tensor({5}, rng);
        Tensor beta = fd::random_tensor({5}, rng);
        Tensor w = fd::random_tensor({2, 5}, rng, false);
        auto res = fd::check_gradients({x, gamma, beta}, [&] {
            return ops::sum(ops::mul(ops::layer_norm(x, gamma, beta), w));
        });
        INFO(res.detail);
        CHECK(res.ok);
    }
}

TEST_CASE("geglu zero and scalar hand case") {
    Tensor x0 = Tensor::zeros({1, 1});
    Tensor w = Tensor::full({1, 1}, Real(1));
    Tensor b = Tensor::zeros({1});
    CHECK(ops::geglu(x0, w, b, w, b).item() == Real(0));  // GELU(0) = 0

    Tensor x1 = Tensor::full({1, 1}, Real(1));
    // tanh-approx GELU(1) * 1, evaluated independently
    const double u = 0.7978845608028654 * (1.0 + 0.044715);
    const double expect = 0.5 * (1.0 + std::tanh(u));
    CHECK(double(ops::geglu(x1, w, b, w, b).item()) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(double(ops::geglu(x1, w, b, w, b).item()) == doctest::Approx(0.8412).epsilon(1e-4));
}

TEST_CASE("geglu gradient matches finite differences") {
    Rng rng(9);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = fd::random_tensor({3, 4}, rng);
        Tensor wg = fd::random_tensor({4, 6}, rng);
        Tensor bg = fd::random_tensor({6}, rng);
        Tensor wv = fd::random_tensor({4, 6}, rng);
        Tensor bv = fd::random_tensor({6}, rng);
        auto res = fd::check_gradients({x, wg, bg, wv, bv},
                                       [&] { return ops::sum(ops::geglu(x, wg, bg, wv, bv)); });
        INFO(res.detail);
        CHECK(res.ok);
    }
}

TEST_CASE("elementwise and structural ops match finite differences") {
    Rng rng(10);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor a = fd::random_tensor({4, 3}, rng);
        Tensor b = fd::random_tensor({4, 3}, rng);
        Tensor bias = fd::random_tensor({3}, rng);
        Tensor srow = fd::random_tensor({4}, rng);
        Tensor tile = fd::random_tensor({2, 3}, rng);

        auto run = [&](const char* what, std::vector<Tensor> ps, std::function<Tensor()> fn) {
            auto res = fd::check_gradients(std::move(ps), fn);
            INFO(what << ": " << res.detail);
            CHECK(res.ok);
        };
        run("add", {a, b}, [&] { return ops::sum(ops::add(a, b)); });
        run("sub", {a, b}, [&] { return ops::mean(ops::sub(a, b)); });
        run("mul", {a, b}, [&] { return ops::sum(ops::mul(a, b)); });
        run("scale", {a}, [&] { return ops::sum(ops::scale(a, Real(2.5))); });
        run("add_bias", {a, bias}, [&] { return ops::sum(ops::mul(ops::add_bias(a, bias), b)); });
        run("scale_rows", {a, srow}, [&] { return ops::sum(ops::mul(ops::scale_rows(a, srow), b)); });
        run("add_block_tiled", {a, tile},
            [&] { return ops::sum(ops::mul(ops::add_block_tiled(a, tile), b)); });
        Tensor gather_w = fd::random_tensor({4, 3}, rng, false);
        run("gather_rows", {a}, [&] {
            return ops::sum(ops::mul(ops::gather_rows(a, {1, 3, 0, 1}), gather_w));
        });
        run("reshape+slice", {a}, [&] {
            return ops::sum(ops::slice_cols(ops::reshape(a, {2, 6}), 1, 5));
        });
        run("gelu", {a}, [&] { return ops::sum(ops::mul(ops::gelu(a), b)); });
    }
}

TEST_CASE("loss ops: values and gradients") {
    Tensor p = Tensor::from_vector({2}, {0, 0});
    Tensor t = Tensor::from_vector({2}, {1, 3});
    CHECK(ops::mse_loss(p, t).item() == Real(5));

    Rng rng(12);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor pred = fd::random_tensor({3, 4}, rng);
        Tensor targ = fd::random_tensor({3, 4}, rng, false);
        auto res = fd::check_gradients({pred}, [&] { return ops::mse_loss(pred, targ); });
        INFO(res.detail);
        CHECK(res.ok);
        // keep smape away from its |.| kinks so central differences are valid
        Tensor pred2 = Tensor::from_vector({6}, fd::random_values(6, rng, 1.0, 2.0));
        pred2.set_requires_grad(true);
        Tensor targ2 = Tensor::from_vector({6}, fd::random_values(6, rng, 3.0, 4.0));
        auto res2 = fd::check_gradients({pred2}, [&] { return ops::smape_loss(pred2, targ2); });
        INFO(res2.detail);
        CHECK(res2.ok);
    }
}

TEST_CASE("dropout semantics") {
    Rng rng(13);
    Tensor x = fd::random_tensor({8, 8}, rng);
    Tensor eval_out = ops::dropout(x, Real(0.5), rng, false);
    CHECK(eval_out.data().data() == x.data().data());  // identity pass-through

    Tensor out = ops::dropout(x, Real(0.5), rng, true);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.data()[i] == Real(0))
            ++zeros;
        else
            CHECK(out.data()[i] == doctest::Approx(x.data()[i] * 2).epsilon(1e-12));
    }
    CHECK(zeros > 8);
    CHECK(zeros < 56);

    // backward passes the same mask
    Tensor loss = ops::sum(out);
    loss.backward();
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(x.grad()[i] == (out.data()[i] == Real(0) ? Real(0) : Real(2)));
}

TEST_CASE("sdpa gradient matches finite differences") {
    Rng rng(14);
    ops::SdpaSpec spec;
    spec.batch = 2;
    spec.heads = 2;
    spec.n_q = 3;
    spec.n_kv = 4;
    for (int rep = 0; rep < 5; ++rep) {
        Tensor q = fd::random_tensor({spec.batch * spec.n_q, 8}, rng);
        Tensor k = fd::random_tensor({spec.batch * spec.n_kv, 8}, rng);
        Tensor v = fd::random_tensor({spec.batch * spec.n_kv, 8}, rng);
        Tensor w = fd::random_tensor({spec.batch * spec.n_q, 8}, rng, false);
        auto res = fd::check_gradients({q, k, v},
                                       [&] { return ops::sum(ops::mul(ops::sdpa(q, k, v, spec), w)); });
        INFO(res.detail);
        CHECK(res.ok);
    }
}

TEST_CASE("sdpa probabilities: rows sum to 1 and capture is side-effect free") {
    Rng rng(15);
    ops::SdpaSpec spec;
    spec.batch = 1;
    spec.heads = 2;
    spec.n_q = 4;
    spec.n_kv = 5;
    Tensor q = fd::random_tensor({4, 8}, rng, false);
    Tensor k = fd::random_tensor({5, 8}, rng, false);
    Tensor v = fd::random_tensor({5, 8}, rng, false);
    std::vector<Real> probs;
    Tensor out1 = ops::sdpa(q, k, v, spec, &probs);
    Tensor out2 = ops::sdpa(q, k, v, spec);
    CHECK(std::vector<Real>(out1.data().begin(), out1.data().end()) ==
          std::vector<Real>(out2.data().begin(), out2.data().end()));
    CHECK(probs.size() == 2 * 4 * 5);
    for (std::size_t row = 0; row < 2 * 4; ++row) {
        Real sum = 0;
        for (std::size_t j = 0; j < 5; ++j) sum += probs[row * 5 + j];
        CHECK(std::abs(sum - Real(1)) <= 1e-9);
    }
}

TEST_CASE("composite gradient: mse over a tiny linear model") {
    Rng rng(16);
    Tensor x = fd::random_tensor({4, 3}, rng, false);
    Tensor w = fd::random_tensor({3, 2}, rng);
    Tensor b = fd::random_tensor({2}, rng);
    Tensor y = fd::random_tensor({4, 2}, rng, false);
    auto res = fd::check_gradients(
        {w, b}, [&] { return ops::mse_loss(ops::linear(x, w, b), y); }, Real(1e-5), Real(1e-3));
    INFO(res.detail);
    CHECK(res.ok);
}
