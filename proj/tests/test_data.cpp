#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cats/data.hpp"

using namespace cats;

namespace {

std::string temp_path(const char* name) { return std::string("/tmp/cats_test_") + name; }

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("load_csv parses an ETT-shaped file with 7 value columns") {
    const std::string path = temp_path("ett.csv");
    write_file(path,
               "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
               "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.34,30.531\n"
               "2016-07-01 00:15:00,5.76,2.076,1.492,0.426,4.264,1.401,30.46\n");
    const SeriesTable t = load_csv(path, {true, "15min"});
    CHECK(t.channels() == 7);
    CHECK(t.steps() == 2);
    CHECK(t.channel_names[6] == "OT");
    CHECK(t.values[0][1] == doctest::Approx(5.76));
    CHECK(t.frequency == "15min");
}

TEST_CASE("load_csv header-only file gives zero steps") {
    const std::string path = temp_path("empty.csv");
    write_file(path, "date,a,b\n");
    const SeriesTable t = load_csv(path, {true, ""});
    CHECK(t.channels() == 2);
    CHECK(t.steps() == 0);
}

TEST_CASE("csv round trip reproduces the matrix exactly") {
    SeriesTable t;
    t.channel_names = {"a", "b"};
    t.values = {{Real(1.25), Real(-3.0000001), Real(0.1)}, {Real(2), Real(4.5e-10), Real(-7)}};
    const std::string path = temp_path("round.csv");
    save_csv(t, path);
    const SeriesTable r = load_csv(path, {false, ""});
    CHECK(r.channel_names == t.channel_names);
    CHECK(r.values == t.values);
}

TEST_CASE("load_csv errors carry row and column locations") {
    const std::string bad = temp_path("bad.csv");
    write_file(bad, "date,a\n2020,1\n2021,oops\n");
    CHECK_THROWS_WITH_AS(load_csv(bad, {true, ""}), doctest::Contains("row 2"),
                         std::invalid_argument);

    const std::string ragged = temp_path("ragged.csv");
    write_file(ragged, "date,a,b\n2020,1,2\n2021,3\n");
    CHECK_THROWS_WITH_AS(load_csv(ragged, {true, ""}), doctest::Contains("row 2"),
                         std::invalid_argument);

    const std::string missing = temp_path("missing.csv");
    write_file(missing, "date,a,b\n2020,1,\n");
    CHECK_THROWS_WITH_AS(load_csv(missing, {true, ""}), doctest::Contains("missing value"),
                         std::invalid_argument);

    CHECK_THROWS_AS(load_csv(temp_path("nonexistent.csv"), {true, ""}), std::invalid_argument);
}

TEST_CASE("chronological split by ratios") {
    SeriesTable t;
    t.channel_names = {"x"};
    t.values.resize(1);
    for (int i = 0; i < 100; ++i) t.values[0].push_back(Real(i));

    SplitSpec spec;
    spec.train_ratio = 0.6;
    spec.val_ratio = 0.2;
    spec.test_ratio = 0.2;
    const Splits s = chronological_split(t, spec);
    CHECK(s.train.steps() == 60);
    CHECK(s.val.steps() == 20);
    CHECK(s.test.steps() == 20);
    CHECK(s.train.values[0][59] == Real(59));
    CHECK(s.val.values[0][0] == Real(60));
    CHECK(s.test.values[0][19] == Real(99));

    SplitSpec all_train;
    all_train.train_ratio = 1.0;
    all_train.val_ratio = 0;
    all_train.test_ratio = 0;
    const Splits s2 = chronological_split(t, all_train);
    CHECK(s2.train.steps() == 100);
    CHECK(s2.val.steps() == 0);
    CHECK(s2.test.steps() == 0);
}

TEST_CASE("ETT-hourly fixed boundaries: 12/4/4 months") {
    SeriesTable t;
    t.channel_names = {"x"};
    t.values.resize(1);
    for (int i = 0; i < 17420; ++i) t.values[0].push_back(Real(i % 97) + Real(i) * Real(1e-4));

    SplitSpec spec;
    spec.train_steps = 12 * 30 * 24;
    spec.val_steps = 4 * 30 * 24;
    spec.test_steps = 4 * 30 * 24;
    const Splits s = chronological_split(t, spec);
    CHECK(s.train.steps() == 8640);
    CHECK(s.val.steps() == 2880);
    CHECK(s.test.steps() == 2880);

    // evaluation splits borrow input context across the boundary
    SplitSpec ctx = spec;
    ctx.context_lookback = true;
    ctx.lookback = 96;
    const Splits sc = chronological_split(t, ctx);
    CHECK(sc.val.steps() == 2880 + 96);
    CHECK(sc.test.steps() == 2880 + 96);
    CHECK(sc.val.values[0][0] == t.values[0][8640 - 96]);
    CHECK(sc.train.steps() == 8640);
}

TEST_CASE("split boundary overflow errors") {
    SeriesTable t;
    t.channel_names = {"x"};
    t.values = {{1, 2, 3}};
    SplitSpec spec;
    spec.train_steps = 2;
    spec.val_steps = 1;
    spec.test_steps = 1;
    CHECK_THROWS_AS(chronological_split(t, spec), std::invalid_argument);
}

TEST_CASE("scaler: train split standardized, invertible, zero variance rejected") {
    SeriesTable t;
    t.channel_names = {"a", "b"};
    t.values.resize(2);
    Rng rng(3);
    std::normal_distribution<double> d(5.0, 3.0);
    for (int i = 0; i < 500; ++i) {
        t.values[0].push_back(Real(d(rng)));
        t.values[1].push_back(Real(2.0 * d(rng) - 20.0));
    }
    const Scaler s = Scaler::fit(t);
    const SeriesTable z = s.transform(t);
    for (std::size_t c = 0; c < 2; ++c) {
        Real mean = 0;
        for (Real v : z.values[c]) mean += v;
        mean /= Real(z.steps());
        Real var = 0;
        for (Real v : z.values[c]) var += (v - mean) * (v - mean);
        var /= Real(z.steps());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1) < 1e-9);
    }
    const SeriesTable back = s.invert(z);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < t.steps(); ++i)
            CHECK(std::abs(back.values[c][i] - t.values[c][i]) < 1e-9);

    SeriesTable flat;
    flat.channel_names = {"flat"};
    flat.values = {{Real(4), Real(4), Real(4)}};
    CHECK_THROWS_WITH_AS(Scaler::fit(flat), doctest::Contains("zero-variance"),
                         std::invalid_argument);
}

TEST_CASE("windowing: counts, boundary error, slice reproduction") {
    SeriesTable t;
    t.channel_names = {"x"};
    t.values.resize(1);
    for (int i = 0; i < 200; ++i) t.values[0].push_back(Real(i));

    CHECK_THROWS_WITH_AS(WindowDataset::make(t.slice_steps(0, 100), 48, 72),
                         doctest::Contains("too short"), std::invalid_argument);

    const WindowDataset one = WindowDataset::make(t.slice_steps(0, 120), 48, 72);
    CHECK(one.positions() == 1);

    const WindowDataset nine = WindowDataset::make(t, 96, 96);
    CHECK(nine.positions() == 9);  // 200 - 192 + 1

    // concatenating input and target reproduces the source slice
    for (std::size_t p = 0; p < nine.positions(); ++p) {
        const auto in = nine.input(0, p);
        const auto tg = nine.target(0, p);
        for (std::size_t i = 0; i < in.size(); ++i) CHECK(in[i] == t.values[0][p + i]);
        for (std::size_t i = 0; i < tg.size(); ++i) CHECK(tg[i] == t.values[0][p + 96 + i]);
    }
}

TEST_CASE("repeat signal: exact periodicity and determinism") {
    SyntheticSpec spec;
    spec.tau = 24;
    spec.length = 480;
    spec.seed = 99;
    const auto x = gen_repeat_signal(spec);
    for (std::size_t t = 0; t + 24 < x.size(); ++t) CHECK(x[t] == x[t + 24]);
    CHECK(x == gen_repeat_signal(spec));

    SyntheticSpec constant = spec;
    constant.tau = 1;
    const auto c = gen_repeat_signal(constant);
    for (Real v : c) CHECK(v == c[0]);
}

TEST_CASE("shock signal: pattern, zero magnitude, count") {
    SyntheticSpec spec;
    spec.shock_period = 8;
    spec.shock_magnitude = 5;
    spec.length = 963;
    const auto y = gen_shock_signal(spec);
    CHECK(y[0] == Real(5));
    CHECK(y[4] == Real(-5));
    CHECK(y[1] == Real(0));
    CHECK(y[8] == Real(5));
    CHECK(y[12] == Real(-5));

    std::size_t nonzero = 0;
    for (Real v : y)
        if (v != Real(0)) ++nonzero;
    const std::size_t expect = 2 * (spec.length / 8);
    CHECK(nonzero >= expect - 1);
    CHECK(nonzero <= expect + 1);

    SyntheticSpec zero = spec;
    zero.shock_magnitude = 0;
    for (Real v : gen_shock_signal(zero)) CHECK(v == Real(0));

    SyntheticSpec odd = spec;
    odd.shock_period = 7;
    CHECK_THROWS_AS(gen_shock_signal(odd), std::invalid_argument);
}

TEST_CASE("composite toy series: sum, first value, lcm period") {
    SyntheticSpec spec;
    spec.tau = 24;
    spec.shock_period = 8;
    spec.shock_magnitude = 5;
    spec.length = 480;
    spec.seed = 2021;
    const SeriesTable t = compose_toy_series(spec);
    CHECK(t.channels() == 1);
    const auto x = gen_repeat_signal(spec);
    const auto y = gen_shock_signal(spec);
    for (std::size_t i = 0; i < spec.length; ++i) CHECK(t.values[0][i] == x[i] + y[i]);
    CHECK(t.values[0][0] == x[0] + Real(5));
    // period lcm(24, 8) = 24, exactly
    for (std::size_t i = 0; i + 24 < spec.length; ++i) CHECK(t.values[0][i] == t.values[0][i + 24]);
}
