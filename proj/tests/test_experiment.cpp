#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "cats/experiment.hpp"

using namespace cats;

namespace {

std::string write_config(const char* name, const std::string& body) {
    const std::string path = std::string("/tmp/cats_test_") + name + ".ini";
    std::ofstream out(path);
    out << body;
    return path;
}

const char* kToyBody = R"(# toy experiment
[dataset]
kind = synthetic
tau = 24
shock_period = 8
shock_magnitude = 5.0
length = 960
data_seed = 7

[split]
train_ratio = 0.6
val_ratio = 0.2
test_ratio = 0.2

[model]
input_length = 48
horizon = 72
patch_length = 4
end_padding = false
embed_dim = 32
heads = 2
layers = 1
ffn_width = 64
mask_p_min = 0.1
mask_p_max = 0.7

[train]
learning_rate = 1e-3
batch_size = 32
epochs = 3
seed = 2021

[output]
dir = /tmp/cats_test_runs
name = toy
)";

}  // namespace

TEST_CASE("experiment config parses sections, values, defaults") {
    const auto path = write_config("ok", kToyBody);
    ExperimentConfig cfg = ExperimentConfig::load(path);
    CHECK(cfg.dataset.kind == DatasetBlock::Kind::Synthetic);
    CHECK(cfg.dataset.synthetic.tau == 24);
    CHECK(cfg.dataset.synthetic.shock_magnitude == Real(5));
    CHECK(cfg.model.input_length == 48);
    CHECK(cfg.model.horizon == 72);
    CHECK(cfg.model.mask_p_max == Real(0.7));
    CHECK(cfg.model.kinds() == std::vector<AttentionKind>{AttentionKind::Cross});
    CHECK(cfg.train.seed == 2021);
    CHECK(cfg.train.loss == LossKind::Mse);
    CHECK(cfg.split.spec.context_lookback == false);  // synthetic default
    CHECK(cfg.output.run_dir() == "/tmp/cats_test_runs/toy");
}

TEST_CASE("missing file and malformed lines raise ConfigError") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::load("/tmp/cats_no_such.ini"),
                         doctest::Contains("/tmp/cats_no_such.ini"), ConfigError);

    const auto bad = write_config("badline", "[dataset]\nkind synthetic\n");
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(bad), doctest::Contains("key=value"), ConfigError);

    const auto nosec = write_config("nosec", "kind = synthetic\n");
    CHECK_THROWS_AS(ExperimentConfig::load(nosec), ConfigError);
}

TEST_CASE("exactly one of csv and synthetic") {
    const auto both = write_config("both", R"(
[dataset]
kind = csv
path = /tmp/x.csv
tau = 24
)");
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(both), doctest::Contains("exactly one"), ConfigError);

    const auto neither = write_config("neither", "[dataset]\nkind = csv\n");
    CHECK_THROWS_AS(ExperimentConfig::load(neither), ConfigError);
}

TEST_CASE("csv dataset defaults context lookback on; explicit flag wins") {
    const auto csv_cfg = write_config("csvcfg", R"(
[dataset]
kind = csv
path = /tmp/cats_test_exp.csv
[model]
input_length = 4
horizon = 2
patch_length = 2
embed_dim = 8
heads = 2
layers = 1
)");
    ExperimentConfig cfg = ExperimentConfig::load(csv_cfg);
    CHECK(cfg.split.spec.context_lookback == true);

    const auto off = write_config("csvoff", R"(
[dataset]
kind = csv
path = /tmp/cats_test_exp.csv
[split]
context_lookback = false
[model]
input_length = 4
horizon = 2
patch_length = 2
embed_dim = 8
heads = 2
layers = 1
)");
    CHECK(ExperimentConfig::load(off).split.spec.context_lookback == false);
}

TEST_CASE("split presets pin the community boundaries") {
    const auto etth = write_config("etth", R"(
[dataset]
kind = synthetic
length = 20000
[split]
preset = etth
[model]
input_length = 48
horizon = 24
patch_length = 12
embed_dim = 8
heads = 2
layers = 1
)");
    ExperimentConfig cfg = ExperimentConfig::load(etth);
    CHECK(cfg.split.spec.train_steps == 8640);
    CHECK(cfg.split.spec.val_steps == 2880);
    CHECK(cfg.split.spec.test_steps == 2880);

    const auto bad = write_config("badpreset", R"(
[dataset]
kind = synthetic
[split]
preset = weekly
)");
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(bad), doctest::Contains("preset"), ConfigError);
}

TEST_CASE("prepare_data wires channels, splits, scaler, windows") {
    const auto path = write_config("prep", kToyBody);
    ExperimentConfig cfg = ExperimentConfig::load(path);
    PreparedData d = prepare_data(cfg);
    CHECK(cfg.model.channels == 1);
    CHECK(d.raw.steps() == 960);
    CHECK(d.train.positions() == 576 - 48 - 72 + 1);
    CHECK(d.val.positions() == 192 - 48 - 72 + 1);
    CHECK(d.test.positions() == 192 - 48 - 72 + 1);

    // train split standardized by its own scaler
    Real mean = 0;
    for (Real v : d.train_scaled.values[0]) mean += v;
    mean /= Real(d.train_scaled.steps());
    CHECK(std::abs(mean) < 1e-9);

    // invalid model config inside a valid file is a ConfigError
    const auto badmodel = write_config("badmodel", R"(
[dataset]
kind = synthetic
[model]
embed_dim = 10
heads = 4
)");
    CHECK_THROWS_AS(ExperimentConfig::load(badmodel), ConfigError);
}
