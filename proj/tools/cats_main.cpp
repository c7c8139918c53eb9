#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cats/commands.hpp"
#include "cats/common.hpp"

using namespace cats;

int main(int argc, char** argv) {
    CLI::App app{"cross-attention-only time series forecaster"};
    app.require_subcommand(1);

    commands::TrainArgs train_args;
    std::uint64_t seed_val = 0;
    std::string out_val;
    auto* train = app.add_subcommand("train", "train a model from an experiment config");
    train->add_option("--config", train_args.config_path, "experiment config file")->required();
    auto* train_seed = train->add_option("--seed", seed_val, "override the training seed");
    train->add_flag("--record-attention", train_args.record_attention,
                    "export attention-map CSVs after training");
    auto* train_out = train->add_option("--out", out_val, "override the output directory");

    commands::EvalArgs eval_args;
    std::size_t horizon_val = 0;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
    eval->add_option("checkpoint", eval_args.checkpoint_path, "checkpoint file")->required();
    eval->add_option("--config", eval_args.config_path, "experiment config file")->required();
    auto* eval_h = eval->add_option("--horizon", horizon_val, "evaluate at a shorter horizon");
    auto* eval_out = eval->add_option("--out", out_val, "override the output directory");

    commands::CountParamsArgs count_args;
    auto* count = app.add_subcommand("count-params", "print the parameter breakdown over a horizon sweep");
    count->add_option("--config", count_args.config_path, "experiment config file")->required();
    count->add_option("--horizon", count_args.horizons, "horizons to sweep (default 96 192 336 720)");

    commands::AttentionArgs attn_args;
    auto* attn = app.add_subcommand("attention", "export attention maps for one window");
    attn->add_option("checkpoint", attn_args.checkpoint_path, "checkpoint file")->required();
    attn->add_option("--config", attn_args.config_path, "experiment config file")->required();
    attn->add_option("--window", attn_args.window_index, "window index (default 0)");
    attn->add_option("--top", attn_args.top_k, "top-k pairs to report (default 2)");
    auto* attn_out = attn->add_option("--out", out_val, "override the output directory");

    commands::BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "timed training iterations and efficiency report");
    bench->add_option("--config", bench_args.config_path, "experiment config file")->required();
    bench->add_option("--iterations", bench_args.iterations, "timed iterations (default 10)");
    auto* bench_out = bench->add_option("--out", out_val, "override the output directory");

    commands::SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "write the config's synthetic series as CSV");
    synth->add_option("--config", synth_args.config_path, "experiment config file")->required();
    synth->add_option("--out", synth_args.out_path, "output CSV path")->required();

    commands::AblateArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "train attention-kind variants and tabulate results");
    ablate->add_option("--config", ablate_args.config_path, "experiment config file")->required();
    ablate->add_option("--kinds", ablate_args.kinds,
                       "';'-separated comma-lists of layer kinds (default zero/one/two self)");
    auto* ablate_seed = ablate->add_option("--seed", seed_val, "override the training seed");
    auto* ablate_out = ablate->add_option("--out", out_val, "override the output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            if (*train_seed) train_args.seed = seed_val;
            if (*train_out) train_args.out_dir = out_val;
            return commands::cmd_train(train_args);
        }
        if (*eval) {
            if (*eval_h) eval_args.horizon = horizon_val;
            if (*eval_out) eval_args.out_dir = out_val;
            return commands::cmd_eval(eval_args);
        }
        if (*count) return commands::cmd_count_params(count_args);
        if (*attn) {
            if (*attn_out) attn_args.out_dir = out_val;
            return commands::cmd_attention(attn_args);
        }
        if (*bench) {
            if (*bench_out) bench_args.out_dir = out_val;
            return commands::cmd_bench(bench_args);
        }
        if (*synth) return commands::cmd_synth(synth_args);
        if (*ablate) {
            if (*ablate_seed) ablate_args.seed = seed_val;
            if (*ablate_out) ablate_args.out_dir = out_val;
            return commands::cmd_ablate(ablate_args);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << std::endl;
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << std::endl;
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
