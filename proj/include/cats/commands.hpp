#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cats::commands {

// Exit codes: 0 ok, 2 config error, 3 checkpoint/shape error, 4 numeric
// failure. Implementations throw the typed errors; the CLI front end maps
// them. Functions return 0 on success.

struct TrainArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool record_attention = false;
    std::optional<std::string> out_dir;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
    std::string checkpoint_path;
    std::string config_path;  // dataset + split + output
    std::optional<std::size_t> horizon;
    std::optional<std::string> out_dir;
};
int cmd_eval(const EvalArgs& args);

struct CountParamsArgs {
    std::string config_path;
    std::vector<std::size_t> horizons;  // default {96,192,336,720}
};
int cmd_count_params(const CountParamsArgs& args);

struct AttentionArgs {
    std::string checkpoint_path;
    std::string config_path;  // dataset source
    std::size_t window_index = 0;
    std::size_t top_k = 2;
    std::optional<std::string> out_dir;
};
int cmd_attention(const AttentionArgs& args);

struct BenchArgs {
    std::string config_path;
    std::size_t iterations = 10;
    std::optional<std::string> out_dir;
};
int cmd_bench(const BenchArgs& args);

struct SynthArgs {
    std::string config_path;
    std::string out_path;
};
int cmd_synth(const SynthArgs& args);

struct AblateArgs {
    std::string config_path;
    // Variants as comma-lists separated by ';'. Empty => zero/one/two
    // self-attention replacements of the configured layer count.
    std::string kinds;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};
int cmd_ablate(const AblateArgs& args);

}  // namespace cats::commands
