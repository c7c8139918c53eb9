#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cats/common.hpp"

namespace cats {

// Multivariate series: M named channels over a shared step axis.
struct SeriesTable {
    std::vector<std::string> channel_names;
    std::vector<std::vector<Real>> values;  // [channel][step]
    std::string frequency;

    std::size_t channels() const { return values.size(); }
    std::size_t steps() const { return values.empty() ? 0 : values[0].size(); }
    void validate() const;  // equal channel lengths
    SeriesTable slice_steps(std::size_t begin, std::size_t end) const;
};

struct CsvSchema {
    bool first_col_timestamp = true;
    std::string frequency;
};

SeriesTable load_csv(const std::string& path, const CsvSchema& schema);
// Writes header + rows; load_csv(save_csv(t)) reproduces t exactly.
void save_csv(const SeriesTable& table, const std::string& path);

// Per-channel z-score fitted on the training split only.
struct Scaler {
    std::vector<Real> mean;
    std::vector<Real> stddev;

    static Scaler fit(const SeriesTable& train);
    SeriesTable transform(const SeriesTable& t) const;
    SeriesTable invert(const SeriesTable& t) const;
    Real transform_value(std::size_t channel, Real v) const;
    Real invert_value(std::size_t channel, Real v) const;
};

// Contiguous, order-preserving split. Evaluation splits may carry the last
// `lookback` steps of the preceding data as input context (standard
// benchmark protocol); windows are then constrained so targets stay inside
// the split proper.
struct SplitSpec {
    // Fixed step counts take precedence over ratios when set.
    std::optional<std::size_t> train_steps;
    std::optional<std::size_t> val_steps;
    std::optional<std::size_t> test_steps;
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    bool context_lookback = false;
    std::size_t lookback = 0;  // input length L when context_lookback is on
};

struct Splits {
    SeriesTable train;
    SeriesTable val;
    SeriesTable test;
};

Splits chronological_split(const SeriesTable& table, const SplitSpec& spec);

// Sliding supervised windows (input, target) = (x[t..t+L), x[t+L..t+L+T)).
class WindowDataset {
  public:
    WindowDataset() = default;
    static WindowDataset make(SeriesTable table, std::size_t input_len, std::size_t horizon,
                              std::size_t stride = 1);

    bool empty() const { return positions() == 0; }
    std::size_t positions() const { return starts_.size(); }
    std::size_t channels() const { return table_ ? table_->channels() : 0; }
    std::size_t num_examples() const { return positions() * channels(); }
    std::size_t input_len() const { return input_len_; }
    std::size_t horizon() const { return horizon_; }

    std::span<const Real> input(std::size_t channel, std::size_t position) const;
    std::span<const Real> target(std::size_t channel, std::size_t position) const;
    const SeriesTable& table() const { return *table_; }

  private:
    std::shared_ptr<const SeriesTable> table_;
    std::size_t input_len_ = 0;
    std::size_t horizon_ = 0;
    std::vector<std::size_t> starts_;
};

// Two-component synthetic signal: a tiled standard-normal base of period tau
// plus an alternating +/-k shock train of period S.
struct SyntheticSpec {
    std::size_t tau = 24;
    std::size_t shock_period = 8;  // S, even
    Real shock_magnitude = 5;      // k
    std::size_t length = 1920;
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<Real> gen_repeat_signal(const SyntheticSpec& spec);
std::vector<Real> gen_shock_signal(const SyntheticSpec& spec);
SeriesTable compose_toy_series(const SyntheticSpec& spec);

}  // namespace cats
