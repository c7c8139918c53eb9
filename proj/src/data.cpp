#include "cats/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cats {

void SeriesTable::validate() const {
    for (std::size_t c = 1; c < values.size(); ++c)
        if (values[c].size() != values[0].size())
            throw std::invalid_argument("series table: channel '" + channel_names[c] + "' has " +
                                        std::to_string(values[c].size()) + " steps, expected " +
                                        std::to_string(values[0].size()));
}

SeriesTable SeriesTable::slice_steps(std::size_t begin, std::size_t end) const {
    if (begin > end || end > steps())
        throw std::invalid_argument("slice_steps: bad range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") of " + std::to_string(steps()) + " steps");
    SeriesTable out;
    out.channel_names = channel_names;
    out.frequency = frequency;
    out.values.reserve(values.size());
    for (const auto& ch : values) out.values.emplace_back(ch.begin() + begin, ch.begin() + end);
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

SeriesTable load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("load_csv: " + path + " is empty (no header)");
    auto header = split_line(line);
    const std::size_t skip = schema.first_col_timestamp ? 1 : 0;
    if (header.size() <= skip)
        throw std::invalid_argument("load_csv: " + path + " header has no channel columns");

    SeriesTable table;
    table.frequency = schema.frequency;
    for (std::size_t c = skip; c < header.size(); ++c) table.channel_names.push_back(trim(header[c]));
    table.values.resize(table.channel_names.size());

    std::size_t row = 1;  // header was row 0
    while (std::getline(in, line)) {
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) {
            ++row;
            continue;
        }
        auto cells = split_line(line);
        if (cells.size() != header.size())
            throw std::invalid_argument("load_csv: " + path + " row " + std::to_string(row) + " has " +
                                        std::to_string(cells.size()) + " cells, expected " +
                                        std::to_string(header.size()));
        for (std::size_t c = skip; c < cells.size(); ++c) {
            const std::string cell = trim(cells[c]);
            if (cell.empty())
                throw std::invalid_argument("load_csv: " + path + " missing value at row " +
                                            std::to_string(row) + " column " + std::to_string(c));
            double v;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size())
                throw std::invalid_argument("load_csv: " + path + " unparseable cell '" + cell +
                                            "' at row " + std::to_string(row) + " column " +
                                            std::to_string(c));
            table.values[c - skip].push_back(static_cast<Real>(v));
        }
        ++row;
    }
    table.validate();
    return table;
}

void save_csv(const SeriesTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("save_csv: cannot open " + path + " for writing");
    for (std::size_t c = 0; c < table.channel_names.size(); ++c) {
        if (c) out << ',';
        out << table.channel_names[c];
    }
    out << '\n';
    char buf[40];
    for (std::size_t t = 0; t < table.steps(); ++t) {
        for (std::size_t c = 0; c < table.channels(); ++c) {
            if (c) out << ',';
            std::snprintf(buf, sizeof buf, "%.17g", double(table.values[c][t]));
            out << buf;
        }
        out << '\n';
    }
}

Scaler Scaler::fit(const SeriesTable& train) {
    if (train.steps() == 0) throw std::invalid_argument("scaler: cannot fit on an empty split");
    Scaler s;
    for (std::size_t c = 0; c < train.channels(); ++c) {
        const auto& xs = train.values[c];
        Real mean = 0;
        for (Real v : xs) mean += v;
        mean /= Real(xs.size());
        Real var = 0;
        for (Real v : xs) var += (v - mean) * (v - mean);
        var /= Real(xs.size());
        const Real sd = std::sqrt(var);
        if (!(sd > Real(0)))
            throw std::invalid_argument("scaler: zero-variance channel '" + train.channel_names[c] + "'");
        s.mean.push_back(mean);
        s.stddev.push_back(sd);
    }
    return s;
}

SeriesTable Scaler::transform(const SeriesTable& t) const {
    if (t.channels() != mean.size())
        throw std::invalid_argument("scaler: channel count mismatch");
    SeriesTable out = t;
    for (std::size_t c = 0; c < out.channels(); ++c)
        for (Real& v : out.values[c]) v = (v - mean[c]) / stddev[c];
    return out;
}

SeriesTable Scaler::invert(const SeriesTable& t) const {
    if (t.channels() != mean.size())
        throw std::invalid_argument("scaler: channel count mismatch");
    SeriesTable out = t;
    for (std::size_t c = 0; c < out.channels(); ++c)
        for (Real& v : out.values[c]) v = v * stddev[c] + mean[c];
    return out;
}

Real Scaler::transform_value(std::size_t channel, Real v) const {
    return (v - mean.at(channel)) / stddev.at(channel);
}

Real Scaler::invert_value(std::size_t channel, Real v) const {
    return v * stddev.at(channel) + mean.at(channel);
}

Splits chronological_split(const SeriesTable& table, const SplitSpec& spec) {
    const std::size_t n = table.steps();
    std::size_t n_train, n_val, n_test;
    if (spec.train_steps) {
        n_train = *spec.train_steps;
        n_val = spec.val_steps.value_or(0);
        n_test = spec.test_steps.value_or(0);
    } else {
        if (spec.train_ratio < 0 || spec.val_ratio < 0 || spec.test_ratio < 0 ||
            spec.train_ratio + spec.val_ratio + spec.test_ratio > 1.0 + 1e-9)
            throw std::invalid_argument("chronological_split: ratios must be non-negative and sum to at most 1");
        n_train = static_cast<std::size_t>(spec.train_ratio * double(n));
        n_val = static_cast<std::size_t>(spec.val_ratio * double(n));
        n_test = static_cast<std::size_t>(spec.test_ratio * double(n));
    }
    if (n_train + n_val + n_test > n)
        throw std::invalid_argument("chronological_split: boundaries " + std::to_string(n_train) + "/" +
                                    std::to_string(n_val) + "/" + std::to_string(n_test) +
                                    " exceed " + std::to_string(n) + " steps");
    const std::size_t lb = spec.context_lookback ? spec.lookback : 0;

    Splits s;
    s.train = table.slice_steps(0, n_train);
    const std::size_t val_begin = n_train >= lb ? n_train - lb : 0;
    s.val = n_val ? table.slice_steps(val_begin, n_train + n_val) : SeriesTable{table.channel_names, {}, table.frequency};
    const std::size_t test_begin0 = n_train + n_val;
    const std::size_t test_begin = test_begin0 >= lb ? test_begin0 - lb : 0;
    s.test = n_test ? table.slice_steps(test_begin, test_begin0 + n_test)
                    : SeriesTable{table.channel_names, {}, table.frequency};
    if (!n_val) s.val.values.assign(table.channels(), {});
    if (!n_test) s.test.values.assign(table.channels(), {});
    return s;
}

WindowDataset WindowDataset::make(SeriesTable table, std::size_t input_len, std::size_t horizon,
                                  std::size_t stride) {
    table.validate();
    if (stride == 0) throw std::invalid_argument("make_windows: stride must be >= 1");
    const std::size_t n = table.steps();
    if (n < input_len + horizon)
        throw std::invalid_argument("make_windows: split of " + std::to_string(n) +
                                    " steps is too short for input length " + std::to_string(input_len) +
                                    " + horizon " + std::to_string(horizon));
    WindowDataset ds;
    ds.table_ = std::make_shared<SeriesTable>(std::move(table));
    ds.input_len_ = input_len;
    ds.horizon_ = horizon;
    for (std::size_t s = 0; s + input_len + horizon <= n; s += stride) ds.starts_.push_back(s);
    return ds;
}

std::span<const Real> WindowDataset::input(std::size_t channel, std::size_t position) const {
    const auto& ch = table_->values.at(channel);
    const std::size_t s = starts_.at(position);
    return {ch.data() + s, input_len_};
}

std::span<const Real> WindowDataset::target(std::size_t channel, std::size_t position) const {
    const auto& ch = table_->values.at(channel);
    const std::size_t s = starts_.at(position);
    return {ch.data() + s + input_len_, horizon_};
}

void SyntheticSpec::validate() const {
    if (tau < 1) throw std::invalid_argument("synthetic: tau must be >= 1");
    if (shock_period < 2 || shock_period % 2 != 0)
        throw std::invalid_argument("synthetic: shock period must be even and >= 2, got " +
                                    std::to_string(shock_period));
    if (length < 1) throw std::invalid_argument("synthetic: length must be >= 1");
}

std::vector<Real> gen_repeat_signal(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Real> base(spec.tau);
    for (Real& v : base) v = static_cast<Real>(normal(rng));
    std::vector<Real> out(spec.length);
    for (std::size_t t = 0; t < spec.length; ++t) out[t] = base[t % spec.tau];
    return out;
}

std::vector<Real> gen_shock_signal(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Real> out(spec.length, Real(0));
    for (std::size_t t = 0; t < spec.length; ++t) {
        if (t % spec.shock_period == 0)
            out[t] = spec.shock_magnitude;
        else if (t % spec.shock_period == spec.shock_period / 2)
            out[t] = -spec.shock_magnitude;
    }
    return out;
}

SeriesTable compose_toy_series(const SyntheticSpec& spec) {
    const auto x = gen_repeat_signal(spec);
    const auto y = gen_shock_signal(spec);
    SeriesTable t;
    t.channel_names = {"toy"};
    t.frequency = "synthetic";
    t.values.resize(1);
    t.values[0].resize(spec.length);
    for (std::size_t i = 0; i < spec.length; ++i) t.values[0][i] = x[i] + y[i];
    return t;
}

}  // namespace cats
