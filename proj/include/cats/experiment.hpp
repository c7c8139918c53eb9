#pragma once

#include <map>
#include <string>

#include "cats/data.hpp"
#include "cats/model.hpp"
#include "cats/trainer.hpp"

namespace cats {

// Sectioned key=value experiment file: [dataset], [split], [model], [train],
// [output]. Exactly one of a CSV source or a synthetic spec.
struct DatasetBlock {
    enum class Kind { Csv, Synthetic };
    Kind kind = Kind::Synthetic;
    std::string csv_path;
    CsvSchema schema;
    SyntheticSpec synthetic;
};

struct SplitBlock {
    std::string preset;  // "", "etth", "ettm"
    SplitSpec spec;
    bool context_lookback_set = false;  // whether the file pinned the flag
};

struct OutputBlock {
    std::string dir = "runs";
    std::string name = "run";
    std::string run_dir() const { return dir + "/" + name; }
};

struct ExperimentConfig {
    DatasetBlock dataset;
    SplitBlock split;
    CatsConfig model;
    TrainConfig train;
    OutputBlock output;

    static ExperimentConfig load(const std::string& path);
    void validate() const;
};

using IniSections = std::map<std::string, std::map<std::string, std::string>>;
IniSections parse_ini(const std::string& path);

struct PreparedData {
    SeriesTable raw;
    Scaler scaler;
    SeriesTable train_scaled;  // kept for MASE in-sample use
    WindowDataset train;
    WindowDataset val;
    WindowDataset test;
};

// Loads/generates the series, splits chronologically, fits the scaler on the
// train split, and windows every non-empty split. Fills cfg.model.channels.
PreparedData prepare_data(ExperimentConfig& cfg);

}  // namespace cats
