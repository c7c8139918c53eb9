#pragma once

#include <string>
#include <utility>

#include "cats/model.hpp"

namespace cats {

// Versioned binary container: model config (text block) plus named parameter
// tensors with shapes. Loading rejects version, dtype, name, or shape
// mismatches with CheckpointError.
void save_checkpoint(const std::string& path, const CatsConfig& cfg, const ModelParams& params);
std::pair<CatsConfig, ModelParams> load_checkpoint(const std::string& path);

// Key=value (de)serialization of the model config; shared by checkpoints and
// experiment files.
std::string cats_config_to_text(const CatsConfig& cfg);
CatsConfig cats_config_from_text(const std::string& text);

}  // namespace cats
