#pragma once

#include <filesystem>

#include <json.hpp>

#include "onval/config.hpp"

namespace onval::commands {

/// Each command writes its files plus resolved_config.json into cfg.output_dir
/// and returns a short machine-readable summary of what it did.
nlohmann::json generate(const ExperimentConfig& cfg);
nlohmann::json train(const ExperimentConfig& cfg);
nlohmann::json fidelity(const ExperimentConfig& cfg);
nlohmann::json diagnose(const ExperimentConfig& cfg);

}  // namespace onval::commands
