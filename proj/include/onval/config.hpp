#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "onval/data.hpp"
#include "onval/errors.hpp"
#include "onval/evaluation.hpp"
#include "onval/network.hpp"
#include "onval/trainer.hpp"

namespace onval {

struct DatasetConfig {
    std::string source = "blobs";  // "blobs" or "csv"
    BlobParams blobs;
    double flip_rate = 0.0;
    std::array<double, 3> fractions{0.6, 0.2, 0.2};
    std::filesystem::path train_csv;
    std::filesystem::path validation_csv;
    std::filesystem::path test_csv;
};

struct DiagnoseConfig {
    /// Empty means <output_dir>/checkpoint.json.
    std::filesystem::path checkpoint;
    std::size_t pairs = 16;
    std::size_t resamples = 200;
    std::size_t subset_size = 8;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    DatasetConfig dataset;
    std::vector<LayerSpec> model;
    TrainerConfig trainer;
    FidelityOptions fidelity;
    DiagnoseConfig diagnose;
    std::vector<std::int64_t> probe_ids;
};

/// Applies "section.key=value" to a raw config document. `value` is parsed as
/// JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Parses and validates a config document; unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Fully resolved document (every default expanded).
nlohmann::json to_json(const ExperimentConfig& cfg);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Dataset described by the config: generated blobs or the three CSV files.
DatasetBundle load_dataset(const ExperimentConfig& cfg);

}  // namespace onval
