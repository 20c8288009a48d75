#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "onval/network.hpp"

namespace onval {

struct Sample {
    std::int64_t id = 0;
    Vec features;
    std::size_t label = 0;
    bool noisy = false;
};

struct DatasetBundle {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    double noise_rate = 0.0;
    std::uint64_t seed = 0;
    std::array<double, 3> fractions{0.0, 0.0, 0.0};
    std::size_t flipped = 0;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    std::size_t line;
};

struct BlobParams {
    std::size_t num_classes = 3;
    std::size_t per_class = 200;
    std::size_t feature_dim = 8;
    double spread = 1.0;
    /// Centers are drawn uniformly from [-center_scale, center_scale]^d.
    double center_scale = 3.0;
};

std::vector<Sample> generate_blobs(const BlobParams& params, std::uint64_t seed);

/// Flips exactly floor(flip_rate * n) labels, each to a uniformly chosen different class.
std::vector<Sample> inject_label_noise(std::vector<Sample> samples, double flip_rate, std::size_t num_classes,
                                       std::uint64_t seed);

/// Seeded shuffle, then contiguous train/validation/test partition.
DatasetBundle split(std::vector<Sample> samples, std::array<double, 3> fractions, std::uint64_t seed);

void write_csv(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> load_csv(const std::filesystem::path& path);
std::vector<Sample> parse_csv(const std::string& text);

nlohmann::json manifest(const DatasetBundle& bundle);

/// generate_blobs -> split -> label noise on the train split only.
DatasetBundle synthetic_bundle(const BlobParams& params, double flip_rate, std::array<double, 3> fractions,
                               std::uint64_t seed);

}  // namespace onval
