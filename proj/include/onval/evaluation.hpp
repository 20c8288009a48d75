#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onval/data.hpp"
#include "onval/influence.hpp"
#include "onval/network.hpp"
#include "onval/trainer.hpp"

namespace onval {

/// Product-moment correlation; nullopt when either input is constant.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks; nullopt when either input is constant.
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

/// Average ranks (1-based); ties share the mean of their positions.
Vec average_ranks(std::span<const double> xs);

/// Fraction of samples whose argmax logit equals the label (ties to the lowest index).
double accuracy(const Mlp& net, std::span<const Sample> samples);

inline constexpr Estimator kFidelityEstimators[] = {Estimator::IP, Estimator::Ghost, Estimator::LAI, Estimator::LLI};

struct FidelityRecord {
    std::size_t step = 0;
    std::vector<std::int64_t> sample_ids;
    std::map<Estimator, Vec> scores;
    Vec shapley;
    Vec shapley_stderr;
    std::map<Estimator, std::optional<double>> pearson;
    std::map<Estimator, std::optional<double>> spearman;
};

struct EstimatorSummary {
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t checkpoints = 0;
    std::size_t below_floor = 0;
    std::size_t degenerate = 0;
};

struct FidelitySummary {
    std::map<Estimator, EstimatorSummary> per_estimator;
    double floor = 0.5;
    std::size_t checkpoints = 0;
    bool shapley_exact = false;
};

struct FidelityOptions {
    std::size_t probe_batch_size = 16;
    std::size_t checkpoint_every = 10;
    /// 0 = every checkpoint until training ends.
    std::size_t max_checkpoints = 0;
    std::size_t permutations = 1000;
    bool exhaustive = false;
    double floor = 0.5;
};

struct FidelityResult {
    std::vector<FidelityRecord> records;
    FidelitySummary summary;
};

/// Scores one probe batch with every estimator and the Monte-Carlo Shapley
/// reference against `validation` under the frozen `net`.
FidelityRecord evaluate_checkpoint(const Mlp& net, std::span<const Sample> probe, std::span<const Sample> validation,
                                   double learning_rate, std::size_t permutations, bool exhaustive, std::uint64_t seed,
                                   std::size_t step);

FidelitySummary summarize(std::span<const FidelityRecord> records, double floor);

/// Vanilla training with a probe-batch fidelity evaluation every
/// `checkpoint_every` optimizer steps (starting at step 0).
FidelityResult run_fidelity(const TrainerConfig& cfg, std::span<const LayerSpec> specs, const DatasetBundle& data,
                            const FidelityOptions& opts);

nlohmann::json to_json(const FidelitySummary& summary);

struct FidelityRow {
    std::size_t step = 0;
    std::string estimator;
    std::optional<double> pearson;
    std::optional<double> spearman;
};

struct InclusionRow {
    std::size_t epoch = 0;
    std::int64_t sample_id = 0;
    bool kept = false;
};

struct ScoreRow {
    std::size_t step = 0;
    std::int64_t sample_id = 0;
    std::string estimator;
    double benefit = 0.0;
};

/// Writes fidelity.csv, fidelity_scores.csv and fidelity_summary.json.
void emit_fidelity(std::span<const FidelityRecord> records, const FidelitySummary& summary,
                   const std::filesystem::path& out_dir);

/// Writes training_report.json, inclusion.csv and scores.csv.
void emit_training(const TrainingReport& report, const std::filesystem::path& out_dir);

void emit_reports(std::span<const FidelityRecord> records, const FidelitySummary& summary, const TrainingReport& report,
                  const std::filesystem::path& out_dir);

std::vector<FidelityRow> read_fidelity_csv(const std::filesystem::path& path);
std::vector<InclusionRow> read_inclusion_csv(const std::filesystem::path& path);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

std::string format_real(double v);
void write_json(const nlohmann::json& doc, const std::filesystem::path& path);

}  // namespace onval
