#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onval/data.hpp"
#include "onval/errors.hpp"
#include "onval/influence.hpp"
#include "onval/network.hpp"
#include "onval/validation_cache.hpp"

namespace onval {

enum class CurationMode { ValidationInfluence, SelfInfluence, Off };
enum class EmptyBatchPolicy { SkipStep, KeepTop1 };

std::string to_string(CurationMode m);
CurationMode curation_mode_from_string(const std::string& s);
std::string to_string(EmptyBatchPolicy p);
EmptyBatchPolicy empty_batch_policy_from_string(const std::string& s);

struct TrainerConfig {
    double learning_rate = 0.1;
    double momentum = 0.0;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t warmup_epochs = 0;
    /// nullopt means no estimator; curation then refuses to run.
    std::optional<Estimator> estimator = Estimator::LAI;
    CurationMode mode = CurationMode::Off;
    /// Benefit-sign threshold; a sample is kept iff benefit >= threshold.
    double threshold = 0.0;
    double val_fraction_per_batch = 0.1;
    std::size_t cache_refresh_steps = 1;
    std::uint64_t seed = 0;
    EmptyBatchPolicy empty_batch_policy = EmptyBatchPolicy::SkipStep;
    bool calibrate_layers = false;
    double precond_decay = 0.9;
    double precond_floor = 1e-8;
    /// Write a checkpoint every k optimizer steps (0 = never).
    std::size_t checkpoint_every_steps = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainerConfig& cfg);
TrainerConfig trainer_config_from_json(const nlohmann::json& doc);

struct CurationDecision {
    std::vector<bool> kept_mask;
    Vec benefit_scores;
    Estimator estimator = Estimator::LAI;
    std::size_t step = 0;
    bool degenerate = false;

    std::size_t kept_count() const;
};

struct LedgerEntry {
    std::size_t step = 0;
    Estimator estimator = Estimator::LAI;
    std::size_t macs = 0;
    std::size_t cache_bytes = 0;
    std::size_t scored = 0;
    std::size_t kept = 0;
};

struct LedgerTotals {
    std::size_t macs = 0;
    std::size_t cache_bytes = 0;
    std::size_t scored = 0;
    std::size_t kept = 0;
};

struct CostLedger {
    std::vector<LedgerEntry> entries;
    std::map<Estimator, LedgerTotals> totals;
    /// Architecture and sizes the entries were produced with, used by ledger_compare.
    std::vector<LayerSpec> specs;
    std::size_t batch_size = 0;
    std::size_t val_size = 0;

    void record(const LedgerEntry& entry);
};

struct CostComparison {
    std::map<Estimator, LedgerTotals> per_method;
    std::size_t depth = 0;
    bool lai_cheaper_macs = false;
    bool lai_smaller_cache = false;
    bool equal_macs_depth1 = false;
    /// MAC(LAI) < MAC(Ghost) and cache(LAI) < cache(Ghost) when L > 1;
    /// equal scoring MACs when L = 1.
    bool ordering_holds = false;
};

CostComparison ledger_compare(const CostLedger& ledger, std::span<const Estimator> methods);
nlohmann::json to_json(const CostComparison& cmp);

struct EpochStats {
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double test_accuracy = 0.0;
    std::size_t kept = 0;
    std::size_t scored = 0;
    Vec histogram_edges;
    std::vector<std::size_t> histogram_counts;
    bool curated = false;
};

struct ScoreRecord {
    std::size_t step = 0;
    std::int64_t sample_id = 0;
    Estimator estimator = Estimator::LAI;
    double benefit = 0.0;
};

struct TrainingReport {
    std::vector<EpochStats> epochs;
    std::vector<std::int64_t> sample_ids;
    /// inclusion[e][k]: train sample k was used in an update during epoch e.
    std::vector<std::vector<bool>> inclusion;
    std::vector<ScoreRecord> scores;
    std::map<std::int64_t, std::vector<std::pair<std::size_t, double>>> probe_traces;
    CostLedger ledger;
    std::size_t steps = 0;
    std::size_t skipped_steps = 0;
    TrainerConfig config;
};

nlohmann::json to_json(const TrainingReport& report);

std::vector<LabeledPoint> labeled(std::span<const Sample> samples);

ValidationCache build_validation_cache(const Mlp& net, std::span<const Sample> val_subset, const TrainerConfig& cfg,
                                       std::size_t step);

struct CurationContext {
    const Preconditioner* precond = nullptr;
    CostLedger* ledger = nullptr;
};

/// Scores `batch` against `cache` at optimizer step `step`. Throws if the
/// cache is older than cfg.cache_refresh_steps or the estimator is unset.
CurationDecision curate_batch(const Mlp& net, std::span<const Sample> batch, const ValidationCache& cache,
                              const TrainerConfig& cfg, std::size_t step, CurationContext ctx = {});

/// Scores each batch member against the other members.
CurationDecision self_influence_curate(const Mlp& net, std::span<const Sample> batch, const TrainerConfig& cfg,
                                       std::size_t step, CurationContext ctx = {});

/// Re-thresholds an existing decision.
CurationDecision rethreshold(const CurationDecision& decision, double threshold);

struct MomentumState {
    Vec velocity;
};

/// Mean gradient over `kept`, heavy-ball momentum, parameter update.
void sgd_step(Mlp& net, std::span<const Sample> kept, const TrainerConfig& cfg, MomentumState& state);

struct TrainOptions {
    std::vector<std::int64_t> probe_ids;
    std::filesystem::path checkpoint_dir;
    /// Invoked before every optimizer step with the step index and the frozen net.
    std::function<void(std::size_t, const Mlp&)> on_step;
};

struct TrainResult {
    TrainingReport report;
    Mlp net;
};

TrainResult train(const TrainerConfig& cfg, std::span<const LayerSpec> specs, const DatasetBundle& data,
                  const TrainOptions& options = {});

double mean_loss(const Mlp& net, std::span<const Sample> samples);

}  // namespace onval
