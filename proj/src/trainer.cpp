#include "onval/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "onval/evaluation.hpp"
#include "onval/kernels.hpp"

namespace onval {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t stage) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stage};
    return std::mt19937_64(seq);
}

constexpr std::size_t kHistogramBins = 20;

void fill_histogram(EpochStats& stats, std::span<const double> scores) {
    stats.scored = scores.size();
    if (scores.empty()) return;
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (lo == hi) {
        stats.histogram_edges = {lo, hi};
        stats.histogram_counts = {scores.size()};
        return;
    }
    stats.histogram_edges.resize(kHistogramBins + 1);
    for (std::size_t b = 0; b <= kHistogramBins; ++b) {
        stats.histogram_edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(kHistogramBins);
    }
    stats.histogram_counts.assign(kHistogramBins, 0);
    for (double s : scores) {
        auto bin = static_cast<std::size_t>((s - lo) / (hi - lo) * static_cast<double>(kHistogramBins));
        ++stats.histogram_counts[std::min(bin, kHistogramBins - 1)];
    }
}

std::vector<bool> threshold_mask(std::span<const double> benefits, double threshold) {
    std::vector<bool> mask(benefits.size());
    for (std::size_t i = 0; i < benefits.size(); ++i) mask[i] = benefits[i] >= threshold;
    return mask;
}

std::vector<ScoringView> batch_views(const Mlp& net, std::span<const Sample> batch, Estimator estimator,
                                     bool calibrate) {
    std::vector<ScoringView> views(batch.size());
    #pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.size()); ++i) {
        const auto& s = batch[static_cast<std::size_t>(i)];
        views[static_cast<std::size_t>(i)] = make_view(net, s.features, s.label, estimator, calibrate);
    }
    return views;
}

Estimator require_estimator(const TrainerConfig& cfg) {
    if (!cfg.estimator) throw std::invalid_argument("curation requested but estimator is none");
    return *cfg.estimator;
}

template <typename T>
void read_field(const nlohmann::json& doc, const char* key, T& out) {
    if (!doc.contains(key)) return;
    try {
        out = doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("trainer.") + key, "wrong type");
    }
}

}  // namespace

std::string to_string(CurationMode m) {
    switch (m) {
        case CurationMode::ValidationInfluence: return "validation";
        case CurationMode::SelfInfluence: return "self";
        case CurationMode::Off: return "off";
    }
    return "off";
}

CurationMode curation_mode_from_string(const std::string& s) {
    if (s == "validation") return CurationMode::ValidationInfluence;
    if (s == "self") return CurationMode::SelfInfluence;
    if (s == "off") return CurationMode::Off;
    throw std::invalid_argument("unknown curation mode '" + s + "'");
}

std::string to_string(EmptyBatchPolicy p) { return p == EmptyBatchPolicy::SkipStep ? "skip_step" : "keep_top1"; }

EmptyBatchPolicy empty_batch_policy_from_string(const std::string& s) {
    if (s == "skip_step") return EmptyBatchPolicy::SkipStep;
    if (s == "keep_top1") return EmptyBatchPolicy::KeepTop1;
    throw std::invalid_argument("unknown empty batch policy '" + s + "'");
}

void TrainerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("trainer.learning_rate", "must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("trainer.momentum", "must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("trainer.batch_size", "must be positive");
    if (epochs == 0) throw ConfigError("trainer.epochs", "must be positive");
    if (warmup_epochs > epochs) throw ConfigError("trainer.warmup_epochs", "must not exceed epochs");
    if (!std::isfinite(threshold)) throw ConfigError("trainer.threshold", "must be finite");
    if (!(val_fraction_per_batch > 0.0 && val_fraction_per_batch <= 1.0)) {
        throw ConfigError("trainer.val_fraction_per_batch", "must be in (0, 1]");
    }
    if (cache_refresh_steps == 0) throw ConfigError("trainer.cache_refresh_steps", "must be positive");
    if (!(precond_decay > 0.0 && precond_decay < 1.0)) throw ConfigError("trainer.precond_decay", "must be in (0, 1)");
    if (!(precond_floor > 0.0)) throw ConfigError("trainer.precond_floor", "must be positive");
    if (mode != CurationMode::Off && !estimator) throw ConfigError("trainer.estimator", "curation mode needs an estimator");
}

nlohmann::json to_json(const TrainerConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate},
            {"momentum", cfg.momentum},
            {"batch_size", cfg.batch_size},
            {"epochs", cfg.epochs},
            {"warmup_epochs", cfg.warmup_epochs},
            {"estimator", cfg.estimator ? to_string(*cfg.estimator) : std::string("none")},
            {"mode", to_string(cfg.mode)},
            {"threshold", cfg.threshold},
            {"val_fraction_per_batch", cfg.val_fraction_per_batch},
            {"cache_refresh_steps", cfg.cache_refresh_steps},
            {"seed", cfg.seed},
            {"empty_batch_policy", to_string(cfg.empty_batch_policy)},
            {"calibrate_layers", cfg.calibrate_layers},
            {"precond_decay", cfg.precond_decay},
            {"precond_floor", cfg.precond_floor},
            {"checkpoint_every_steps", cfg.checkpoint_every_steps}};
}

TrainerConfig trainer_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("trainer", "must be an object");
    static const std::set<std::string> known{"learning_rate", "momentum", "batch_size", "epochs", "warmup_epochs",
                                             "estimator", "mode", "threshold", "val_fraction_per_batch",
                                             "cache_refresh_steps", "seed", "empty_batch_policy", "calibrate_layers",
                                             "precond_decay", "precond_floor", "checkpoint_every_steps"};
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) throw ConfigError("trainer." + key, "unknown key");
    }
    TrainerConfig cfg;
    read_field(doc, "learning_rate", cfg.learning_rate);
    read_field(doc, "momentum", cfg.momentum);
    read_field(doc, "batch_size", cfg.batch_size);
    read_field(doc, "epochs", cfg.epochs);
    read_field(doc, "warmup_epochs", cfg.warmup_epochs);
    read_field(doc, "threshold", cfg.threshold);
    read_field(doc, "val_fraction_per_batch", cfg.val_fraction_per_batch);
    read_field(doc, "cache_refresh_steps", cfg.cache_refresh_steps);
    read_field(doc, "seed", cfg.seed);
    read_field(doc, "calibrate_layers", cfg.calibrate_layers);
    read_field(doc, "precond_decay", cfg.precond_decay);
    read_field(doc, "precond_floor", cfg.precond_floor);
    read_field(doc, "checkpoint_every_steps", cfg.checkpoint_every_steps);
    std::string text;
    try {
        if (doc.contains("estimator")) {
            read_field(doc, "estimator", text);
            cfg.estimator = text == "none" ? std::nullopt : std::optional<Estimator>(estimator_from_string(text));
        }
    } catch (const std::invalid_argument& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("trainer.estimator", e.what());
    }
    try {
        if (doc.contains("mode")) {
            read_field(doc, "mode", text);
            cfg.mode = curation_mode_from_string(text);
        }
    } catch (const std::invalid_argument& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("trainer.mode", e.what());
    }
    try {
        if (doc.contains("empty_batch_policy")) {
            read_field(doc, "empty_batch_policy", text);
            cfg.empty_batch_policy = empty_batch_policy_from_string(text);
        }
    } catch (const std::invalid_argument& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("trainer.empty_batch_policy", e.what());
    }
    cfg.validate();
    return cfg;
}

std::size_t CurationDecision::kept_count() const {
    return static_cast<std::size_t>(std::count(kept_mask.begin(), kept_mask.end(), true));
}

void CostLedger::record(const LedgerEntry& entry) {
    entries.push_back(entry);
    auto& t = totals[entry.estimator];
    t.macs += entry.macs;
    t.cache_bytes += entry.cache_bytes;
    t.scored += entry.scored;
    t.kept += entry.kept;
}

CostComparison ledger_compare(const CostLedger& ledger, std::span<const Estimator> methods) {
    if (ledger.specs.empty()) throw std::invalid_argument("ledger_compare: ledger has no architecture");
    CostComparison cmp;
    cmp.depth = ledger.specs.size();
    std::optional<std::size_t> scored;
    for (Estimator m : methods) {
        const auto it = ledger.totals.find(m);
        if (it == ledger.totals.end()) throw std::invalid_argument("ledger_compare: no entries for " + to_string(m));
        if (scored && *scored != it->second.scored) {
            throw std::invalid_argument("ledger_compare: methods ran on mismatched configurations");
        }
        scored = it->second.scored;
        cmp.per_method[m] = it->second;
    }
    const auto lai = cmp.per_method.find(Estimator::LAI);
    const auto ghost = cmp.per_method.find(Estimator::Ghost);
    if (lai != cmp.per_method.end() && ghost != cmp.per_method.end()) {
        cmp.lai_cheaper_macs = lai->second.macs < ghost->second.macs;
        cmp.lai_smaller_cache = lai->second.cache_bytes < ghost->second.cache_bytes;
        cmp.equal_macs_depth1 = lai->second.macs == ghost->second.macs;
        cmp.ordering_holds = cmp.depth > 1 ? (cmp.lai_cheaper_macs && cmp.lai_smaller_cache) : cmp.equal_macs_depth1;
    }
    return cmp;
}

nlohmann::json to_json(const CostComparison& cmp) {
    nlohmann::json doc;
    doc["depth"] = cmp.depth;
    for (const auto& [m, t] : cmp.per_method) {
        doc["methods"][to_string(m)] = {
            {"macs", t.macs}, {"cache_bytes", t.cache_bytes}, {"scored", t.scored}, {"kept", t.kept}};
    }
    doc["lai_cheaper_macs"] = cmp.lai_cheaper_macs;
    doc["lai_smaller_cache"] = cmp.lai_smaller_cache;
    doc["ordering_holds"] = cmp.ordering_holds;
    return doc;
}

std::vector<LabeledPoint> labeled(std::span<const Sample> samples) {
    std::vector<LabeledPoint> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.features, s.label});
    return out;
}

ValidationCache build_validation_cache(const Mlp& net, std::span<const Sample> val_subset, const TrainerConfig& cfg,
                                       std::size_t step) {
    const auto points = labeled(val_subset);
    return build_validation_cache(net, points, require_estimator(cfg), step, cfg.calibrate_layers);
}

CurationDecision curate_batch(const Mlp& net, std::span<const Sample> batch, const ValidationCache& cache,
                              const TrainerConfig& cfg, std::size_t step, CurationContext ctx) {
    const Estimator estimator = require_estimator(cfg);
    if (cache.estimator != estimator || cache.calibrated != cfg.calibrate_layers) {
        throw std::invalid_argument("curate_batch: cache built for a different estimator");
    }
    if (step < cache.step || step - cache.step >= cfg.cache_refresh_steps) {
        throw std::logic_error(fmt::format("curate_batch: stale cache (built at step {}, now {}, refresh every {})",
                                           cache.step, step, cfg.cache_refresh_steps));
    }
    if (estimator == Estimator::PrecondLAI && ctx.precond == nullptr) {
        throw std::invalid_argument("curate_batch: PrecondLAI needs a preconditioner");
    }
    const auto views = batch_views(net, batch, estimator, cfg.calibrate_layers);

    CurationDecision decision;
    decision.estimator = estimator;
    decision.step = step;
    decision.benefit_scores = kernels::score_batch(cache, views, ctx.precond);
    decision.kept_mask = threshold_mask(decision.benefit_scores, cfg.threshold);

    if (ctx.ledger != nullptr) {
        const auto specs = net.specs();
        ctx.ledger->record({step, estimator, cost_model(specs, estimator).scoring_macs(batch.size(), cache.size()),
                            cache.bytes(), batch.size(), decision.kept_count()});
    }
    return decision;
}

CurationDecision self_influence_curate(const Mlp& net, std::span<const Sample> batch, const TrainerConfig& cfg,
                                       std::size_t step, CurationContext ctx) {
    const Estimator estimator = require_estimator(cfg);
    if (batch.empty()) throw std::invalid_argument("self_influence_curate: empty batch");
    CurationDecision decision;
    decision.estimator = estimator;
    decision.step = step;
    if (batch.size() == 1) {
        decision.degenerate = true;
        decision.kept_mask = {true};
        decision.benefit_scores = {0.0};
        return decision;
    }
    if (estimator == Estimator::PrecondLAI && ctx.precond == nullptr) {
        throw std::invalid_argument("self_influence_curate: PrecondLAI needs a preconditioner");
    }
    ValidationCache layout;
    layout.estimator = estimator;
    layout.calibrated = cfg.calibrate_layers;
    layout.step = step;
    const auto specs = net.specs();
    layout.offsets = estimator == Estimator::LLI ? std::vector<std::size_t>{0, specs.back().in_dim + 1}
                                                 : stack_offsets(specs);
    layout.entries = batch_views(net, batch, estimator, cfg.calibrate_layers);

    decision.benefit_scores = kernels::score_self(layout, layout.entries, ctx.precond);
    decision.kept_mask = threshold_mask(decision.benefit_scores, cfg.threshold);
    if (ctx.ledger != nullptr) {
        const auto model = cost_model(specs, estimator);
        const std::size_t n = batch.size();
        ctx.ledger->record({step, estimator, n * model.per_sample_macs + n * (n - 1) * model.pair_macs, layout.bytes(),
                            n, decision.kept_count()});
    }
    return decision;
}

CurationDecision rethreshold(const CurationDecision& decision, double threshold) {
    CurationDecision out = decision;
    out.kept_mask = threshold_mask(decision.benefit_scores, threshold);
    return out;
}

void sgd_step(Mlp& net, std::span<const Sample> kept, const TrainerConfig& cfg, MomentumState& state) {
    if (kept.empty()) throw std::invalid_argument("sgd_step: no samples to step on");
    const std::size_t n_params = net.num_params();
    if (state.velocity.empty()) state.velocity.assign(n_params, 0.0);
    Vec grad(n_params, 0.0);
    for (const auto& s : kept) {
        const Vec g = param_grads(full_taps(net, s.features, s.label)).flatten();
        for (std::size_t k = 0; k < n_params; ++k) grad[k] += g[k];
    }
    const double inv = 1.0 / static_cast<double>(kept.size());
    for (auto& g : grad) g *= inv;
    if (!all_finite(grad)) throw NumericError("sgd_step: non-finite gradient");

    Vec params = flatten_params(net);
    for (std::size_t k = 0; k < n_params; ++k) {
        state.velocity[k] = cfg.momentum * state.velocity[k] + grad[k];
        params[k] -= cfg.learning_rate * state.velocity[k];
    }
    assign_params(net, params);
}

double mean_loss(const Mlp& net, std::span<const Sample> samples) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : samples) total += sample_loss(net, s.features, s.label);
    return total / static_cast<double>(samples.size());
}

TrainResult train(const TrainerConfig& cfg, std::span<const LayerSpec> specs, const DatasetBundle& data,
                  const TrainOptions& options) {
    cfg.validate();
    validate_specs(specs);
    if (specs.front().in_dim != data.feature_dim || specs.back().out_dim != data.num_classes) {
        throw std::invalid_argument(fmt::format(
            "dataset/config mismatch: network maps {} -> {} but dataset has {} features and {} classes",
            specs.front().in_dim, specs.back().out_dim, data.feature_dim, data.num_classes));
    }
    if (data.train.empty() || data.validation.empty()) throw std::invalid_argument("train: empty train or validation split");

    TrainResult result{TrainingReport{}, make_mlp(specs, cfg.seed)};
    Mlp& net = result.net;
    TrainingReport& report = result.report;
    report.config = cfg;
    report.ledger.specs.assign(specs.begin(), specs.end());
    report.ledger.batch_size = cfg.batch_size;

    const std::size_t n_train = data.train.size();
    for (const auto& s : data.train) report.sample_ids.push_back(s.id);
    std::map<std::int64_t, std::size_t> probe_lookup;
    for (auto id : options.probe_ids) probe_lookup[id] = 0;

    auto shuffle_rng = stream(cfg.seed, 10);
    auto val_rng = stream(cfg.seed, 11);
    const auto val_take = static_cast<std::size_t>(
        std::ceil(cfg.val_fraction_per_batch * static_cast<double>(data.validation.size())));
    report.ledger.val_size = val_take;

    MomentumState momentum;
    Preconditioner precond = Preconditioner::identity(specs.back().out_dim, cfg.precond_decay, cfg.precond_floor);
    std::optional<ValidationCache> cache;
    std::vector<std::size_t> order(n_train);
    std::vector<std::size_t> val_order(data.validation.size());
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const bool curating = epoch >= cfg.warmup_epochs && cfg.mode != CurationMode::Off;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::vector<bool> included(n_train, false);
        std::vector<double> epoch_scores;

        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t end = std::min(n_train, start + cfg.batch_size);
            std::vector<Sample> batch;
            std::vector<std::size_t> batch_index;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(data.train[order[k]]);
                batch_index.push_back(order[k]);
            }
            if (options.on_step) options.on_step(step, net);

            std::vector<bool> keep(batch.size(), true);
            if (curating) {
                CurationContext ctx{&precond, &report.ledger};
                CurationDecision decision;
                if (cfg.mode == CurationMode::ValidationInfluence) {
                    if (!cache || step - cache->step >= cfg.cache_refresh_steps) {
                        std::iota(val_order.begin(), val_order.end(), std::size_t{0});
                        std::shuffle(val_order.begin(), val_order.end(), val_rng);
                        std::sort(val_order.begin(), val_order.begin() + static_cast<std::ptrdiff_t>(val_take));
                        std::vector<Sample> subset;
                        for (std::size_t k = 0; k < val_take; ++k) subset.push_back(data.validation[val_order[k]]);
                        cache = build_validation_cache(net, subset, cfg, step);
                    }
                    decision = curate_batch(net, batch, *cache, cfg, step, ctx);
                } else {
                    decision = self_influence_curate(net, batch, cfg, step, ctx);
                }
                keep = decision.kept_mask;
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    const double b = decision.benefit_scores[i];
                    report.scores.push_back({step, batch[i].id, decision.estimator, b});
                    epoch_scores.push_back(b);
                    if (probe_lookup.contains(batch[i].id)) report.probe_traces[batch[i].id].emplace_back(step, b);
                }
                if (decision.kept_count() == 0 && cfg.empty_batch_policy == EmptyBatchPolicy::KeepTop1) {
                    const auto best = std::max_element(decision.benefit_scores.begin(), decision.benefit_scores.end());
                    keep[static_cast<std::size_t>(best - decision.benefit_scores.begin())] = true;
                }
                if (decision.estimator == Estimator::PrecondLAI) {
                    std::vector<Vec> grads;
                    for (const auto& s : batch) grads.push_back(output_taps(net, s.features, s.label).output_grad);
                    precond = update_preconditioner(precond, grads);
                }
            }

            std::vector<Sample> kept;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (keep[i]) {
                    kept.push_back(batch[i]);
                    included[batch_index[i]] = true;
                }
            }
            if (kept.empty()) {
                ++report.skipped_steps;
            } else {
                sgd_step(net, kept, cfg, momentum);
            }
            ++step;
            if (cfg.checkpoint_every_steps > 0 && !options.checkpoint_dir.empty() &&
                step % cfg.checkpoint_every_steps == 0) {
                save_checkpoint(net, options.checkpoint_dir / fmt::format("checkpoint_step_{}.json", step));
            }
        }

        EpochStats stats;
        stats.curated = curating;
        stats.train_loss = mean_loss(net, data.train);
        stats.validation_loss = mean_loss(net, data.validation);
        stats.test_accuracy = data.test.empty() ? 0.0 : accuracy(net, data.test);
        stats.kept = static_cast<std::size_t>(std::count(included.begin(), included.end(), true));
        fill_histogram(stats, epoch_scores);
        report.epochs.push_back(std::move(stats));
        report.inclusion.push_back(std::move(included));
    }
    report.steps = step;
    return result;
}

nlohmann::json to_json(const TrainingReport& report) {
    nlohmann::json doc;
    doc["config"] = to_json(report.config);
    doc["steps"] = report.steps;
    doc["skipped_steps"] = report.skipped_steps;
    doc["train_size"] = report.sample_ids.size();
    auto& epochs = doc["epochs"] = nlohmann::json::array();
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        const auto& s = report.epochs[e];
        epochs.push_back({{"epoch", e},
                          {"curated", s.curated},
                          {"train_loss", s.train_loss},
                          {"validation_loss", s.validation_loss},
                          {"test_accuracy", s.test_accuracy},
                          {"kept", s.kept},
                          {"scored", s.scored},
                          {"histogram", {{"edges", s.histogram_edges}, {"counts", s.histogram_counts}}}});
    }
    auto& traces = doc["probe_traces"] = nlohmann::json::object();
    for (const auto& [id, trace] : report.probe_traces) {
        auto& arr = traces[std::to_string(id)] = nlohmann::json::array();
        for (const auto& [step, b] : trace) arr.push_back({{"step", step}, {"benefit", b}});
    }
    auto& ledger = doc["cost"] = nlohmann::json::object();
    for (const auto& [m, t] : report.ledger.totals) {
        ledger[to_string(m)] = {{"macs", t.macs}, {"cache_bytes", t.cache_bytes}, {"scored", t.scored}, {"kept", t.kept}};
    }
    return doc;
}

}  // namespace onval
