#include "onval/commands.hpp"

#include <algorithm>
#include <cmath>

#include "onval/evaluation.hpp"
#include "onval/influence.hpp"
#include "onval/trainer.hpp"

namespace onval::commands {

namespace {

void prepare(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    write_json(to_json(cfg), cfg.output_dir / "resolved_config.json");
}

std::vector<std::int64_t> probe_ids(const ExperimentConfig& cfg, const DatasetBundle& data) {
    if (!cfg.probe_ids.empty()) return cfg.probe_ids;
    std::vector<std::int64_t> ids;
    for (std::size_t k = 0; k < std::min<std::size_t>(8, data.train.size()); ++k) ids.push_back(data.train[k].id);
    return ids;
}

nlohmann::json bound_json(const BoundReport& r) {
    nlohmann::json doc = {{"rho_hat", r.rho_hat},
                          {"Ca_hat", r.Ca_hat},
                          {"alpha_bar", r.alpha_bar},
                          {"bound_value", r.bound_value},
                          {"assumptions_hold", r.assumptions_hold},
                          {"ghost_total", r.ghost_total},
                          {"lai_total", r.lai_total}};
    if (r.status == GapStatus::Ok) {
        doc["status"] = "ok";
        doc["measured_rel_gap"] = r.measured_rel_gap;
        doc["gap_within_bound"] = r.measured_rel_gap <= r.bound_value;
    } else {
        doc["status"] = "undefined_lai_zero";
        doc["measured_rel_gap"] = nullptr;
    }
    return doc;
}

}  // namespace

nlohmann::json generate(const ExperimentConfig& cfg) {
    if (cfg.dataset.source != "blobs") throw ConfigError("dataset.source", "generate needs the blobs generator");
    prepare(cfg);
    const DatasetBundle data = load_dataset(cfg);
    write_csv(cfg.output_dir / "train.csv", data.train);
    write_csv(cfg.output_dir / "validation.csv", data.validation);
    write_csv(cfg.output_dir / "test.csv", data.test);
    nlohmann::json man = manifest(data);
    std::vector<std::int64_t> noisy;
    for (const auto& s : data.train)
        if (s.noisy) noisy.push_back(s.id);
    man["noisy_ids"] = noisy;
    write_json(man, cfg.output_dir / "manifest.json");
    return man;
}

nlohmann::json train(const ExperimentConfig& cfg) {
    prepare(cfg);
    const DatasetBundle data = load_dataset(cfg);
    TrainOptions opts;
    opts.probe_ids = probe_ids(cfg, data);
    opts.checkpoint_dir = cfg.output_dir;
    const TrainResult result = onval::train(cfg.trainer, cfg.model, data, opts);
    emit_training(result.report, cfg.output_dir);
    save_checkpoint(result.net, cfg.output_dir / "checkpoint.json");
    const auto& last = result.report.epochs.back();
    return {{"steps", result.report.steps},
            {"final_test_accuracy", last.test_accuracy},
            {"final_validation_loss", last.validation_loss}};
}

nlohmann::json fidelity(const ExperimentConfig& cfg) {
    prepare(cfg);
    const DatasetBundle data = load_dataset(cfg);
    const FidelityResult result = run_fidelity(cfg.trainer, cfg.model, data, cfg.fidelity);
    emit_fidelity(result.records, result.summary, cfg.output_dir);
    return to_json(result.summary);
}

nlohmann::json diagnose(const ExperimentConfig& cfg) {
    const auto ckpt_path = cfg.diagnose.checkpoint.empty() ? cfg.output_dir / "checkpoint.json" : cfg.diagnose.checkpoint;
    if (!std::filesystem::exists(ckpt_path)) throw std::runtime_error("missing checkpoint: " + ckpt_path.string());
    const Mlp net = load_checkpoint(ckpt_path);
    prepare(cfg);
    const DatasetBundle data = load_dataset(cfg);
    if (net.input_dim() != data.feature_dim) throw std::runtime_error("checkpoint does not match the dataset features");

    // Bound: validation sample k paired with training sample k.
    const std::size_t n_pairs = std::min({cfg.diagnose.pairs, data.train.size(), data.validation.size()});
    std::vector<std::pair<SampleTaps, SampleTaps>> pairs;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const auto& v = data.validation[k];
        const auto& t = data.train[k];
        pairs.emplace_back(full_taps(net, v.features, v.label), full_taps(net, t.features, t.label));
    }
    const BoundReport bound = bound_diagnostics(pairs);
    write_json(bound_json(bound), cfg.output_dir / "bound.json");

    // Variance over resampled validation subsets for the first training sample.
    const auto pool = labeled(data.validation);
    const std::size_t subset = std::min(cfg.diagnose.subset_size, pool.size());
    const LabeledPoint probe{data.train.front().features, data.train.front().label};
    const VarianceReport var = variance_diagnostic(net, probe, pool, cfg.diagnose.resamples, subset, cfg.seed);
    write_json({{"probe_id", data.train.front().id},
                {"resamples", cfg.diagnose.resamples},
                {"subset_size", subset},
                {"pool_size", pool.size()},
                {"var_ghost", var.var_ghost},
                {"var_lai", var.var_lai},
                {"lai_not_above_ghost", var.var_lai <= var.var_ghost}},
               cfg.output_dir / "variance.json");

    // Cost: Ghost, LAI and LLI scoring the same batch against the same validation subset.
    const auto val_take = static_cast<std::size_t>(
        std::ceil(cfg.trainer.val_fraction_per_batch * static_cast<double>(data.validation.size())));
    const std::span<const Sample> val_subset(data.validation.data(), val_take);
    const std::span<const Sample> batch(data.train.data(), std::min(cfg.trainer.batch_size, data.train.size()));
    CostLedger ledger;
    ledger.specs = net.specs();
    ledger.batch_size = batch.size();
    ledger.val_size = val_subset.size();
    const Estimator methods[] = {Estimator::Ghost, Estimator::LAI, Estimator::LLI};
    nlohmann::json closed_form;
    for (Estimator m : methods) {
        TrainerConfig tc = cfg.trainer;
        tc.estimator = m;
        tc.cache_refresh_steps = 1;
        const ValidationCache cache = build_validation_cache(net, val_subset, tc, 0);
        curate_batch(net, batch, cache, tc, 0, CurationContext{nullptr, &ledger});
        const CostModel model = cost_model(ledger.specs, m);
        closed_form[to_string(m)] = {{"pair_macs", model.pair_macs},
                                     {"per_sample_macs", model.per_sample_macs},
                                     {"cache_bytes_per_validation_sample", model.cache_reals_per_sample * sizeof(double)}};
    }
    const CostComparison cmp = ledger_compare(ledger, methods);
    nlohmann::json cost = to_json(cmp);
    cost["batch_size"] = batch.size();
    cost["validation_size"] = val_subset.size();
    cost["closed_form"] = closed_form;
    write_json(cost, cfg.output_dir / "cost.json");

    return {{"bound", bound_json(bound)}, {"ordering_holds", cmp.ordering_holds}};
}

}  // namespace onval::commands
