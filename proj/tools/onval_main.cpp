// onval: online data valuation experiments.
//
//   onval generate --config cfg.json [--out dir] [--seed n] [--set section.key=value ...]
//   onval train    ...
//   onval fidelity ...
//   onval diagnose ...
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error. Errors are
// reported on stderr as a one-line JSON record.

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "onval/commands.hpp"
#include "onval/config.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Args {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void report_error(const std::string& kind, const std::string& message, const std::string& path = {}) {
    nlohmann::json err = {{"error", {{"kind", kind}, {"message", message}}}};
    if (!path.empty()) err["error"]["path"] = path;
    std::cerr << err.dump() << '\n';
}

onval::ExperimentConfig resolve(const Args& args) {
    nlohmann::json doc = onval::read_json_file(args.config);
    for (const auto& o : args.overrides) onval::apply_override(doc, o);
    if (!args.out.empty()) doc["output_dir"] = args.out;
    if (args.seed) {
        doc["seed"] = *args.seed;
        if (doc.contains("trainer") && doc["trainer"].is_object()) doc["trainer"]["seed"] = *args.seed;
    }
    return onval::parse_config(doc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online data valuation for small MLPs"};
    app.require_subcommand(1);

    Args args;
    std::string chosen;
    const std::pair<const char*, const char*> commands[] = {
        {"generate", "write synthetic train/validation/test CSVs and a manifest"},
        {"train", "train with optional online curation; writes reports and a checkpoint"},
        {"fidelity", "correlate estimator scores with Monte-Carlo Shapley values along training"},
        {"diagnose", "cost ledger, variance and bound diagnostics for a saved checkpoint"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config, "experiment config (JSON)")->required();
        sub->add_option("--out", args.out, "output directory (overrides output_dir)");
        sub->add_option("--set", args.overrides, "override a field: section.key=value")->take_all();
        sub->add_option("--seed", args.seed, "global seed override");
        sub->callback([&chosen, name] { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    onval::ExperimentConfig cfg;
    try {
        cfg = resolve(args);
    } catch (const onval::ConfigError& e) {
        report_error("config", e.what(), e.path);
        return kExitConfig;
    } catch (const std::exception& e) {
        report_error("config", e.what());
        return kExitConfig;
    }

    try {
        nlohmann::json summary;
        if (chosen == "generate") summary = onval::commands::generate(cfg);
        else if (chosen == "train") summary = onval::commands::train(cfg);
        else if (chosen == "fidelity") summary = onval::commands::fidelity(cfg);
        else summary = onval::commands::diagnose(cfg);
        std::cout << summary.dump() << '\n';
    } catch (const onval::ConfigError& e) {
        report_error("config", e.what(), e.path);
        return kExitConfig;
    } catch (const std::exception& e) {
        report_error("runtime", e.what());
        return kExitRuntime;
    }
    return 0;
}
