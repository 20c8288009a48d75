#include "onval/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

namespace onval {

namespace {

void reject_unknown(const nlohmann::json& section, const std::string& path, const std::set<std::string>& known) {
    if (!section.is_object()) throw ConfigError(path, "must be an object");
    for (const auto& [key, value] : section.items()) {
        if (!known.contains(key)) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
    }
}

template <typename T>
void get(const nlohmann::json& section, const std::string& path, const char* key, T& out) {
    if (!section.contains(key)) return;
    try {
        out = section.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + "." + key, "wrong type");
    }
}

DatasetConfig parse_dataset(const nlohmann::json& doc) {
    const std::string path = "dataset";
    reject_unknown(doc, path,
                   {"source", "num_classes", "per_class", "feature_dim", "spread", "center_scale", "flip_rate",
                    "fractions", "train", "validation", "test"});
    DatasetConfig d;
    get(doc, path, "source", d.source);
    get(doc, path, "num_classes", d.blobs.num_classes);
    get(doc, path, "per_class", d.blobs.per_class);
    get(doc, path, "feature_dim", d.blobs.feature_dim);
    get(doc, path, "spread", d.blobs.spread);
    get(doc, path, "center_scale", d.blobs.center_scale);
    get(doc, path, "flip_rate", d.flip_rate);
    get(doc, path, "fractions", d.fractions);
    std::string text;
    if (doc.contains("train")) { get(doc, path, "train", text); d.train_csv = text; }
    if (doc.contains("validation")) { get(doc, path, "validation", text); d.validation_csv = text; }
    if (doc.contains("test")) { get(doc, path, "test", text); d.test_csv = text; }

    if (d.source != "blobs" && d.source != "csv") throw ConfigError("dataset.source", "must be \"blobs\" or \"csv\"");
    if (d.source == "blobs") {
        if (d.blobs.num_classes < 2) throw ConfigError("dataset.num_classes", "must be at least 2");
        if (d.blobs.per_class == 0) throw ConfigError("dataset.per_class", "must be positive");
        if (d.blobs.feature_dim == 0) throw ConfigError("dataset.feature_dim", "must be positive");
        if (!(d.blobs.spread >= 0.0)) throw ConfigError("dataset.spread", "must be nonnegative");
        if (!(d.blobs.center_scale > 0.0)) throw ConfigError("dataset.center_scale", "must be positive");
    } else if (d.train_csv.empty() || d.validation_csv.empty() || d.test_csv.empty()) {
        throw ConfigError("dataset", "csv source needs train, validation and test paths");
    }
    if (!(d.flip_rate >= 0.0 && d.flip_rate <= 1.0)) throw ConfigError("dataset.flip_rate", "must be in [0, 1]");
    for (double f : d.fractions)
        if (!(f > 0.0)) throw ConfigError("dataset.fractions", "must be positive");
    if (std::abs(d.fractions[0] + d.fractions[1] + d.fractions[2] - 1.0) > 1e-9) {
        throw ConfigError("dataset.fractions", "must sum to 1");
    }
    return d;
}

std::vector<LayerSpec> parse_model(const nlohmann::json& doc) {
    reject_unknown(doc, "model", {"layers"});
    if (!doc.contains("layers") || !doc.at("layers").is_array() || doc.at("layers").empty()) {
        throw ConfigError("model.layers", "must be a nonempty array");
    }
    std::vector<LayerSpec> specs;
    for (std::size_t l = 0; l < doc.at("layers").size(); ++l) {
        const auto& entry = doc.at("layers")[l];
        const std::string path = fmt::format("model.layers[{}]", l);
        reject_unknown(entry, path, {"in_dim", "out_dim", "activation"});
        LayerSpec spec;
        std::string act = "linear";
        get(entry, path, "in_dim", spec.in_dim);
        get(entry, path, "out_dim", spec.out_dim);
        get(entry, path, "activation", act);
        try {
            spec.activation = activation_from_string(act);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(path + ".activation", e.what());
        }
        specs.push_back(spec);
    }
    try {
        validate_specs(specs);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("model.layers", e.what());
    }
    return specs;
}

FidelityOptions parse_fidelity(const nlohmann::json& doc) {
    const std::string path = "fidelity";
    reject_unknown(doc, path, {"probe_batch_size", "checkpoint_every", "max_checkpoints", "permutations", "exhaustive", "floor"});
    FidelityOptions f;
    get(doc, path, "probe_batch_size", f.probe_batch_size);
    get(doc, path, "checkpoint_every", f.checkpoint_every);
    get(doc, path, "max_checkpoints", f.max_checkpoints);
    get(doc, path, "permutations", f.permutations);
    get(doc, path, "exhaustive", f.exhaustive);
    get(doc, path, "floor", f.floor);
    if (f.probe_batch_size == 0 || f.probe_batch_size > 64) throw ConfigError("fidelity.probe_batch_size", "must be in [1, 64]");
    if (f.checkpoint_every == 0) throw ConfigError("fidelity.checkpoint_every", "must be positive");
    if (f.permutations == 0) throw ConfigError("fidelity.permutations", "must be positive");
    return f;
}

DiagnoseConfig parse_diagnose(const nlohmann::json& doc) {
    const std::string path = "diagnose";
    reject_unknown(doc, path, {"checkpoint", "pairs", "resamples", "subset_size"});
    DiagnoseConfig d;
    std::string text;
    if (doc.contains("checkpoint")) { get(doc, path, "checkpoint", text); d.checkpoint = text; }
    get(doc, path, "pairs", d.pairs);
    get(doc, path, "resamples", d.resamples);
    get(doc, path, "subset_size", d.subset_size);
    if (d.pairs == 0) throw ConfigError("diagnose.pairs", "must be positive");
    if (d.resamples < 2) throw ConfigError("diagnose.resamples", "must be at least 2");
    if (d.subset_size == 0) throw ConfigError("diagnose.subset_size", "must be positive");
    return d;
}

}  // namespace

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like section.key=value");
    const std::string key_path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key_path.find('.', start);
        const std::string part = key_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key_path, "empty path component");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ConfigError(key_path, "path goes through a non-object");
        start = dot + 1;
    }
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
    reject_unknown(doc, "", {"seed", "output_dir", "dataset", "model", "trainer", "fidelity", "diagnose", "probe_ids"});
    ExperimentConfig cfg;
    get(doc, "", "seed", cfg.seed);
    std::string out = cfg.output_dir.string();
    get(doc, "", "output_dir", out);
    cfg.output_dir = out;
    get(doc, "", "probe_ids", cfg.probe_ids);
    cfg.dataset = parse_dataset(doc.value("dataset", nlohmann::json::object()));
    if (!doc.contains("model")) throw ConfigError("model", "missing section");
    cfg.model = parse_model(doc.at("model"));

    nlohmann::json trainer = doc.value("trainer", nlohmann::json::object());
    if (!trainer.is_object()) throw ConfigError("trainer", "must be an object");
    if (!trainer.contains("seed")) trainer["seed"] = cfg.seed;
    cfg.trainer = trainer_config_from_json(trainer);
    cfg.fidelity = parse_fidelity(doc.value("fidelity", nlohmann::json::object()));
    cfg.diagnose = parse_diagnose(doc.value("diagnose", nlohmann::json::object()));

    if (cfg.dataset.source == "blobs") {
        if (cfg.model.front().in_dim != cfg.dataset.blobs.feature_dim) {
            throw ConfigError("model.layers[0].in_dim", "must equal dataset.feature_dim");
        }
        if (cfg.model.back().out_dim != cfg.dataset.blobs.num_classes) {
            throw ConfigError("model.layers", "final out_dim must equal dataset.num_classes");
        }
    }
    return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json doc;
    doc["seed"] = cfg.seed;
    doc["output_dir"] = cfg.output_dir.string();
    doc["probe_ids"] = cfg.probe_ids;
    const auto& d = cfg.dataset;
    doc["dataset"] = {{"source", d.source},
                      {"num_classes", d.blobs.num_classes},
                      {"per_class", d.blobs.per_class},
                      {"feature_dim", d.blobs.feature_dim},
                      {"spread", d.blobs.spread},
                      {"center_scale", d.blobs.center_scale},
                      {"flip_rate", d.flip_rate},
                      {"fractions", d.fractions}};
    if (d.source == "csv") {
        doc["dataset"]["train"] = d.train_csv.string();
        doc["dataset"]["validation"] = d.validation_csv.string();
        doc["dataset"]["test"] = d.test_csv.string();
    }
    auto& layers = doc["model"]["layers"] = nlohmann::json::array();
    for (const auto& s : cfg.model) {
        layers.push_back({{"in_dim", s.in_dim}, {"out_dim", s.out_dim}, {"activation", to_string(s.activation)}});
    }
    doc["trainer"] = to_json(cfg.trainer);
    const auto& f = cfg.fidelity;
    doc["fidelity"] = {{"probe_batch_size", f.probe_batch_size}, {"checkpoint_every", f.checkpoint_every},
                       {"max_checkpoints", f.max_checkpoints},   {"permutations", f.permutations},
                       {"exhaustive", f.exhaustive},             {"floor", f.floor}};
    doc["diagnose"] = {{"pairs", cfg.diagnose.pairs},
                       {"resamples", cfg.diagnose.resamples},
                       {"subset_size", cfg.diagnose.subset_size}};
    if (!cfg.diagnose.checkpoint.empty()) doc["diagnose"]["checkpoint"] = cfg.diagnose.checkpoint.string();
    return doc;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(path.string(), "not valid JSON");
    return doc;
}

DatasetBundle load_dataset(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    if (d.source == "blobs") return synthetic_bundle(d.blobs, d.flip_rate, d.fractions, cfg.seed);

    DatasetBundle bundle;
    bundle.seed = cfg.seed;
    bundle.fractions = d.fractions;
    bundle.train = load_csv(d.train_csv);
    bundle.validation = load_csv(d.validation_csv);
    bundle.test = load_csv(d.test_csv);
    for (const auto* split : {&bundle.train, &bundle.validation, &bundle.test}) {
        for (const auto& s : *split) {
            bundle.num_classes = std::max(bundle.num_classes, s.label + 1);
            if (bundle.feature_dim == 0) bundle.feature_dim = s.features.size();
            if (s.features.size() != bundle.feature_dim) throw std::runtime_error("csv splits disagree on feature count");
        }
    }
    bundle.num_classes = std::max(bundle.num_classes, cfg.model.back().out_dim);
    return bundle;
}

}  // namespace onval
