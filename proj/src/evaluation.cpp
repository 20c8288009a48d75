#include "onval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "onval/kernels.hpp"
#include "onval/oracle.hpp"

namespace onval {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_optional(const std::optional<double>& v) { return v ? format_real(*v) : std::string("nan"); }

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header) {
        throw std::runtime_error(fmt::format("{}: expected header '{}'", path.string(), header));
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        rows.push_back(std::move(fields));
    }
    return rows;
}

std::optional<double> parse_optional(const std::string& s) {
    const double v = std::strtod(s.c_str(), nullptr);
    if (std::isnan(v)) return std::nullopt;
    return v;
}

Vec checkpoint_scores(const Mlp& net, std::span<const Sample> probe, std::span<const LabeledPoint> validation,
                      Estimator estimator) {
    const ValidationCache cache = build_validation_cache(net, validation, estimator, 0, false);
    std::vector<ScoringView> views;
    for (const auto& s : probe) views.push_back(make_view(net, s.features, s.label, estimator, false));
    return kernels::score_batch(cache, views, nullptr);
}

}  // namespace

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    return fmt::format("{:.17g}", v);
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << doc.dump(2) << '\n';
    finish(out, path);
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("pearson: need at least two points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Vec average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    Vec ranks(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    const Vec rx = average_ranks(xs);
    const Vec ry = average_ranks(ys);
    return pearson(rx, ry);
}

double accuracy(const Mlp& net, std::span<const Sample> samples) {
    if (samples.empty()) throw std::invalid_argument("accuracy: no samples");
    std::size_t correct = 0;
    for (const auto& s : samples)
        if (predict(net, s.features) == s.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

FidelityRecord evaluate_checkpoint(const Mlp& net, std::span<const Sample> probe, std::span<const Sample> validation,
                                   double learning_rate, std::size_t permutations, bool exhaustive, std::uint64_t seed,
                                   std::size_t step) {
    FidelityRecord rec;
    rec.step = step;
    for (const auto& s : probe) rec.sample_ids.push_back(s.id);
    const auto val_points = labeled(validation);
    const auto probe_points = labeled(probe);

    for (Estimator e : kFidelityEstimators) rec.scores[e] = checkpoint_scores(net, probe, val_points, e);

    const BatchUtility utility(net, val_points, learning_rate, probe_points);
    const ShapleyEstimate shap = shapley_mc(utility, McOptions{permutations, seed, exhaustive});
    rec.shapley = shap.values;
    rec.shapley_stderr = shap.std_error;

    for (Estimator e : kFidelityEstimators) {
        if (probe.size() < 2) {
            rec.pearson[e] = std::nullopt;
            rec.spearman[e] = std::nullopt;
            continue;
        }
        rec.pearson[e] = pearson(rec.scores[e], rec.shapley);
        rec.spearman[e] = spearman(rec.scores[e], rec.shapley);
    }
    return rec;
}

FidelitySummary summarize(std::span<const FidelityRecord> records, double floor) {
    FidelitySummary summary;
    summary.floor = floor;
    summary.checkpoints = records.size();
    for (Estimator e : kFidelityEstimators) {
        EstimatorSummary s;
        std::vector<double> values;
        for (const auto& rec : records) {
            const auto it = rec.pearson.find(e);
            if (it == rec.pearson.end() || !it->second) {
                ++s.degenerate;
                continue;
            }
            values.push_back(*it->second);
        }
        s.checkpoints = values.size();
        if (!values.empty()) {
            s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
            s.min = *std::min_element(values.begin(), values.end());
            s.max = *std::max_element(values.begin(), values.end());
            double ss = 0.0;
            for (double v : values) ss += (v - s.mean) * (v - s.mean);
            s.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
            s.below_floor = static_cast<std::size_t>(
                std::count_if(values.begin(), values.end(), [&](double v) { return v < floor; }));
        }
        summary.per_estimator[e] = s;
    }
    return summary;
}

FidelityResult run_fidelity(const TrainerConfig& cfg, std::span<const LayerSpec> specs, const DatasetBundle& data,
                            const FidelityOptions& opts) {
    if (opts.probe_batch_size == 0 || opts.probe_batch_size > data.train.size()) {
        throw std::invalid_argument("run_fidelity: probe batch size must be in [1, train size]");
    }
    if (opts.probe_batch_size > 64) throw std::invalid_argument("run_fidelity: probe batch size above 64");
    if (opts.permutations == 0) throw std::invalid_argument("run_fidelity: need at least one permutation");
    if (opts.checkpoint_every == 0) throw std::invalid_argument("run_fidelity: checkpoint_every must be positive");

    TrainerConfig vanilla = cfg;
    vanilla.mode = CurationMode::Off;

    FidelityResult result;
    TrainOptions train_opts;
    train_opts.on_step = [&](std::size_t step, const Mlp& net) {
        if (step % opts.checkpoint_every != 0) return;
        if (opts.max_checkpoints > 0 && result.records.size() >= opts.max_checkpoints) return;
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(step), 0x5eedU};
        std::mt19937_64 rng(seq);
        std::vector<std::size_t> idx(data.train.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(opts.probe_batch_size));
        std::vector<Sample> probe;
        for (std::size_t k = 0; k < opts.probe_batch_size; ++k) probe.push_back(data.train[idx[k]]);
        result.records.push_back(evaluate_checkpoint(net, probe, data.validation, cfg.learning_rate, opts.permutations,
                                                     opts.exhaustive, cfg.seed + step, step));
    };
    train(vanilla, specs, data, train_opts);
    result.summary = summarize(result.records, opts.floor);
    const std::size_t n = opts.probe_batch_size;
    std::size_t fact = 1;
    for (std::size_t k = 2; k <= n && fact <= opts.permutations; ++k) fact *= k;
    result.summary.shapley_exact = opts.exhaustive && fact <= opts.permutations;
    return result;
}

nlohmann::json to_json(const FidelitySummary& summary) {
    nlohmann::json doc;
    doc["checkpoints"] = summary.checkpoints;
    doc["floor"] = summary.floor;
    doc["shapley_exact"] = summary.shapley_exact;
    auto& est = doc["estimators"] = nlohmann::json::object();
    for (const auto& [e, s] : summary.per_estimator) {
        est[to_string(e)] = {{"mean_pearson", s.mean},       {"std_pearson", s.std},
                             {"min_pearson", s.min},         {"max_pearson", s.max},
                             {"checkpoints", s.checkpoints}, {"below_floor", s.below_floor},
                             {"degenerate_checkpoints", s.degenerate}};
    }
    return doc;
}

void emit_fidelity(std::span<const FidelityRecord> records, const FidelitySummary& summary,
                   const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        const auto path = out_dir / "fidelity.csv";
        auto out = open_out(path);
        out << "step,estimator,pearson,spearman\n";
        for (const auto& rec : records) {
            for (Estimator e : kFidelityEstimators) {
                const auto p = rec.pearson.count(e) ? rec.pearson.at(e) : std::nullopt;
                const auto s = rec.spearman.count(e) ? rec.spearman.at(e) : std::nullopt;
                out << rec.step << ',' << to_string(e) << ',' << format_optional(p) << ',' << format_optional(s) << '\n';
            }
        }
        finish(out, path);
    }
    {
        const auto path = out_dir / "fidelity_scores.csv";
        auto out = open_out(path);
        out << "step,sample_id,estimator,score\n";
        for (const auto& rec : records) {
            for (std::size_t i = 0; i < rec.sample_ids.size(); ++i) {
                for (Estimator e : kFidelityEstimators) {
                    out << rec.step << ',' << rec.sample_ids[i] << ',' << to_string(e) << ','
                        << format_real(rec.scores.at(e)[i]) << '\n';
                }
                out << rec.step << ',' << rec.sample_ids[i] << ",shapley," << format_real(rec.shapley[i]) << '\n';
            }
        }
        finish(out, path);
    }
    write_json(to_json(summary), out_dir / "fidelity_summary.json");
}

void emit_training(const TrainingReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_json(to_json(report), out_dir / "training_report.json");
    {
        const auto path = out_dir / "inclusion.csv";
        auto out = open_out(path);
        out << "epoch,sample_id,kept\n";
        for (std::size_t e = 0; e < report.inclusion.size(); ++e) {
            for (std::size_t k = 0; k < report.sample_ids.size(); ++k) {
                out << e << ',' << report.sample_ids[k] << ',' << (report.inclusion[e][k] ? 1 : 0) << '\n';
            }
        }
        finish(out, path);
    }
    {
        const auto path = out_dir / "scores.csv";
        auto out = open_out(path);
        out << "step,sample_id,estimator,benefit\n";
        for (const auto& s : report.scores) {
            out << s.step << ',' << s.sample_id << ',' << to_string(s.estimator) << ',' << format_real(s.benefit) << '\n';
        }
        finish(out, path);
    }
}

void emit_reports(std::span<const FidelityRecord> records, const FidelitySummary& summary, const TrainingReport& report,
                  const std::filesystem::path& out_dir) {
    emit_fidelity(records, summary, out_dir);
    emit_training(report, out_dir);
}

std::vector<FidelityRow> read_fidelity_csv(const std::filesystem::path& path) {
    std::vector<FidelityRow> out;
    for (const auto& f : read_rows(path, "step,estimator,pearson,spearman")) {
        if (f.size() != 4) throw std::runtime_error(path.string() + ": malformed row");
        out.push_back({std::stoul(f[0]), f[1], parse_optional(f[2]), parse_optional(f[3])});
    }
    return out;
}

std::vector<InclusionRow> read_inclusion_csv(const std::filesystem::path& path) {
    std::vector<InclusionRow> out;
    for (const auto& f : read_rows(path, "epoch,sample_id,kept")) {
        if (f.size() != 3) throw std::runtime_error(path.string() + ": malformed row");
        out.push_back({std::stoul(f[0]), std::stoll(f[1]), f[2] == "1"});
    }
    return out;
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
    std::vector<ScoreRow> out;
    for (const auto& f : read_rows(path, "step,sample_id,estimator,benefit")) {
        if (f.size() != 4) throw std::runtime_error(path.string() + ": malformed row");
        out.push_back({std::stoul(f[0]), std::stoll(f[1]), f[2], std::strtod(f[3].c_str(), nullptr)});
    }
    return out;
}

}  // namespace onval
