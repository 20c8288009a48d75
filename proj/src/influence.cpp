#include "onval/influence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace onval {

namespace {

double augmented_dot(const Vec& a, const Vec& b) { return dot(a, b) + 1.0; }

void require_same_shape(const SampleTaps& z, const SampleTaps& j) {
    if (!z.complete() || !j.complete()) throw std::logic_error("pair_similarities: taps need a backward pass");
    if (z.depth() != j.depth()) throw DimensionError("pair_similarities: depth mismatch");
    for (std::size_t l = 0; l < z.depth(); ++l) {
        if (z.activations[l].size() != j.activations[l].size() || z.layer_grads[l].size() != j.layer_grads[l].size()) {
            throw DimensionError(fmt::format("pair_similarities: layer {} shape mismatch", l + 1));
        }
    }
}

double lai_value(const PairSimilarities& sims, double beta_out) {
    const double alpha_sum = std::accumulate(sims.alpha.begin(), sims.alpha.end(), 0.0);
    return -alpha_sum * beta_out;
}

// Shifted by the first value so a constant sequence gives exactly 0.
double sample_variance(std::span<const double> xs) {
    const double n = static_cast<double>(xs.size());
    double sum = 0.0;
    double sq = 0.0;
    for (double x : xs) {
        sum += x - xs.front();
        sq += (x - xs.front()) * (x - xs.front());
    }
    return std::max(0.0, (sq - sum * sum / n) / (n - 1.0));
}

}  // namespace

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::IP: return "ip";
        case Estimator::Ghost: return "ghost";
        case Estimator::LAI: return "lai";
        case Estimator::LLI: return "lli";
        case Estimator::PrecondLAI: return "precond_lai";
    }
    return "lai";
}

Estimator estimator_from_string(const std::string& name) {
    if (name == "ip") return Estimator::IP;
    if (name == "ghost") return Estimator::Ghost;
    if (name == "lai") return Estimator::LAI;
    if (name == "lli") return Estimator::LLI;
    if (name == "precond_lai") return Estimator::PrecondLAI;
    throw std::invalid_argument("unknown estimator '" + name + "'");
}

PairSimilarities pair_similarities(const SampleTaps& taps_z, const SampleTaps& taps_j) {
    require_same_shape(taps_z, taps_j);
    PairSimilarities sims;
    const std::size_t depth = taps_z.depth();
    sims.alpha.resize(depth);
    sims.beta.resize(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        sims.alpha[l] = augmented_dot(taps_z.activations[l], taps_j.activations[l]);
        sims.beta[l] = dot(taps_z.layer_grads[l], taps_j.layer_grads[l]);
    }
    return sims;
}

PairSimilarities calibrated(PairSimilarities sims, std::span<const LayerSpec> specs) {
    if (specs.size() != sims.alpha.size()) throw DimensionError("calibrated: depth mismatch");
    for (std::size_t l = 0; l < specs.size(); ++l) sims.alpha[l] /= static_cast<double>(specs[l].in_dim + 1);
    return sims;
}

InfluenceScore ip_influence(const ParamGrads& pg_z, const ParamGrads& pg_j) {
    if (pg_z.layers.size() != pg_j.layers.size()) throw DimensionError("ip_influence: depth mismatch");
    double total = 0.0;
    for (std::size_t l = 0; l < pg_z.layers.size(); ++l) {
        total += dot(pg_z.layers[l].weights.data, pg_j.layers[l].weights.data);
        total += dot(pg_z.layers[l].bias, pg_j.layers[l].bias);
    }
    return {-total, Estimator::IP, SignConvention::PaperSign};
}

InfluenceScore ghost_influence(const PairSimilarities& sims) {
    double total = 0.0;
    for (std::size_t l = 0; l < sims.alpha.size(); ++l) total += sims.alpha[l] * sims.beta[l];
    return {-total, Estimator::Ghost, SignConvention::PaperSign};
}

InfluenceScore lai_influence(const PairSimilarities& sims) {
    return {lai_value(sims, sims.beta.back()), Estimator::LAI, SignConvention::PaperSign};
}

InfluenceScore lli_influence(const PairSimilarities& sims) {
    return {-sims.alpha.back() * sims.beta.back(), Estimator::LLI, SignConvention::PaperSign};
}

InfluenceScore preconditioned_score(std::span<const double> gL_z, std::span<const double> gL_j,
                                    const PairSimilarities& sims, const Preconditioner& precond) {
    if (gL_z.size() != precond.diag.size() || gL_j.size() != precond.diag.size()) {
        throw DimensionError("preconditioned_score: preconditioner length mismatch");
    }
    double beta = 0.0;
    for (std::size_t k = 0; k < gL_z.size(); ++k) {
        if (!(precond.diag[k] > 0.0)) throw std::invalid_argument("preconditioned_score: nonpositive D entry");
        beta += gL_z[k] * gL_j[k] / precond.diag[k];
    }
    return {lai_value(sims, beta), Estimator::PrecondLAI, SignConvention::PaperSign};
}

InfluenceScore aggregate_over_validation(std::span<const InfluenceScore> scores) {
    if (scores.empty()) throw std::invalid_argument("aggregate_over_validation: no scores");
    const auto estimator = scores.front().estimator;
    const auto convention = scores.front().convention;
    std::vector<double> values;
    values.reserve(scores.size());
    for (const auto& s : scores) {
        if (s.estimator != estimator || s.convention != convention) {
            throw std::invalid_argument("aggregate_over_validation: mixed estimators or sign conventions");
        }
        values.push_back(s.value);
    }
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return {total, estimator, convention};
}

Preconditioner update_preconditioner(const Preconditioner& precond, std::span<const Vec> gL_batch) {
    if (gL_batch.empty()) throw std::invalid_argument("update_preconditioner: empty batch");
    const std::size_t dim = precond.diag.size();
    Vec mean_sq(dim, 0.0);
    for (const auto& g : gL_batch) {
        if (g.size() != dim) throw DimensionError("update_preconditioner: gradient length mismatch");
        for (std::size_t k = 0; k < dim; ++k) mean_sq[k] += g[k] * g[k];
    }
    Preconditioner next = precond;
    for (std::size_t k = 0; k < dim; ++k) {
        mean_sq[k] /= static_cast<double>(gL_batch.size());
        next.diag[k] = std::max(precond.decay * precond.diag[k] + (1.0 - precond.decay) * mean_sq[k], precond.floor);
    }
    return next;
}

BoundReport bound_diagnostics(std::span<const std::pair<SampleTaps, SampleTaps>> pairs) {
    if (pairs.empty()) throw std::invalid_argument("bound_diagnostics: no pairs");
    const std::size_t depth = pairs.front().first.depth();

    BoundReport report;
    bool assumptions = true;
    double alpha_bar = std::numeric_limits<double>::infinity();
    std::vector<double> ghost_vals;
    std::vector<double> lai_vals;

    auto visit_sample = [&](const SampleTaps& t) {
        for (std::size_t l = 0; l < depth; ++l) {
            report.Ca_hat = std::max(report.Ca_hat, std::sqrt(dot(t.activations[l], t.activations[l]) + 1.0));
        }
        const double out_norm = norm2(t.layer_grads[depth - 1]);
        for (std::size_t l = 0; l + 1 < depth; ++l) {
            const double ratio = norm2(t.layer_grads[l]);
            double rho;
            if (out_norm > 0.0) {
                rho = std::pow(ratio / out_norm, 1.0 / static_cast<double>(depth - 1 - l));
            } else {
                rho = ratio > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
                assumptions = false;
            }
            report.rho_hat = std::max(report.rho_hat, rho);
        }
    };

    for (const auto& [z, j] : pairs) {
        if (z.depth() != depth) throw DimensionError("bound_diagnostics: mixed depths");
        visit_sample(z);
        visit_sample(j);
        const PairSimilarities sims = pair_similarities(z, j);
        alpha_bar = std::min(alpha_bar, sims.alpha.back());
        ghost_vals.push_back(ghost_influence(sims).value);
        lai_vals.push_back(lai_influence(sims).value);

        for (std::size_t l = 0; l < depth; ++l) {
            if (sims.beta[l] < 0.0 || sims.alpha[l] < 0.0) assumptions = false;
        }
        // Alignment must not increase toward lower layers.
        auto cosine = [&](std::size_t l) {
            const double nz = norm2(z.layer_grads[l]);
            const double nj = norm2(j.layer_grads[l]);
            return (nz > 0.0 && nj > 0.0) ? sims.beta[l] / (nz * nj) : 0.0;
        };
        for (std::size_t l = 0; l + 1 < depth; ++l) {
            if (cosine(l) > cosine(l + 1) + 1e-12) assumptions = false;
        }
    }

    report.alpha_bar = alpha_bar;
    std::sort(ghost_vals.begin(), ghost_vals.end());
    std::sort(lai_vals.begin(), lai_vals.end());
    for (double v : ghost_vals) report.ghost_total += v;
    for (double v : lai_vals) report.lai_total += v;

    if (depth == 1) {
        report.measured_rel_gap = 0.0;
    } else if (report.lai_total == 0.0) {
        report.status = GapStatus::UndefinedLaiZero;
        report.measured_rel_gap = std::numeric_limits<double>::quiet_NaN();
    } else {
        report.measured_rel_gap = std::abs(report.ghost_total - report.lai_total) / std::abs(report.lai_total);
    }

    double geometric = 0.0;
    const double rho_sq = report.rho_hat * report.rho_hat;
    double term = 1.0;
    for (std::size_t l = 1; l < depth; ++l) {
        term *= rho_sq;
        geometric += term;
    }
    if (depth == 1) {
        report.bound_value = 0.0;
    } else if (alpha_bar > 0.0 && std::isfinite(geometric)) {
        report.bound_value = report.Ca_hat * report.Ca_hat / alpha_bar * geometric;
    } else {
        report.bound_value = std::numeric_limits<double>::infinity();
    }
    report.assumptions_hold = assumptions && report.rho_hat < 1.0 && alpha_bar > 0.0;
    return report;
}

VarianceReport variance_diagnostic(const Mlp& net, const LabeledPoint& probe, std::span<const LabeledPoint> val_pool,
                                   std::size_t resamples, std::size_t subset_size, std::uint64_t seed) {
    if (resamples < 2) throw std::invalid_argument("variance_diagnostic: need at least 2 resamples");
    if (val_pool.empty() || subset_size == 0 || subset_size > val_pool.size()) {
        throw std::invalid_argument("variance_diagnostic: degenerate validation pool");
    }
    const SampleTaps probe_taps = full_taps(net, probe.features, probe.label);
    std::vector<PairSimilarities> sims;
    sims.reserve(val_pool.size());
    for (const auto& v : val_pool) sims.push_back(pair_similarities(full_taps(net, v.features, v.label), probe_taps));

    VarianceReport report;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(val_pool.size());
    for (std::size_t r = 0; r < resamples; ++r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(subset_size));
        std::vector<InfluenceScore> ghost;
        std::vector<InfluenceScore> lai;
        for (std::size_t k = 0; k < subset_size; ++k) {
            ghost.push_back(ghost_influence(sims[order[k]]));
            lai.push_back(lai_influence(sims[order[k]]));
        }
        report.ghost_scores.push_back(aggregate_over_validation(ghost).value);
        report.lai_scores.push_back(aggregate_over_validation(lai).value);
    }
    report.var_ghost = sample_variance(report.ghost_scores);
    report.var_lai = sample_variance(report.lai_scores);
    return report;
}

}  // namespace onval
