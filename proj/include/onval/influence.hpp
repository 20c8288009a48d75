#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "onval/network.hpp"

namespace onval {

enum class Estimator { IP, Ghost, LAI, LLI, PrecondLAI };

/// PaperSign: the leading-minus influence value. BenefitSign = -PaperSign,
/// positive when keeping the sample is expected to lower validation loss.
enum class SignConvention { PaperSign, BenefitSign };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

/// Per-layer embedding similarity alpha and feedback similarity beta.
struct PairSimilarities {
    Vec alpha;
    Vec beta;
};

struct InfluenceScore {
    double value = 0.0;
    Estimator estimator = Estimator::LAI;
    SignConvention convention = SignConvention::PaperSign;

    InfluenceScore as(SignConvention target) const {
        return target == convention ? *this : InfluenceScore{-value, estimator, target};
    }
};

struct Preconditioner {
    Vec diag;
    double decay = 0.9;
    double floor = 1e-8;

    static Preconditioner identity(std::size_t dim, double decay = 0.9, double floor = 1e-8) {
        return {Vec(dim, 1.0), decay, floor};
    }
};

/// alpha^(l) = <[a_z^(l-1), 1], [a_j^(l-1), 1]>, beta^(l) = <g_z^(l), g_j^(l)>.
PairSimilarities pair_similarities(const SampleTaps& taps_z, const SampleTaps& taps_j);

/// Divides alpha^(l) by dim(a~^(l-1)). Optional cross-layer calibration.
PairSimilarities calibrated(PairSimilarities sims, std::span<const LayerSpec> specs);

InfluenceScore ip_influence(const ParamGrads& pg_z, const ParamGrads& pg_j);
InfluenceScore ghost_influence(const PairSimilarities& sims);
InfluenceScore lai_influence(const PairSimilarities& sims);
InfluenceScore lli_influence(const PairSimilarities& sims);
InfluenceScore preconditioned_score(std::span<const double> gL_z, std::span<const double> gL_j,
                                    const PairSimilarities& sims, const Preconditioner& precond);

/// Sums per-pair scores. The result does not depend on the order of `scores`:
/// values are summed in ascending order.
InfluenceScore aggregate_over_validation(std::span<const InfluenceScore> scores);

Preconditioner update_preconditioner(const Preconditioner& precond, std::span<const Vec> gL_batch);

enum class GapStatus { Ok, UndefinedLaiZero };

struct BoundReport {
    double rho_hat = 0.0;
    double Ca_hat = 0.0;
    double alpha_bar = 0.0;
    double measured_rel_gap = 0.0;
    double bound_value = 0.0;
    bool assumptions_hold = false;
    GapStatus status = GapStatus::Ok;
    double ghost_total = 0.0;
    double lai_total = 0.0;
};

/// Checks the gradient-decay / bounded-activation / alignment assumptions on
/// a set of pairs and compares the measured Ghost-vs-LAI relative gap with
/// the geometric bound (Ca^2/alpha_bar) * sum_{l=1}^{L-1} rho^(2l).
BoundReport bound_diagnostics(std::span<const std::pair<SampleTaps, SampleTaps>> pairs);

struct LabeledPoint {
    Vec features;
    std::size_t label = 0;
};

struct VarianceReport {
    double var_ghost = 0.0;
    double var_lai = 0.0;
    std::vector<double> ghost_scores;
    std::vector<double> lai_scores;
};

/// Resamples validation subsets and returns the sample variance of the
/// aggregated Ghost and LAI scores of `probe` across the resamples.
VarianceReport variance_diagnostic(const Mlp& net, const LabeledPoint& probe, std::span<const LabeledPoint> val_pool,
                                   std::size_t resamples, std::size_t subset_size, std::uint64_t seed);

}  // namespace onval
