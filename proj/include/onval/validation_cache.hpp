#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "onval/influence.hpp"
#include "onval/network.hpp"

namespace onval {

/// What one sample contributes to scoring: the stacked augmented activations
/// [a^(0),1 | a^(1),1 | ... | a^(L-1),1], its output gradient, and, for the
/// estimators that need a full backward pass, the per-layer gradients (Ghost)
/// or the flattened parameter gradient (IP).
struct ScoringView {
    Vec stacked;
    Vec output_grad;
    std::vector<Vec> layer_grads;
    Vec flat_grad;
    double loss = 0.0;
};

struct ValidationCache {
    Estimator estimator = Estimator::LAI;
    bool calibrated = false;
    std::size_t step = 0;
    /// Segment l of `stacked` is [offsets[l], offsets[l+1]).
    std::vector<std::size_t> offsets;
    std::vector<ScoringView> entries;

    std::size_t size() const { return entries.size(); }
    /// Resident bytes, counting 8 bytes per stored real.
    std::size_t bytes() const;
};

/// Builds the scoring view of one sample for `estimator`. LAI, LLI and
/// PrecondLAI run forward + output gradient only; Ghost and IP also backprop.
ScoringView make_view(const Mlp& net, std::span<const double> x, std::size_t label, Estimator estimator,
                      bool calibrate);

ValidationCache build_validation_cache(const Mlp& net, std::span<const LabeledPoint> val_subset, Estimator estimator,
                                       std::size_t step, bool calibrate = false);

/// Segment offsets of the stacked activation vector.
std::vector<std::size_t> stack_offsets(std::span<const LayerSpec> specs);

/// PaperSign value of one (validation entry, training view) pair.
double pair_score(const ValidationCache& cache, const ScoringView& val, const ScoringView& train,
                  const Preconditioner* precond);

/// Multiply-accumulate counts of the scoring pass, excluding the shared forward pass.
struct CostModel {
    std::size_t pair_macs = 0;
    std::size_t per_sample_macs = 0;
    std::size_t cache_reals_per_sample = 0;

    std::size_t scoring_macs(std::size_t n_train, std::size_t n_val) const {
        return n_train * per_sample_macs + n_train * n_val * pair_macs;
    }
};

CostModel cost_model(std::span<const LayerSpec> specs, Estimator estimator);

}  // namespace onval
