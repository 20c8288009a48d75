#include "onval/validation_cache.hpp"

#include <cmath>
#include <stdexcept>

namespace onval {

namespace {

bool needs_backward(Estimator e) { return e == Estimator::Ghost || e == Estimator::IP; }

void append_segment(Vec& out, const Vec& a, double scale) {
    for (double v : a) out.push_back(v * scale);
    out.push_back(scale);
}

double segment_dot(const Vec& a, const Vec& b, std::size_t begin, std::size_t end) {
    double acc = 0.0;
    for (std::size_t k = begin; k < end; ++k) acc += a[k] * b[k];
    return acc;
}

}  // namespace

std::size_t ValidationCache::bytes() const {
    std::size_t reals = 0;
    for (const auto& e : entries) {
        reals += e.stacked.size() + e.output_grad.size() + e.flat_grad.size();
        for (const auto& g : e.layer_grads) reals += g.size();
    }
    return reals * sizeof(double);
}

std::vector<std::size_t> stack_offsets(std::span<const LayerSpec> specs) {
    std::vector<std::size_t> offsets{0};
    for (const auto& s : specs) offsets.push_back(offsets.back() + s.in_dim + 1);
    return offsets;
}

ScoringView make_view(const Mlp& net, std::span<const double> x, std::size_t label, Estimator estimator,
                      bool calibrate) {
    SampleTaps taps = needs_backward(estimator) ? full_taps(net, x, label) : output_taps(net, x, label);
    ScoringView view;
    view.loss = taps.loss;
    const std::size_t depth = taps.depth();

    if (estimator == Estimator::IP) {
        view.flat_grad = param_grads(taps).flatten();
        return view;
    }

    const std::size_t first = estimator == Estimator::LLI ? depth - 1 : 0;
    for (std::size_t l = first; l < depth; ++l) {
        const double scale = calibrate ? 1.0 / std::sqrt(static_cast<double>(taps.activations[l].size() + 1)) : 1.0;
        append_segment(view.stacked, taps.activations[l], scale);
    }
    if (estimator == Estimator::Ghost) {
        view.layer_grads = std::move(taps.layer_grads);
    } else {
        view.output_grad = std::move(taps.output_grad);
    }
    return view;
}

ValidationCache build_validation_cache(const Mlp& net, std::span<const LabeledPoint> val_subset, Estimator estimator,
                                       std::size_t step, bool calibrate) {
    if (val_subset.empty()) throw std::invalid_argument("build_validation_cache: empty validation subset");
    ValidationCache cache;
    cache.estimator = estimator;
    cache.calibrated = calibrate;
    cache.step = step;
    const auto specs = net.specs();
    if (estimator == Estimator::LLI) {
        cache.offsets = {0, specs.back().in_dim + 1};
    } else {
        cache.offsets = stack_offsets(specs);
    }
    cache.entries.resize(val_subset.size());
    #pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(val_subset.size()); ++k) {
        const auto& v = val_subset[static_cast<std::size_t>(k)];
        cache.entries[static_cast<std::size_t>(k)] = make_view(net, v.features, v.label, estimator, calibrate);
    }
    return cache;
}

double pair_score(const ValidationCache& cache, const ScoringView& val, const ScoringView& train,
                  const Preconditioner* precond) {
    switch (cache.estimator) {
        case Estimator::LAI:
        case Estimator::LLI:
            return -dot(val.stacked, train.stacked) * dot(val.output_grad, train.output_grad);
        case Estimator::PrecondLAI: {
            if (precond == nullptr) throw std::invalid_argument("pair_score: PrecondLAI needs a preconditioner");
            double beta = 0.0;
            for (std::size_t k = 0; k < val.output_grad.size(); ++k) {
                beta += val.output_grad[k] * train.output_grad[k] / precond->diag[k];
            }
            return -dot(val.stacked, train.stacked) * beta;
        }
        case Estimator::Ghost: {
            double total = 0.0;
            for (std::size_t l = 0; l < val.layer_grads.size(); ++l) {
                const double alpha = segment_dot(val.stacked, train.stacked, cache.offsets[l], cache.offsets[l + 1]);
                total += alpha * dot(val.layer_grads[l], train.layer_grads[l]);
            }
            return -total;
        }
        case Estimator::IP:
            return -dot(val.flat_grad, train.flat_grad);
    }
    return 0.0;
}

CostModel cost_model(std::span<const LayerSpec> specs, Estimator estimator) {
    validate_specs(specs);
    std::size_t stacked = 0;   // sum_l dim(a~^(l-1))
    std::size_t grads = 0;     // sum_l dim(g^(l))
    std::size_t params = 0;    // sum_l d_l (d_{l-1} + 1)
    std::size_t outer = 0;     // sum_l d_l d_{l-1}
    std::size_t backward = 0;  // sum_{l>=2} (d_l d_{l-1} + d_{l-1})
    for (std::size_t l = 0; l < specs.size(); ++l) {
        stacked += specs[l].in_dim + 1;
        grads += specs[l].out_dim;
        params += specs[l].out_dim * (specs[l].in_dim + 1);
        outer += specs[l].out_dim * specs[l].in_dim;
        if (l > 0) backward += specs[l].out_dim * specs[l].in_dim + specs[l].in_dim;
    }
    const std::size_t out_dim = specs.back().out_dim;
    const std::size_t last = specs.back().in_dim + 1;

    CostModel m;
    switch (estimator) {
        case Estimator::LAI:
            m.pair_macs = stacked + out_dim + 1;
            m.cache_reals_per_sample = stacked + out_dim;
            break;
        case Estimator::PrecondLAI:
            m.pair_macs = stacked + 2 * out_dim + 1;
            m.cache_reals_per_sample = stacked + out_dim;
            break;
        case Estimator::LLI:
            m.pair_macs = last + out_dim + 1;
            m.cache_reals_per_sample = last + out_dim;
            break;
        case Estimator::Ghost:
            m.pair_macs = stacked + grads + specs.size();
            m.per_sample_macs = backward;
            m.cache_reals_per_sample = stacked + grads;
            break;
        case Estimator::IP:
            m.pair_macs = params;
            m.per_sample_macs = backward + outer;
            m.cache_reals_per_sample = params;
            break;
    }
    return m;
}

}  // namespace onval
