#include "onval/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace onval {

BatchUtility::BatchUtility(Mlp net, std::vector<LabeledPoint> validation, double learning_rate,
                           std::span<const LabeledPoint> batch)
    : net_(std::move(net)), validation_(std::move(validation)), learning_rate_(learning_rate) {
    if (validation_.empty()) throw std::invalid_argument("BatchUtility: empty validation set");
    if (batch.size() > 64) throw std::invalid_argument("BatchUtility: batch larger than 64");
    params_ = flatten_params(net_);
    grads_.reserve(batch.size());
    for (const auto& p : batch) grads_.push_back(param_grads(full_taps(net_, p.features, p.label)).flatten());
    base_loss_ = validation_loss(net_);
}

double BatchUtility::validation_loss(const Mlp& net) const {
    double total = 0.0;
    for (const auto& v : validation_) total += sample_loss(net, v.features, v.label);
    return total / static_cast<double>(validation_.size());
}

double BatchUtility::of_grad_sum(std::span<const double> grad_sum, Mlp& scratch) const {
    const double scale = learning_rate_ / static_cast<double>(grads_.size());
    Vec stepped(params_.size());
    for (std::size_t k = 0; k < stepped.size(); ++k) stepped[k] = params_[k] - scale * grad_sum[k];
    assign_params(scratch, stepped);
    return base_loss_ - validation_loss(scratch);
}

double BatchUtility::operator()(std::span<const std::size_t> subset) const {
    if (subset.empty() || learning_rate_ == 0.0) return 0.0;
    Vec sum(params_.size(), 0.0);
    for (std::size_t i : subset) {
        if (i >= grads_.size()) throw std::out_of_range(fmt::format("subset index {} outside batch", i));
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += grads_[i][k];
    }
    Mlp scratch = net_;
    return of_grad_sum(sum, scratch);
}

double BatchUtility::of_mask(std::uint64_t mask) const {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < grads_.size(); ++i)
        if (mask >> i & 1U) subset.push_back(i);
    return (*this)(subset);
}

double subset_utility(const BatchUtility& u, std::span<const std::size_t> subset) { return u(subset); }

ShapleyEstimate shapley_exact(const BatchUtility& u) {
    const std::size_t n = u.batch_size();
    if (n == 0) throw std::invalid_argument("shapley_exact: empty batch");
    if (n > kMaxExactBatch) throw std::invalid_argument(fmt::format("shapley_exact: batch of {} exceeds {}", n, kMaxExactBatch));

    const std::uint64_t full = (std::uint64_t{1} << n) - 1;
    std::vector<double> value(full + 1);
    #pragma omp parallel for schedule(dynamic)
    for (std::int64_t mask = 0; mask <= static_cast<std::int64_t>(full); ++mask) {
        value[static_cast<std::size_t>(mask)] = u.of_mask(static_cast<std::uint64_t>(mask));
    }

    // weight(s) = s! (n-s-1)! / n!
    std::vector<double> weight(n);
    for (std::size_t s = 0; s < n; ++s) {
        weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1.0) + std::lgamma(static_cast<double>(n - s)) -
                             std::lgamma(static_cast<double>(n) + 1.0));
    }

    ShapleyEstimate est;
    est.values.assign(n, 0.0);
    est.std_error.assign(n, 0.0);
    est.exact = true;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bit = std::uint64_t{1} << i;
        for (std::uint64_t mask = 0; mask <= full; ++mask) {
            if (mask & bit) continue;
            const auto size = static_cast<std::size_t>(std::popcount(mask));
            est.values[i] += weight[size] * (value[mask | bit] - value[mask]);
        }
    }
    return est;
}

namespace {

std::size_t factorial_capped(std::size_t n, std::size_t cap) {
    std::size_t f = 1;
    for (std::size_t k = 2; k <= n; ++k) {
        if (f > cap / k) return cap + 1;
        f *= k;
    }
    return f;
}

std::vector<std::vector<std::size_t>> make_orderings(std::size_t n, const McOptions& opts) {
    std::vector<std::vector<std::size_t>> orderings;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (opts.exhaustive && factorial_capped(n, opts.permutations) <= opts.permutations) {
        do {
            orderings.push_back(perm);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return orderings;
    }
    orderings.reserve(opts.permutations);
    for (std::size_t k = 0; k < opts.permutations; ++k) {
        std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                          static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
        std::mt19937_64 rng(seq);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        orderings.push_back(perm);
    }
    return orderings;
}

// Marginal contributions of each member along one ordering, indexed by member.
void ordering_marginals(const BatchUtility& u, std::span<const std::size_t> order, Mlp& scratch, double* out) {
    Vec running(u.grad(0).size(), 0.0);
    double prev = 0.0;
    for (std::size_t i : order) {
        const Vec& g = u.grad(i);
        for (std::size_t k = 0; k < running.size(); ++k) running[k] += g[k];
        const double cur = u.learning_rate() == 0.0 ? 0.0 : u.of_grad_sum(running, scratch);
        out[i] = cur - prev;
        prev = cur;
    }
}

ShapleyEstimate reduce_marginals(const std::vector<double>& marginals, std::size_t n, std::size_t count,
                                 const McOptions& opts, bool exhaustive) {
    ShapleyEstimate est;
    est.values.assign(n, 0.0);
    est.std_error.assign(n, 0.0);
    est.permutations_used = count;
    est.seed = opts.seed;
    est.exact = exhaustive;
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t i = 0; i < n; ++i) est.values[i] += marginals[p * n + i];
    for (auto& v : est.values) v /= static_cast<double>(count);
    if (count > 1 && !exhaustive) {
        for (std::size_t i = 0; i < n; ++i) {
            double ss = 0.0;
            for (std::size_t p = 0; p < count; ++p) {
                const double d = marginals[p * n + i] - est.values[i];
                ss += d * d;
            }
            est.std_error[i] = std::sqrt(ss / static_cast<double>(count - 1)) / std::sqrt(static_cast<double>(count));
        }
    }
    return est;
}

void check_mc_args(const BatchUtility& u, const McOptions& opts) {
    if (u.batch_size() == 0) throw std::invalid_argument("shapley_mc: empty batch");
    if (opts.permutations == 0) throw std::invalid_argument("shapley_mc: need at least one permutation");
}

}  // namespace

ShapleyEstimate shapley_mc(const BatchUtility& u, const McOptions& opts) {
    check_mc_args(u, opts);
    const std::size_t n = u.batch_size();
    const auto orderings = make_orderings(n, opts);
    const bool exhaustive = opts.exhaustive && factorial_capped(n, opts.permutations) <= opts.permutations;
    std::vector<double> marginals(orderings.size() * n);
    #pragma omp parallel
    {
        Mlp scratch = u.net();
        #pragma omp for schedule(static)
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(orderings.size()); ++p) {
            const auto idx = static_cast<std::size_t>(p);
            ordering_marginals(u, orderings[idx], scratch, marginals.data() + idx * n);
        }
    }
    return reduce_marginals(marginals, n, orderings.size(), opts, exhaustive);
}

ShapleyEstimate shapley_mc_serial(const BatchUtility& u, const McOptions& opts) {
    check_mc_args(u, opts);
    const std::size_t n = u.batch_size();
    const auto orderings = make_orderings(n, opts);
    const bool exhaustive = opts.exhaustive && factorial_capped(n, opts.permutations) <= opts.permutations;
    std::vector<double> marginals(orderings.size() * n);
    Mlp scratch = u.net();
    for (std::size_t p = 0; p < orderings.size(); ++p) ordering_marginals(u, orderings[p], scratch, marginals.data() + p * n);
    return reduce_marginals(marginals, n, orderings.size(), opts, exhaustive);
}

Vec loo_influence(const BatchUtility& u) {
    const std::size_t n = u.batch_size();
    if (n == 0) throw std::invalid_argument("loo_influence: empty batch");
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const double full = u(all);
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> rest;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) rest.push_back(k);
        out[i] = full - u(rest);
    }
    return out;
}

}  // namespace onval
