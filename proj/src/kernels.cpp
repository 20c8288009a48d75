#include "onval/kernels.hpp"

#include <algorithm>
#include <cstdint>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace onval::kernels {

namespace {

double ascending_sum(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return total;
}

double benefit_against_cache(const ValidationCache& cache, const ScoringView& train, const Preconditioner* precond,
                             std::vector<double>& scratch) {
    scratch.clear();
    for (const auto& val : cache.entries) scratch.push_back(pair_score(cache, val, train, precond));
    return -ascending_sum(scratch);
}

double benefit_against_batch(const ValidationCache& layout, std::span<const ScoringView> batch, std::size_t i,
                             const Preconditioner* precond, std::vector<double>& scratch) {
    scratch.clear();
    for (std::size_t j = 0; j < batch.size(); ++j) {
        if (j != i) scratch.push_back(pair_score(layout, batch[j], batch[i], precond));
    }
    return -ascending_sum(scratch);
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Vec score_batch(const ValidationCache& cache, std::span<const ScoringView> batch, const Preconditioner* precond) {
    Vec out(batch.size());
    #pragma omp parallel
    {
        std::vector<double> scratch;
        scratch.reserve(cache.size());
        #pragma omp for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.size()); ++i) {
            out[static_cast<std::size_t>(i)] =
                benefit_against_cache(cache, batch[static_cast<std::size_t>(i)], precond, scratch);
        }
    }
    return out;
}

Vec score_batch_serial(const ValidationCache& cache, std::span<const ScoringView> batch, const Preconditioner* precond) {
    Vec out(batch.size());
    std::vector<double> scratch;
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = benefit_against_cache(cache, batch[i], precond, scratch);
    return out;
}

Vec score_self(const ValidationCache& layout, std::span<const ScoringView> batch, const Preconditioner* precond) {
    Vec out(batch.size());
    #pragma omp parallel
    {
        std::vector<double> scratch;
        scratch.reserve(batch.size());
        #pragma omp for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.size()); ++i) {
            out[static_cast<std::size_t>(i)] =
                benefit_against_batch(layout, batch, static_cast<std::size_t>(i), precond, scratch);
        }
    }
    return out;
}

Vec score_self_serial(const ValidationCache& layout, std::span<const ScoringView> batch, const Preconditioner* precond) {
    Vec out(batch.size());
    std::vector<double> scratch;
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = benefit_against_batch(layout, batch, i, precond, scratch);
    return out;
}

}  // namespace onval::kernels
