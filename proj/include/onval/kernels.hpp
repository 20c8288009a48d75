#pragma once

#include <span>

#include "onval/validation_cache.hpp"

namespace onval::kernels {

/// Benefit score (BenefitSign) of every training view against the whole cache.
/// Each score sums its per-pair values in ascending order, so the result is
/// independent of thread count and of the cache's entry order.
Vec score_batch(const ValidationCache& cache, std::span<const ScoringView> batch, const Preconditioner* precond);

/// Single-threaded reference of score_batch.
Vec score_batch_serial(const ValidationCache& cache, std::span<const ScoringView> batch, const Preconditioner* precond);

/// Self-influence benefit: member i scored against every other member j != i.
Vec score_self(const ValidationCache& layout, std::span<const ScoringView> batch, const Preconditioner* precond);
Vec score_self_serial(const ValidationCache& layout, std::span<const ScoringView> batch, const Preconditioner* precond);

int max_threads();

}  // namespace onval::kernels
