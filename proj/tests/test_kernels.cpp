#include <doctest.h>

#include <algorithm>
#include <random>

#if defined(_OPENMP)
#include <omp.h>
#endif

#include "onval/kernels.hpp"
#include "support.hpp"

using namespace onval;
using namespace onval::testing;

namespace {

struct Fixture {
    Mlp net;
    std::vector<LabeledPoint> val;
    std::vector<LabeledPoint> train;
};

Fixture fixture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Fixture f;
    f.net = make_mlp(std::vector<LayerSpec>{{6, 10, Activation::ReLU}, {10, 7, Activation::Tanh}, {7, 4, Activation::Linear}},
                     seed);
    for (int k = 0; k < 23; ++k) f.val.push_back({random_vector(rng, 6), random_label(rng, f.net)});
    for (int k = 0; k < 37; ++k) f.train.push_back({random_vector(rng, 6), random_label(rng, f.net)});
    return f;
}

std::vector<ScoringView> views(const Fixture& f, Estimator e) {
    std::vector<ScoringView> out;
    for (const auto& p : f.train) out.push_back(make_view(f.net, p.features, p.label, e, false));
    return out;
}

void set_threads(int n) {
#if defined(_OPENMP)
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace

TEST_CASE("parallel batch scoring equals the serial reference at every thread count") {
    const Fixture f = fixture(1);
    const Preconditioner precond{{0.5, 2.0, 1.0, 0.25}};
    for (Estimator e : {Estimator::IP, Estimator::Ghost, Estimator::LAI, Estimator::LLI, Estimator::PrecondLAI}) {
        const ValidationCache cache = build_validation_cache(f.net, f.val, e, 0);
        const auto batch = views(f, e);
        const Vec reference = kernels::score_batch_serial(cache, batch, &precond);
        for (int threads : {1, 2, 3, 8}) {
            set_threads(threads);
            CHECK(kernels::score_batch(cache, batch, &precond) == reference);
            CHECK(kernels::score_self(cache, batch, &precond) == kernels::score_self_serial(cache, batch, &precond));
        }
    }
    set_threads(kernels::max_threads());
}

TEST_CASE("batch scores are the negated sum of pair scores") {
    const Fixture f = fixture(2);
    const ValidationCache cache = build_validation_cache(f.net, f.val, Estimator::LAI, 0);
    const auto batch = views(f, Estimator::LAI);
    const Vec scores = kernels::score_batch(cache, batch, nullptr);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double direct = 0.0;
        for (std::size_t v = 0; v < f.val.size(); ++v) {
            direct -= lai_influence(pair_similarities(full_taps(f.net, f.val[v].features, f.val[v].label),
                                                      full_taps(f.net, f.train[i].features, f.train[i].label)))
                          .value;
        }
        CHECK(scores[i] == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("batch scores do not depend on the cache entry order") {
    const Fixture f = fixture(3);
    ValidationCache cache = build_validation_cache(f.net, f.val, Estimator::Ghost, 0);
    const auto batch = views(f, Estimator::Ghost);
    const Vec before = kernels::score_batch(cache, batch, nullptr);
    std::mt19937_64 rng(9);
    std::shuffle(cache.entries.begin(), cache.entries.end(), rng);
    CHECK(kernels::score_batch(cache, batch, nullptr) == before);
}

TEST_CASE("self scores leave out the self pair") {
    const Fixture f = fixture(4);
    const ValidationCache layout = build_validation_cache(f.net, f.val, Estimator::LAI, 0);
    const auto batch = views(f, Estimator::LAI);
    const Vec self = kernels::score_self(layout, batch, nullptr);
    for (std::size_t i = 0; i < 5; ++i) {
        double direct = 0.0;
        for (std::size_t j = 0; j < batch.size(); ++j)
            if (j != i) direct -= pair_score(layout, batch[j], batch[i], nullptr);
        CHECK(self[i] == doctest::Approx(direct).epsilon(1e-12));
    }
    CHECK(kernels::max_threads() >= 1);
}
