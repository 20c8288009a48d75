// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "onval/kernels.hpp"
#include "onval/oracle.hpp"

using namespace onval;

namespace {

const std::vector<LayerSpec> kSpecs{{8, 32, Activation::ReLU}, {32, 32, Activation::ReLU}, {32, 4, Activation::Linear}};

std::vector<LabeledPoint> points(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<std::size_t> label(0, 3);
    std::vector<LabeledPoint> out(n);
    for (auto& p : out) {
        p.features.resize(8);
        for (double& v : p.features) v = g(rng);
        p.label = label(rng);
    }
    return out;
}

struct ScoringSetup {
    ValidationCache cache;
    std::vector<ScoringView> batch;
};

ScoringSetup scoring_setup(Estimator e, std::size_t val_size) {
    std::mt19937_64 rng(1);
    const Mlp net = make_mlp(kSpecs, 2);
    ScoringSetup s{build_validation_cache(net, points(rng, val_size), e, 0), {}};
    for (const auto& p : points(rng, 64)) s.batch.push_back(make_view(net, p.features, p.label, e, false));
    return s;
}

template <Vec (*Score)(const ValidationCache&, std::span<const ScoringView>, const Preconditioner*)>
void BM_ScoreBatch(benchmark::State& state) {
    const auto s = scoring_setup(static_cast<Estimator>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(Score(s.cache, s.batch, nullptr));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.batch.size()) * state.range(1));
}

BatchUtility utility(std::size_t n) {
    std::mt19937_64 rng(3);
    static const Mlp net = make_mlp(kSpecs, 4);
    return BatchUtility(net, points(rng, 64), 0.1, points(rng, n));
}

template <ShapleyEstimate (*Shapley)(const BatchUtility&, const McOptions&)>
void BM_ShapleyMc(benchmark::State& state) {
    const BatchUtility u = utility(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Shapley(u, {200, 7, false}));
}

void scoring_args(benchmark::internal::Benchmark* b) {
    for (Estimator e : {Estimator::Ghost, Estimator::LAI, Estimator::LLI})
        for (int v : {64, 512}) b->Args({static_cast<std::int64_t>(e), v});
}

}  // namespace

BENCHMARK(BM_ScoreBatch<kernels::score_batch>)->Apply(scoring_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScoreBatch<kernels::score_batch_serial>)->Apply(scoring_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ShapleyMc<shapley_mc>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ShapleyMc<shapley_mc_serial>)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
