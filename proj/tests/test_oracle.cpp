#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "onval/oracle.hpp"
#include "support.hpp"

using namespace onval;
using namespace onval::testing;

namespace {

struct Toy {
    Mlp net;
    std::vector<LabeledPoint> validation;
    std::vector<LabeledPoint> batch;
};

Toy make_toy(std::uint64_t seed, std::size_t batch_size, std::size_t val_size = 12) {
    std::mt19937_64 rng(seed);
    Toy t;
    t.net = make_mlp(std::vector<LayerSpec>{{3, 5, Activation::Tanh}, {5, 3, Activation::Linear}}, seed);
    for (std::size_t k = 0; k < val_size; ++k) t.validation.push_back({random_vector(rng, 3), random_label(rng, t.net)});
    for (std::size_t k = 0; k < batch_size; ++k) t.batch.push_back({random_vector(rng, 3), random_label(rng, t.net)});
    return t;
}

BatchUtility utility(const Toy& t, double lr = 0.5) { return BatchUtility(t.net, t.validation, lr, t.batch); }

std::vector<std::size_t> all_of(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

// Average marginal contribution over all n! orderings.
Vec permutation_average(const BatchUtility& u) {
    const std::size_t n = u.batch_size();
    std::vector<std::size_t> perm = all_of(n);
    Vec phi(n, 0.0);
    std::size_t count = 0;
    do {
        std::vector<std::size_t> prefix;
        double prev = 0.0;
        for (std::size_t i : perm) {
            prefix.push_back(i);
            const double cur = subset_utility(u, prefix);
            phi[i] += cur - prev;
            prev = cur;
        }
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (auto& v : phi) v /= static_cast<double>(count);
    return phi;
}

// Single-layer net that classifies `x` with margin 100, so its gradient underflows to zero.
Toy with_null_member() {
    Toy t;
    Matrix w(2, 2);
    w(0, 0) = 50.0;
    w(1, 1) = 50.0;
    t.net = make_mlp(std::vector<LayerSpec>{{2, 2, Activation::Linear}}, {w}, {Vec{0.0, 0.0}});
    t.validation = {{{0.01, 0.02}, 1}, {{-0.02, 0.01}, 0}, {{0.03, -0.01}, 1}};
    t.batch = {{{0.01, -0.01}, 0}, {{1.0, -1.0}, 0}, {{-0.02, 0.0}, 1}};
    return t;
}

}  // namespace

TEST_CASE("utility of the empty subset and of a zero learning rate") {
    const Toy t = make_toy(1, 4);
    const BatchUtility u = utility(t);
    CHECK(subset_utility(u, std::vector<std::size_t>{}) == 0.0);
    const BatchUtility frozen = utility(t, 0.0);
    CHECK(subset_utility(frozen, all_of(4)) == 0.0);
    CHECK(subset_utility(frozen, std::vector<std::size_t>{2}) == 0.0);
    CHECK_THROWS(subset_utility(u, std::vector<std::size_t>{7}));
}

TEST_CASE("full-batch utility is the loss decrease of one mean-gradient step") {
    const Toy t = make_toy(2, 5);
    const double lr = 0.3;
    const BatchUtility u = utility(t, lr);
    Vec mean(flatten_params(t.net).size(), 0.0);
    for (const auto& p : t.batch) {
        const Vec g = fd_gradient(t.net, p.features, p.label);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += g[k] / 5.0;
    }
    Mlp stepped = t.net;
    Vec params = flatten_params(t.net);
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * mean[k];
    assign_params(stepped, params);
    double before = 0.0;
    double after = 0.0;
    for (const auto& v : t.validation) {
        before += reference_loss(t.net, v.features, v.label);
        after += reference_loss(stepped, v.features, v.label);
    }
    const double expected = (before - after) / static_cast<double>(t.validation.size());
    CHECK(u(all_of(5)) == doctest::Approx(expected).epsilon(1e-7));
}

TEST_CASE("singleton utility approaches the first-order gradient product") {
    const Toy t = make_toy(3, 4);
    Vec val_grad(flatten_params(t.net).size(), 0.0);
    for (const auto& v : t.validation) {
        const Vec g = fd_gradient(t.net, v.features, v.label);
        for (std::size_t k = 0; k < g.size(); ++k) val_grad[k] += g[k] / static_cast<double>(t.validation.size());
    }
    const Vec gj = fd_gradient(t.net, t.batch[1].features, t.batch[1].label);
    const double first_order = flat_dot(val_grad, gj);
    for (double lr : {1e-2, 1e-3}) {
        const BatchUtility u = utility(t, lr);
        const double scaled = subset_utility(u, std::vector<std::size_t>{1}) / (lr / 4.0);
        CHECK(std::abs(scaled - first_order) <= 50.0 * lr * std::max(1.0, std::abs(first_order)));
    }
}

TEST_CASE("exact Shapley values satisfy efficiency") {
    for (std::size_t n = 1; n <= 8; ++n) {
        const Toy t = make_toy(10 + n, n);
        const BatchUtility u = utility(t);
        const ShapleyEstimate est = shapley_exact(u);
        const double total = std::accumulate(est.values.begin(), est.values.end(), 0.0);
        CHECK(std::abs(total - u(all_of(n))) <= 1e-9);
        CHECK(est.exact);
    }
}

TEST_CASE("exact Shapley values match the permutation average") {
    const Toy t = make_toy(4, 4);
    const BatchUtility u = utility(t);
    const Vec oracle = permutation_average(u);
    const ShapleyEstimate est = shapley_exact(u);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(est.values[i] - oracle[i]) <= 1e-9);
}

TEST_CASE("duplicate members receive equal values") {
    Toy t = make_toy(5, 4);
    t.batch[3] = t.batch[1];
    const BatchUtility u = utility(t);
    const ShapleyEstimate exact = shapley_exact(u);
    CHECK(std::abs(exact.values[1] - exact.values[3]) <= 1e-12);
    const ShapleyEstimate mc = shapley_mc(u, {400, 3, false});
    const double tol = 3.0 * std::hypot(mc.std_error[1], mc.std_error[3]);
    CHECK(std::abs(mc.values[1] - mc.values[3]) <= tol);
}

TEST_CASE("a zero-gradient member is a null player") {
    const Toy t = with_null_member();
    const BatchUtility u = utility(t, 1e-3);
    REQUIRE(*std::max_element(u.grad(1).begin(), u.grad(1).end()) < 1e-30);
    CHECK(std::abs(shapley_exact(u).values[1]) <= 1e-6);
    CHECK(std::abs(loo_influence(u)[1]) <= 1e-6);
}

TEST_CASE("exhaustive Monte Carlo equals exact enumeration") {
    const Toy t = make_toy(6, 3);
    const BatchUtility u = utility(t);
    const ShapleyEstimate mc = shapley_mc(u, {6, 0, true});
    const ShapleyEstimate exact = shapley_exact(u);
    CHECK(mc.exact);
    CHECK(mc.permutations_used == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(mc.values[i] - exact.values[i]) <= 1e-12);

    // Too few permutations to cover 3! falls back to sampling.
    CHECK_FALSE(shapley_mc(u, {5, 0, true}).exact);
}

TEST_CASE("Monte Carlo stays within five percent of the exact range") {
    const Toy t = make_toy(7, 6);
    const BatchUtility u = utility(t);
    const ShapleyEstimate exact = shapley_exact(u);
    const auto [lo, hi] = std::minmax_element(exact.values.begin(), exact.values.end());
    const double range = *hi - *lo;
    REQUIRE(range > 0.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ShapleyEstimate mc = shapley_mc(u, {1000, seed, false});
        for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(mc.values[i] - exact.values[i]) <= 0.05 * range);
        CHECK(mc.seed == seed);
        CHECK(mc.permutations_used == 1000);
    }
}

TEST_CASE("parallel Monte Carlo matches the serial reference bit for bit") {
    const Toy t = make_toy(8, 7);
    const BatchUtility u = utility(t);
    const ShapleyEstimate a = shapley_mc(u, {200, 42, false});
    const ShapleyEstimate b = shapley_mc_serial(u, {200, 42, false});
    CHECK(a.values == b.values);
    CHECK(a.std_error == b.std_error);
    CHECK(shapley_mc(u, {200, 42, false}).values == a.values);
    CHECK(shapley_mc(u, {200, 43, false}).values != a.values);
}

TEST_CASE("leave-one-out") {
    SUBCASE("batch of one") {
        const Toy t = make_toy(9, 1);
        const BatchUtility u = utility(t);
        CHECK(loo_influence(u) == Vec{u(std::vector<std::size_t>{0})});
    }
    SUBCASE("batch of five matches direct differencing") {
        const Toy t = make_toy(10, 5);
        const BatchUtility u = utility(t);
        const Vec loo = loo_influence(u);
        const double full = u(all_of(5));
        for (std::size_t i = 0; i < 5; ++i) {
            std::vector<std::size_t> rest;
            for (std::size_t k = 0; k < 5; ++k)
                if (k != i) rest.push_back(k);
            CHECK(loo[i] == doctest::Approx(full - subset_utility(u, rest)).epsilon(1e-14));
        }
    }
}

TEST_CASE("oracle argument checks") {
    const Toy t = make_toy(11, 11);
    CHECK_THROWS(shapley_exact(utility(t)));
    CHECK_THROWS(BatchUtility(t.net, {}, 0.1, t.batch));
    CHECK_THROWS(shapley_mc(utility(t), {0, 0, false}));
}
