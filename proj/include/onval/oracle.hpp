#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "onval/influence.hpp"
#include "onval/network.hpp"

namespace onval {

/// One-SGD-step validation utility over a fixed batch B of size n:
///
///   v(S) = L_val(theta) - L_val(theta - (eta / n) * sum_{i in S} grad_i)
///
/// so v(B) is the loss decrease of a full mean-gradient step and v({}) = 0.
/// The net is frozen; evaluating a subset never mutates it.
class BatchUtility {
public:
    BatchUtility(Mlp net, std::vector<LabeledPoint> validation, double learning_rate,
                 std::span<const LabeledPoint> batch);

    std::size_t batch_size() const { return grads_.size(); }
    double learning_rate() const { return learning_rate_; }
    double base_loss() const { return base_loss_; }

    double operator()(std::span<const std::size_t> subset) const;
    double of_mask(std::uint64_t mask) const;

    /// Utility of the step whose summed member gradient is `grad_sum`.
    /// `scratch` must be a copy of the frozen net; its parameters are overwritten.
    double of_grad_sum(std::span<const double> grad_sum, Mlp& scratch) const;

    const Mlp& net() const { return net_; }
    const Vec& grad(std::size_t i) const { return grads_[i]; }

private:
    double validation_loss(const Mlp& net) const;

    Mlp net_;
    std::vector<LabeledPoint> validation_;
    double learning_rate_;
    Vec params_;
    std::vector<Vec> grads_;
    double base_loss_ = 0.0;
};

struct ShapleyEstimate {
    Vec values;
    Vec std_error;
    std::size_t permutations_used = 0;
    std::uint64_t seed = 0;
    bool exact = false;
};

double subset_utility(const BatchUtility& u, std::span<const std::size_t> subset);

inline constexpr std::size_t kMaxExactBatch = 10;

/// Exact Shapley values by subset enumeration (n <= 10), v(S) memoized by bitmask.
ShapleyEstimate shapley_exact(const BatchUtility& u);

struct McOptions {
    std::size_t permutations = 1000;
    std::uint64_t seed = 0;
    /// Enumerate all n! orderings instead of sampling when permutations >= n!.
    bool exhaustive = false;
};

/// Permutation-sampling Shapley estimate; permutations evaluated in parallel,
/// reduced in permutation order.
ShapleyEstimate shapley_mc(const BatchUtility& u, const McOptions& opts);

/// Serial reference for shapley_mc; identical output.
ShapleyEstimate shapley_mc_serial(const BatchUtility& u, const McOptions& opts);

/// v(B) - v(B \ {i}) per member.
Vec loo_influence(const BatchUtility& u);

}  // namespace onval
