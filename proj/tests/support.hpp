#pragma once

// Test-only oracles and generators. Nothing here calls the estimator code it
// is used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "onval/network.hpp"

namespace onval::testing {

inline std::vector<LayerSpec> random_specs(std::mt19937_64& rng, std::size_t max_depth, std::size_t max_dim,
                                           std::vector<Activation> hidden_kinds = {Activation::Linear, Activation::ReLU,
                                                                                   Activation::Tanh}) {
    std::uniform_int_distribution<std::size_t> depth_dist(1, max_depth);
    std::uniform_int_distribution<std::size_t> dim_dist(1, max_dim);
    std::uniform_int_distribution<std::size_t> out_dist(2, max_dim);
    std::uniform_int_distribution<std::size_t> kind_dist(0, hidden_kinds.size() - 1);
    const std::size_t depth = depth_dist(rng);
    std::vector<LayerSpec> specs;
    std::size_t in = dim_dist(rng);
    for (std::size_t l = 0; l < depth; ++l) {
        const bool last = l + 1 == depth;
        const std::size_t out = last ? out_dist(rng) : dim_dist(rng);
        specs.push_back({in, out, last ? Activation::Linear : hidden_kinds[kind_dist(rng)]});
        in = out;
    }
    return specs;
}

inline Vec random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Vec v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

/// True when no ReLU pre-activation sits within `margin` of its kink.
inline bool away_from_kinks(const Mlp& net, const Vec& x, double margin = 1e-3) {
    Vec a = x;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& layer = net.layers[l];
        Vec s(layer.spec.out_dim);
        for (std::size_t r = 0; r < s.size(); ++r) {
            double acc = layer.bias[r];
            for (std::size_t c = 0; c < a.size(); ++c) acc += layer.weights(r, c) * a[c];
            s[r] = acc;
            if (layer.spec.activation == Activation::ReLU && std::abs(acc) < margin) return false;
        }
        for (auto& v : s) {
            if (layer.spec.activation == Activation::ReLU) v = v > 0 ? v : 0;
            if (layer.spec.activation == Activation::Tanh) v = std::tanh(v);
        }
        a = s;
    }
    return true;
}

inline Vec kink_free_input(std::mt19937_64& rng, const Mlp& net) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Vec x = random_vector(rng, net.input_dim());
        if (away_from_kinks(net, x)) return x;
    }
    throw std::runtime_error("no kink-free input found");
}

/// Independent straight-line forward pass and softmax cross-entropy.
inline double reference_loss(const Mlp& net, const Vec& x, std::size_t label) {
    Vec a = x;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto& layer = net.layers[l];
        Vec s(layer.spec.out_dim);
        for (std::size_t r = 0; r < s.size(); ++r) {
            double acc = layer.bias[r];
            for (std::size_t c = 0; c < a.size(); ++c) acc += layer.weights(r, c) * a[c];
            switch (layer.spec.activation) {
                case Activation::Linear: s[r] = acc; break;
                case Activation::ReLU: s[r] = acc > 0 ? acc : 0; break;
                case Activation::Tanh: s[r] = std::tanh(acc); break;
            }
        }
        a = s;
    }
    double peak = a[0];
    for (double v : a) peak = std::max(peak, v);
    double denom = 0.0;
    for (double v : a) denom += std::exp(v - peak);
    return -(a[label] - peak - std::log(denom));
}

/// Central finite-difference gradient over all parameters, in flatten order.
inline Vec fd_gradient(const Mlp& net, const Vec& x, std::size_t label, double h = 1e-5) {
    Mlp probe = net;
    Vec params = flatten_params(net);
    Vec grad(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double keep = params[k];
        params[k] = keep + h;
        assign_params(probe, params);
        const double up = reference_loss(probe, x, label);
        params[k] = keep - h;
        assign_params(probe, params);
        const double down = reference_loss(probe, x, label);
        params[k] = keep;
        grad[k] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Max elementwise relative error; denominators floored at `floor` so
/// near-zero entries are judged on absolute error.
inline double max_rel_error(const Vec& a, const Vec& b, double floor = 1e-4) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double denom = std::max({std::abs(a[k]), std::abs(b[k]), floor});
        worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
    }
    return worst;
}

inline double flat_dot(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

/// Brute-force IP influence: flatten both full gradients and dot them.
inline double brute_ip(const Mlp& net, const Vec& xz, std::size_t yz, const Vec& xj, std::size_t yj) {
    const Vec gz = param_grads(full_taps(net, xz, yz)).flatten();
    const Vec gj = param_grads(full_taps(net, xj, yj)).flatten();
    return -flat_dot(gz, gj);
}

/// All-Linear net whose layers are `scale` times a matrix with orthonormal
/// rows, so every backward step shrinks gradient norms by exactly `scale`.
/// dims must be non-increasing.
inline Mlp scaled_semi_orthogonal_net(std::mt19937_64& rng, const std::vector<std::size_t>& dims, double scale) {
    std::vector<LayerSpec> specs;
    std::vector<Matrix> weights;
    std::vector<Vec> biases;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        specs.push_back({in, out, Activation::Linear});
        Matrix w(out, in);
        for (std::size_t r = 0; r < out; ++r) {
            Vec row = random_vector(rng, in);
            for (std::size_t q = 0; q < r; ++q) {
                double proj = 0.0;
                for (std::size_t c = 0; c < in; ++c) proj += row[c] * w(q, c);
                for (std::size_t c = 0; c < in; ++c) row[c] -= proj * w(q, c);
            }
            double n = 0.0;
            for (double v : row) n += v * v;
            n = std::sqrt(n);
            for (std::size_t c = 0; c < in; ++c) w(r, c) = row[c] / n;
        }
        weights.push_back(std::move(w));
        biases.push_back(random_vector(rng, out, 0.1));
    }
    for (auto& w : weights)
        for (auto& v : w.data) v *= scale;
    return make_mlp(specs, std::move(weights), std::move(biases));
}

inline std::size_t random_label(std::mt19937_64& rng, const Mlp& net) {
    return std::uniform_int_distribution<std::size_t>(0, net.output_dim() - 1)(rng);
}

}  // namespace onval::testing
