#include "onval/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

namespace onval {

namespace {

double activate(Activation act, double s) {
    switch (act) {
        case Activation::Linear: return s;
        case Activation::ReLU: return s > 0.0 ? s : 0.0;
        case Activation::Tanh: return std::tanh(s);
    }
    return s;
}

// ReLU'(0) = 0.
double activate_deriv(Activation act, double s) {
    switch (act) {
        case Activation::Linear: return 1.0;
        case Activation::ReLU: return s > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            const double t = std::tanh(s);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

}  // namespace

std::string to_string(Activation act) {
    switch (act) {
        case Activation::Linear: return "linear";
        case Activation::ReLU: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "linear";
}

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "relu") return Activation::ReLU;
    if (name == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError(fmt::format("dot: length {} vs {}", a.size(), b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t Mlp::num_params() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.data.size() + layer.bias.size();
    return n;
}

std::vector<LayerSpec> Mlp::specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers.size());
    for (const auto& layer : layers) out.push_back(layer.spec);
    return out;
}

void validate_specs(std::span<const LayerSpec> specs) {
    if (specs.empty()) throw DimensionError("network needs at least one layer");
    for (std::size_t l = 0; l < specs.size(); ++l) {
        if (specs[l].in_dim == 0 || specs[l].out_dim == 0) {
            throw DimensionError(fmt::format("layer {}: dimensions must be positive", l + 1));
        }
        if (l > 0 && specs[l].in_dim != specs[l - 1].out_dim) {
            throw DimensionError(fmt::format("layer {}: in_dim {} does not match previous out_dim {}", l + 1,
                                             specs[l].in_dim, specs[l - 1].out_dim));
        }
    }
    if (specs.back().activation != Activation::Linear) {
        throw DimensionError("final layer activation must be linear");
    }
}

Mlp make_mlp(std::span<const LayerSpec> specs, std::uint64_t seed) {
    validate_specs(specs);
    std::mt19937_64 rng(seed);
    Mlp net;
    net.seed = seed;
    for (const auto& spec : specs) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer{Matrix(spec.out_dim, spec.in_dim), Vec(spec.out_dim), spec};
        for (auto& w : layer.weights.data) w = dist(rng);
        for (auto& b : layer.bias) b = dist(rng);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Mlp make_mlp(std::span<const LayerSpec> specs, std::vector<Matrix> weights, std::vector<Vec> biases) {
    validate_specs(specs);
    if (weights.size() != specs.size() || biases.size() != specs.size()) {
        throw DimensionError("weights/biases count does not match layer count");
    }
    Mlp net;
    for (std::size_t l = 0; l < specs.size(); ++l) {
        if (weights[l].rows != specs[l].out_dim || weights[l].cols != specs[l].in_dim ||
            weights[l].data.size() != weights[l].rows * weights[l].cols) {
            throw DimensionError(fmt::format("layer {}: weight shape mismatch", l + 1));
        }
        if (biases[l].size() != specs[l].out_dim) {
            throw DimensionError(fmt::format("layer {}: bias length mismatch", l + 1));
        }
        if (!all_finite(weights[l].data) || !all_finite(biases[l])) {
            throw NumericError(fmt::format("layer {}: non-finite parameter", l + 1));
        }
        net.layers.push_back(DenseLayer{std::move(weights[l]), std::move(biases[l]), specs[l]});
    }
    return net;
}

SampleTaps forward(const Mlp& net, std::span<const double> x) {
    if (x.size() != net.input_dim()) {
        throw DimensionError(fmt::format("forward: input length {} but network expects {}", x.size(), net.input_dim()));
    }
    if (!all_finite(x)) throw NumericError("forward: non-finite input");

    SampleTaps taps;
    const std::size_t depth = net.depth();
    taps.activations.reserve(depth);
    taps.pre_activations.reserve(depth);
    taps.activations.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < depth; ++l) {
        const auto& layer = net.layers[l];
        const Vec& a = taps.activations.back();
        Vec s(layer.spec.out_dim);
        for (std::size_t r = 0; r < s.size(); ++r) s[r] = dot(layer.weights.row(r), a) + layer.bias[r];
        if (l + 1 < depth) {
            Vec next(s.size());
            for (std::size_t r = 0; r < s.size(); ++r) next[r] = activate(layer.spec.activation, s[r]);
            taps.activations.push_back(std::move(next));
        }
        taps.pre_activations.push_back(std::move(s));
    }
    return taps;
}

LossGrad loss_and_output_grad(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        throw DimensionError(fmt::format("label {} out of range for {} classes", label, logits.size()));
    }
    if (!all_finite(logits)) throw NumericError("non-finite logits");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - peak);
    const double log_denom = std::log(denom);

    LossGrad out;
    out.loss = -(logits[label] - peak - log_denom);
    out.output_grad.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out.output_grad[k] = std::exp(logits[k] - peak - log_denom) - (k == label ? 1.0 : 0.0);
    }
    return out;
}

SampleTaps backward_taps(const Mlp& net, SampleTaps taps, std::span<const double> output_grad) {
    const std::size_t depth = net.depth();
    if (taps.pre_activations.size() != depth || taps.activations.size() != depth) {
        throw DimensionError("backward_taps: forward taps missing or from a different architecture");
    }
    if (output_grad.size() != net.output_dim()) {
        throw DimensionError("backward_taps: output gradient length mismatch");
    }
    taps.output_grad.assign(output_grad.begin(), output_grad.end());
    taps.layer_grads.assign(depth, Vec{});
    taps.layer_grads[depth - 1] = taps.output_grad;
    for (std::size_t l = depth - 1; l > 0; --l) {
        const auto& layer = net.layers[l];
        const Vec& upper = taps.layer_grads[l];
        const Vec& s_below = taps.pre_activations[l - 1];
        const Activation below_act = net.layers[l - 1].spec.activation;
        Vec g(layer.spec.in_dim, 0.0);
        for (std::size_t r = 0; r < layer.spec.out_dim; ++r) {
            const double u = upper[r];
            const auto w = layer.weights.row(r);
            for (std::size_t c = 0; c < g.size(); ++c) g[c] += w[c] * u;
        }
        for (std::size_t c = 0; c < g.size(); ++c) g[c] *= activate_deriv(below_act, s_below[c]);
        taps.layer_grads[l - 1] = std::move(g);
    }
    return taps;
}

SampleTaps output_taps(const Mlp& net, std::span<const double> x, std::size_t label) {
    SampleTaps taps = forward(net, x);
    auto lg = loss_and_output_grad(taps.logits(), label);
    taps.loss = lg.loss;
    taps.output_grad = std::move(lg.output_grad);
    return taps;
}

SampleTaps full_taps(const Mlp& net, std::span<const double> x, std::size_t label) {
    SampleTaps taps = output_taps(net, x, label);
    Vec g = taps.output_grad;
    return backward_taps(net, std::move(taps), g);
}

ParamGrads param_grads(const SampleTaps& taps) {
    if (!taps.complete()) throw std::logic_error("param_grads: taps have no backward pass");
    ParamGrads pg;
    pg.layers.reserve(taps.depth());
    for (std::size_t l = 0; l < taps.depth(); ++l) {
        const Vec& g = taps.layer_grads[l];
        const Vec& a = taps.activations[l];
        LayerGrad lg{Matrix(g.size(), a.size()), g};
        for (std::size_t r = 0; r < g.size(); ++r)
            for (std::size_t c = 0; c < a.size(); ++c) lg.weights(r, c) = g[r] * a[c];
        pg.layers.push_back(std::move(lg));
    }
    return pg;
}

Vec ParamGrads::flatten() const {
    Vec out;
    for (const auto& layer : layers) {
        out.insert(out.end(), layer.weights.data.begin(), layer.weights.data.end());
        out.insert(out.end(), layer.bias.begin(), layer.bias.end());
    }
    return out;
}

double sample_loss(const Mlp& net, std::span<const double> x, std::size_t label) {
    const SampleTaps taps = forward(net, x);
    return loss_and_output_grad(taps.logits(), label).loss;
}

std::size_t predict(const Mlp& net, std::span<const double> x) {
    const SampleTaps taps = forward(net, x);
    const Vec& z = taps.logits();
    // max_element returns the first maximum, so ties go to the lowest index.
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

Vec flatten_params(const Mlp& net) {
    Vec out;
    out.reserve(net.num_params());
    for (const auto& layer : net.layers) {
        out.insert(out.end(), layer.weights.data.begin(), layer.weights.data.end());
        out.insert(out.end(), layer.bias.begin(), layer.bias.end());
    }
    return out;
}

void assign_params(Mlp& net, std::span<const double> flat) {
    if (flat.size() != net.num_params()) throw DimensionError("assign_params: parameter count mismatch");
    std::size_t k = 0;
    for (auto& layer : net.layers) {
        for (auto& w : layer.weights.data) w = flat[k++];
        for (auto& b : layer.bias) b = flat[k++];
    }
}

nlohmann::json checkpoint_to_json(const Mlp& net) {
    nlohmann::json doc;
    doc["format"] = "onval-mlp";
    doc["version"] = 1;
    doc["seed"] = net.seed;
    auto& layers = doc["layers"] = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        layers.push_back({{"in_dim", layer.spec.in_dim},
                          {"out_dim", layer.spec.out_dim},
                          {"activation", to_string(layer.spec.activation)},
                          {"weights", layer.weights.data},
                          {"bias", layer.bias}});
    }
    return doc;
}

Mlp checkpoint_from_json(const nlohmann::json& doc) {
    if (doc.value("format", std::string{}) != "onval-mlp") throw std::invalid_argument("not an onval-mlp checkpoint");
    std::vector<LayerSpec> specs;
    std::vector<Matrix> weights;
    std::vector<Vec> biases;
    for (const auto& entry : doc.at("layers")) {
        LayerSpec spec{entry.at("in_dim").get<std::size_t>(), entry.at("out_dim").get<std::size_t>(),
                       activation_from_string(entry.at("activation").get<std::string>())};
        Matrix w(spec.out_dim, spec.in_dim);
        w.data = entry.at("weights").get<Vec>();
        if (w.data.size() != spec.out_dim * spec.in_dim) throw DimensionError("checkpoint: weight array length mismatch");
        specs.push_back(spec);
        weights.push_back(std::move(w));
        biases.push_back(entry.at("bias").get<Vec>());
    }
    Mlp net = make_mlp(specs, std::move(weights), std::move(biases));
    net.seed = doc.value("seed", std::uint64_t{0});
    return net;
}

void save_checkpoint(const Mlp& net, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << checkpoint_to_json(net).dump(1) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Mlp load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace onval
