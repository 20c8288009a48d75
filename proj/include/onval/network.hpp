#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace onval {

using Vec = std::vector<double>;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Activation { Linear, ReLU, Tanh };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::Linear;
};

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> v);

struct DenseLayer {
    Matrix weights;  // out_dim x in_dim
    Vec bias;        // out_dim
    LayerSpec spec;
};

/// Feed-forward network. Layer l (1-based in the math) is layers[l-1].
struct Mlp {
    std::vector<DenseLayer> layers;
    std::uint64_t seed = 0;

    std::size_t depth() const { return layers.size(); }
    std::size_t input_dim() const { return layers.front().spec.in_dim; }
    std::size_t output_dim() const { return layers.back().spec.out_dim; }
    std::size_t num_params() const;
    std::vector<LayerSpec> specs() const;
};

/// Validates chaining and the Linear output layer. Throws DimensionError.
void validate_specs(std::span<const LayerSpec> specs);

/// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases from a seeded generator.
Mlp make_mlp(std::span<const LayerSpec> specs, std::uint64_t seed);

/// Builds a network from explicit weights; used by tests and checkpoints.
Mlp make_mlp(std::span<const LayerSpec> specs, std::vector<Matrix> weights, std::vector<Vec> biases);

/// Per-sample forward activations and backward output gradients.
///
/// activations[k] is a^(k) for k = 0..L-1 (a^(0) is the input),
/// pre_activations[k] is s^(k+1), layer_grads[k] is g^(k+1) = dl/ds^(k+1).
/// layer_grads is empty until backward_taps fills it.
struct SampleTaps {
    std::vector<Vec> activations;
    std::vector<Vec> pre_activations;
    Vec output_grad;
    std::vector<Vec> layer_grads;
    double loss = 0.0;

    std::size_t depth() const { return pre_activations.size(); }
    bool complete() const { return !layer_grads.empty() && layer_grads.size() == pre_activations.size(); }
    const Vec& logits() const { return pre_activations.back(); }
};

struct LayerGrad {
    Matrix weights;
    Vec bias;
};

struct ParamGrads {
    std::vector<LayerGrad> layers;

    /// Concatenation of (W row-major, b) per layer, in layer order.
    Vec flatten() const;
};

struct LossGrad {
    double loss = 0.0;
    Vec output_grad;
};

SampleTaps forward(const Mlp& net, std::span<const double> x);

/// Softmax cross-entropy and its gradient with respect to the logits.
LossGrad loss_and_output_grad(std::span<const double> logits, std::size_t label);

/// Fills layer_grads from the output gradient. Returns the completed taps.
SampleTaps backward_taps(const Mlp& net, SampleTaps taps, std::span<const double> output_grad);

/// forward + loss + backward in one call.
SampleTaps full_taps(const Mlp& net, std::span<const double> x, std::size_t label);

/// forward + loss only (layer_grads left empty, output_grad set).
SampleTaps output_taps(const Mlp& net, std::span<const double> x, std::size_t label);

ParamGrads param_grads(const SampleTaps& taps);

double sample_loss(const Mlp& net, std::span<const double> x, std::size_t label);
std::size_t predict(const Mlp& net, std::span<const double> x);

/// Parameter vector in ParamGrads::flatten order.
Vec flatten_params(const Mlp& net);
void assign_params(Mlp& net, std::span<const double> flat);

nlohmann::json checkpoint_to_json(const Mlp& net);
Mlp checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const Mlp& net, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace onval
