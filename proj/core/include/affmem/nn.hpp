#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "affmem/affect.hpp"
#include "affmem/rng.hpp"

namespace affmem::nn {

enum class Activation { Relu, Tanh, Sigmoid, Linear };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Applies the activation to a pre-activation value.
double activate(Activation a, double pre);

/// Derivative of the activation at `pre` (with `post` the already-computed
/// output, which makes tanh/sigmoid cheap). relu'(0) is defined as 0.
double activation_derivative(Activation a, double pre, double post);

/// Row-major out x in weight matrix plus bias vector.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::Linear;
    Vec weights;  // row-major, out rows of in columns
    Vec biases;   // out

    double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
    double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }
    std::size_t parameter_count() const { return weights.size() + biases.size(); }

    bool operator==(const DenseLayer&) const = default;
};

struct Network {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
    std::size_t parameter_count() const;

    bool operator==(const Network&) const = default;
};

/// Builds a network with weights drawn from N(0, init_std) and zero biases.
Network make_network(std::size_t input_dim,
                     const std::vector<std::size_t>& layer_sizes,
                     const std::vector<Activation>& activations,
                     Rng& rng,
                     double init_std = 0.02);

/// Per-layer record of everything backward() needs.
struct Tape {
    Vec input;
    std::vector<Vec> pre;   // pre-activation per layer
    std::vector<Vec> post;  // post-activation per layer
};

/// Forward pass without a tape.
Vec forward(const Network& net, const Vec& input);

/// Forward pass recording the tape for a later backward().
Vec forward(const Network& net, const Vec& input, Tape& tape);

/// Parameter gradients with the same shapes as the network.
struct NetworkGrad {
    std::vector<Vec> dweights;
    std::vector<Vec> dbiases;

    void scale(double s);
    void add(const NetworkGrad& other);
    std::size_t parameter_count() const;
};

NetworkGrad zero_grad_like(const Network& net);

/// Backpropagates `output_gradient` through the taped forward pass.
/// Accumulates parameter gradients into `grads` (so batch members can share
/// one accumulator) and returns the gradient with respect to the input.
Vec backward(const Network& net, const Tape& tape, const Vec& output_gradient,
             NetworkGrad& grads);

/// Input gradient only; parameter gradients are discarded. Used for frozen
/// networks (surrogate features, fixed discriminators in the E/G phase).
Vec backward_input_only(const Network& net, const Tape& tape, const Vec& output_gradient);

struct AdamState {
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vec first_moment;   // one entry per parameter, layer by layer (weights then biases)
    Vec second_moment;
    std::size_t step_count = 0;
};

AdamState make_adam(const Network& net, double alpha = 2e-4, double beta1 = 0.5,
                    double beta2 = 0.999, double eps = 1e-8);

/// One bias-corrected Adam update. Throws numeric_error naming the offending
/// layer if a gradient entry is not finite.
void adam_step(AdamState& state, Network& net, const NetworkGrad& grads);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t parameters_checked = 0;
};

/// Central-difference check (eps = 1e-5) of backward() against a scalar loss
/// of the network output. `loss_grad` must return dloss/doutput. Relative
/// error per parameter is |analytic - numeric| / max(1, |analytic| + |numeric|).
GradCheckResult grad_check(Network& net,
                           const std::function<double(const Vec&)>& loss,
                           const std::function<Vec(const Vec&)>& loss_grad,
                           const Vec& input);

/// JSON checkpoint of a network; read(write(net)) == net bit-for-bit.
std::string to_json(const Network& net);
Network network_from_json(const std::string& text);

}  // namespace affmem::nn
