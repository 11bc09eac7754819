#include "affmem/nn.hpp"

#include <cmath>

#include "affmem/errors.hpp"
#include "json.hpp"

namespace affmem::nn {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Linear: return "linear";
    }
    throw config_error("unknown activation enum value");
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "linear") return Activation::Linear;
    throw config_error("unknown activation name: " + name);
}

double activate(Activation a, double pre) {
    switch (a) {
        case Activation::Relu: return pre > 0.0 ? pre : 0.0;
        case Activation::Tanh: return std::tanh(pre);
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-pre));
        case Activation::Linear: return pre;
    }
    throw config_error("unknown activation enum value");
}

double activation_derivative(Activation a, double pre, double post) {
    switch (a) {
        case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;  // relu'(0) := 0
        case Activation::Tanh: return 1.0 - post * post;
        case Activation::Sigmoid: return post * (1.0 - post);
        case Activation::Linear: return 1.0;
    }
    throw config_error("unknown activation enum value");
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.parameter_count();
    return n;
}

Network make_network(std::size_t input_dim, const std::vector<std::size_t>& layer_sizes,
                     const std::vector<Activation>& activations, Rng& rng, double init_std) {
    if (layer_sizes.size() != activations.size())
        throw config_error("make_network: one activation per layer required");
    Network net;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        DenseLayer layer;
        layer.in = in;
        layer.out = layer_sizes[l];
        layer.activation = activations[l];
        layer.weights.resize(layer.in * layer.out);
        layer.biases.assign(layer.out, 0.0);
        for (auto& w : layer.weights) w = init_std * rng.gaussian();
        in = layer.out;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

static void forward_into(const Network& net, const Vec& input, Tape* tape, Vec& out) {
    if (input.size() != net.input_dim())
        throw config_error("forward: input length " + std::to_string(input.size()) +
                           " != network input_dim " + std::to_string(net.input_dim()));
    if (tape) {
        tape->input = input;
        tape->pre.resize(net.layers.size());
        tape->post.resize(net.layers.size());
    }
    Vec cur = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const DenseLayer& layer = net.layers[l];
        Vec pre(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i) {
            double acc = layer.biases[i];
            const double* wrow = layer.weights.data() + i * layer.in;
            for (std::size_t j = 0; j < layer.in; ++j) acc += wrow[j] * cur[j];
            pre[i] = acc;
        }
        Vec post(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i) post[i] = activate(layer.activation, pre[i]);
        if (tape) {
            tape->pre[l] = pre;
            tape->post[l] = post;
        }
        cur = std::move(post);
    }
    out = std::move(cur);
}

Vec forward(const Network& net, const Vec& input) {
    Vec out;
    forward_into(net, input, nullptr, out);
    return out;
}

Vec forward(const Network& net, const Vec& input, Tape& tape) {
    Vec out;
    forward_into(net, input, &tape, out);
    return out;
}

void NetworkGrad::scale(double s) {
    for (auto& v : dweights)
        for (auto& x : v) x *= s;
    for (auto& v : dbiases)
        for (auto& x : v) x *= s;
}

void NetworkGrad::add(const NetworkGrad& other) {
    for (std::size_t l = 0; l < dweights.size(); ++l) {
        for (std::size_t i = 0; i < dweights[l].size(); ++i) dweights[l][i] += other.dweights[l][i];
        for (std::size_t i = 0; i < dbiases[l].size(); ++i) dbiases[l][i] += other.dbiases[l][i];
    }
}

std::size_t NetworkGrad::parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : dweights) n += v.size();
    for (const auto& v : dbiases) n += v.size();
    return n;
}

NetworkGrad zero_grad_like(const Network& net) {
    NetworkGrad g;
    g.dweights.reserve(net.layers.size());
    g.dbiases.reserve(net.layers.size());
    for (const auto& layer : net.layers) {
        g.dweights.emplace_back(layer.weights.size(), 0.0);
        g.dbiases.emplace_back(layer.biases.size(), 0.0);
    }
    return g;
}

static Vec backward_impl(const Network& net, const Tape& tape, const Vec& output_gradient,
                         NetworkGrad* grads) {
    if (tape.pre.size() != net.layers.size() || tape.input.size() != net.input_dim())
        throw config_error("backward: tape does not match network");
    if (output_gradient.size() != net.output_dim())
        throw config_error("backward: output gradient length mismatch");

    Vec delta = output_gradient;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const DenseLayer& layer = net.layers[li];
        const Vec& pre = tape.pre[li];
        const Vec& post = tape.post[li];
        const Vec& in = (li == 0) ? tape.input : tape.post[li - 1];

        // d/dpre = d/dpost * activation'
        Vec dpre(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i)
            dpre[i] = delta[i] * activation_derivative(layer.activation, pre[i], post[i]);

        if (grads) {
            Vec& dw = grads->dweights[li];
            Vec& db = grads->dbiases[li];
            for (std::size_t i = 0; i < layer.out; ++i) {
                double* dwrow = dw.data() + i * layer.in;
                const double g = dpre[i];
                for (std::size_t j = 0; j < layer.in; ++j) dwrow[j] += g * in[j];
                db[i] += g;
            }
        }

        Vec din(layer.in, 0.0);
        for (std::size_t i = 0; i < layer.out; ++i) {
            const double* wrow = layer.weights.data() + i * layer.in;
            const double g = dpre[i];
            for (std::size_t j = 0; j < layer.in; ++j) din[j] += wrow[j] * g;
        }
        delta = std::move(din);
    }
    return delta;
}

Vec backward(const Network& net, const Tape& tape, const Vec& output_gradient,
             NetworkGrad& grads) {
    return backward_impl(net, tape, output_gradient, &grads);
}

Vec backward_input_only(const Network& net, const Tape& tape, const Vec& output_gradient) {
    return backward_impl(net, tape, output_gradient, nullptr);
}

AdamState make_adam(const Network& net, double alpha, double beta1, double beta2, double eps) {
    AdamState s;
    s.alpha = alpha;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.first_moment.assign(net.parameter_count(), 0.0);
    s.second_moment.assign(net.parameter_count(), 0.0);
    return s;
}

void adam_step(AdamState& state, Network& net, const NetworkGrad& grads) {
    if (state.first_moment.size() != net.parameter_count())
        throw config_error("adam_step: moment size does not match parameter count");

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

    std::size_t k = 0;
    auto update_block = [&](Vec& params, const Vec& g, std::size_t layer, const char* block) {
        for (std::size_t i = 0; i < params.size(); ++i, ++k) {
            const double gi = g[i];
            if (!std::isfinite(gi))
                throw numeric_error("adam_step: non-finite gradient in layer " +
                                    std::to_string(layer) + " " + block);
            double& m = state.first_moment[k];
            double& v = state.second_moment[k];
            m = state.beta1 * m + (1.0 - state.beta1) * gi;
            v = state.beta2 * v + (1.0 - state.beta2) * gi * gi;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            params[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.eps);
        }
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        update_block(net.layers[l].weights, grads.dweights[l], l, "weights");
        update_block(net.layers[l].biases, grads.dbiases[l], l, "biases");
    }
}

GradCheckResult grad_check(Network& net, const std::function<double(const Vec&)>& loss,
                           const std::function<Vec(const Vec&)>& loss_grad, const Vec& input) {
    constexpr double kEps = 1e-5;

    Tape tape;
    const Vec out = forward(net, input, tape);
    NetworkGrad analytic = zero_grad_like(net);
    backward(net, tape, loss_grad(out), analytic);

    GradCheckResult result;
    auto check_block = [&](Vec& params, const Vec& g) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + kEps;
            const double up = loss(forward(net, input));
            params[i] = saved - kEps;
            const double down = loss(forward(net, input));
            params[i] = saved;
            const double numeric = (up - down) / (2.0 * kEps);
            const double a = g[i];
            const double rel =
                std::fabs(a - numeric) / std::max(1.0, std::fabs(a) + std::fabs(numeric));
            if (rel > result.max_rel_error) result.max_rel_error = rel;
            result.parameters_checked += 1;
        }
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        check_block(net.layers[l].weights, analytic.dweights[l]);
        check_block(net.layers[l].biases, analytic.dbiases[l]);
    }
    return result;
}

std::string to_json(const Network& net) {
    nlohmann::json j;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json lj;
        lj["in"] = layer.in;
        lj["out"] = layer.out;
        lj["activation"] = activation_name(layer.activation);
        lj["weights"] = layer.weights;
        lj["biases"] = layer.biases;
        j["layers"].push_back(std::move(lj));
    }
    return j.dump();
}

Network network_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Network net;
    for (const auto& lj : j.at("layers")) {
        DenseLayer layer;
        layer.in = lj.at("in").get<std::size_t>();
        layer.out = lj.at("out").get<std::size_t>();
        layer.activation = activation_from_name(lj.at("activation").get<std::string>());
        layer.weights = lj.at("weights").get<Vec>();
        layer.biases = lj.at("biases").get<Vec>();
        if (layer.weights.size() != layer.in * layer.out || layer.biases.size() != layer.out)
            throw config_error("network_from_json: weight/bias sizes do not match dims");
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace affmem::nn
