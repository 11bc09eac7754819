#include "affmem/pk.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "affmem/errors.hpp"
#include "json.hpp"

namespace affmem::pk {

namespace {

constexpr double kProbFloor = 1e-7;   // value clamp per the loss contracts
constexpr double kGradFloor = 1e-12;  // keeps -1/p bounded without touching values

double clamp_prob(double p, int& saturations) {
    if (p < kProbFloor) {
        ++saturations;
        return kProbFloor;
    }
    if (p > 1.0 - kProbFloor) {
        ++saturations;
        return 1.0 - kProbFloor;
    }
    return p;
}

double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Vec concat_label(const Vec& v, const AffectLabel& y) {
    Vec out;
    out.reserve(v.size() + 2);
    out.insert(out.end(), v.begin(), v.end());
    out.push_back(y.arousal);
    out.push_back(y.valence);
    return out;
}

// ---------------------------------------------------------------------------
// Conditioned discriminator: (arousal, valence) joins the input of every
// hidden layer; the output layer sees plain features. A single-layer net is
// conditioned on its only layer, otherwise the condition could never enter.

bool layer_is_conditioned(std::size_t layer, std::size_t n_layers) {
    return layer + 1 < n_layers || n_layers == 1;
}

struct CondTape {
    std::vector<Vec> inputs;  // actual layer inputs, condition included
    std::vector<Vec> pre;
    std::vector<Vec> post;
};

double cond_forward(const nn::Network& net, const Vec& x, const AffectLabel& y,
                    CondTape* tape) {
    const std::size_t n = net.layers.size();
    if (tape) {
        tape->inputs.resize(n);
        tape->pre.resize(n);
        tape->post.resize(n);
    }
    Vec cur = x;
    for (std::size_t l = 0; l < n; ++l) {
        const nn::DenseLayer& layer = net.layers[l];
        Vec in = layer_is_conditioned(l, n) ? concat_label(cur, y) : cur;
        if (in.size() != layer.in)
            throw config_error("conditioned discriminator: layer input size mismatch");
        Vec pre(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i) {
            double acc = layer.biases[i];
            const double* wrow = layer.weights.data() + i * layer.in;
            for (std::size_t j = 0; j < layer.in; ++j) acc += wrow[j] * in[j];
            pre[i] = acc;
        }
        Vec post(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i)
            post[i] = nn::activate(layer.activation, pre[i]);
        if (tape) {
            tape->inputs[l] = std::move(in);
            tape->pre[l] = pre;
            tape->post[l] = post;
        }
        cur = std::move(post);
    }
    return cur.at(0);
}

// Returns dL/dx; accumulates parameter gradients when `grads` is non-null.
Vec cond_backward(const nn::Network& net, const CondTape& tape, double dout,
                  nn::NetworkGrad* grads) {
    const std::size_t n = net.layers.size();
    Vec delta{dout};
    for (std::size_t li = n; li-- > 0;) {
        const nn::DenseLayer& layer = net.layers[li];
        const Vec& in = tape.inputs[li];
        Vec dpre(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i)
            dpre[i] = delta[i] *
                      nn::activation_derivative(layer.activation, tape.pre[li][i], tape.post[li][i]);
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
        if (layer_is_conditioned(li, n)) din.resize(din.size() - 2);  // drop condition slots
        delta = std::move(din);
    }
    return delta;
}

// ---------------------------------------------------------------------------
// Identity surrogate: L1 feature match across every surrogate layer, with
// gradient injection at each compared activation.

double iden_value_and_grad(const nn::Network& surrogate, const Vec& x, const Vec& x_gen,
                           Vec* dxgen) {
    nn::Tape tape_x, tape_g;
    nn::forward(surrogate, x, tape_x);
    nn::forward(surrogate, x_gen, tape_g);

    const std::size_t n = surrogate.layers.size();
    double loss = 0.0;
    std::vector<Vec> inject(n);
    for (std::size_t l = 0; l < n; ++l) {
        const Vec& a = tape_x.post[l];
        const Vec& b = tape_g.post[l];
        const double inv = 1.0 / static_cast<double>(a.size());
        inject[l].assign(a.size(), 0.0);
        double layer_sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            layer_sum += std::fabs(b[i] - a[i]);
            inject[l][i] = sign_or_zero(b[i] - a[i]) * inv;
        }
        loss += layer_sum * inv;
    }
    if (!dxgen) return loss;

    // Top-down walk over the x_gen tape, adding each layer's injected term.
    Vec delta = inject[n - 1];
    for (std::size_t li = n; li-- > 0;) {
        const nn::DenseLayer& layer = surrogate.layers[li];
        Vec dpre(layer.out);
        for (std::size_t i = 0; i < layer.out; ++i)
            dpre[i] = delta[i] * nn::activation_derivative(layer.activation, tape_g.pre[li][i],
                                                           tape_g.post[li][i]);
        Vec din(layer.in, 0.0);
        for (std::size_t i = 0; i < layer.out; ++i) {
            const double* wrow = layer.weights.data() + i * layer.in;
            const double g = dpre[i];
            for (std::size_t j = 0; j < layer.in; ++j) din[j] += wrow[j] * g;
        }
        if (li > 0) {
            for (std::size_t i = 0; i < din.size(); ++i) din[i] += inject[li - 1][i];
        }
        delta = std::move(din);
    }
    *dxgen = std::move(delta);
    return loss;
}

std::vector<nn::Activation> hidden_then(std::size_t n_hidden, nn::Activation final) {
    std::vector<nn::Activation> acts(n_hidden, nn::Activation::Relu);
    acts.push_back(final);
    return acts;
}

const AffectLabel& require_label(const ExpressionSample& s, const char* where) {
    if (!s.y) throw config_error(std::string(where) + ": sample without affect label");
    return *s.y;
}

}  // namespace

void PkConfig::validate() const {
    if (input_dim == 0 || latent_dim == 0)
        throw config_error("pk: input_dim and latent_dim must be positive");
    if (batch_size == 0) throw config_error("pk: batch_size must be positive");
    if (!(prior_lo < prior_hi)) throw config_error("pk: prior range must be a proper interval");
    if (init_std <= 0.0) throw config_error("pk: init_std must be positive");
    if (surrogate_layers.empty()) throw config_error("pk: surrogate needs at least one layer");
    if (!(adam.alpha >= 0.0)) throw config_error("pk: adam alpha must be >= 0");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0)
        throw config_error("pk: adam betas must lie in [0, 1)");
    for (double l : lambdas)
        if (!(l >= 0.0)) throw config_error("pk: lambdas must be >= 0");
}

PkModel make_model(const PkConfig& config, std::uint64_t seed) {
    config.validate();
    PkModel m;
    m.config = config;
    Rng rng(mix_seed(seed, 0x504b4e45ULL));

    auto sizes_then = [](std::vector<std::size_t> hidden, std::size_t out) {
        hidden.push_back(out);
        return hidden;
    };

    m.encoder = nn::make_network(config.input_dim, sizes_then(config.encoder_hidden, config.latent_dim),
                                 hidden_then(config.encoder_hidden.size(), nn::Activation::Tanh),
                                 rng, config.init_std);
    m.generator = nn::make_network(config.latent_dim + 2,
                                   sizes_then(config.generator_hidden, config.input_dim),
                                   hidden_then(config.generator_hidden.size(), nn::Activation::Linear),
                                   rng, config.init_std);
    m.d_em = nn::make_network(config.latent_dim, sizes_then(config.em_hidden, 2),
                              hidden_then(config.em_hidden.size(), nn::Activation::Tanh), rng,
                              config.init_std);
    m.d_prior = nn::make_network(config.latent_dim, sizes_then(config.prior_hidden, 1),
                                 hidden_then(config.prior_hidden.size(), nn::Activation::Sigmoid),
                                 rng, config.init_std);

    // Conditioned discriminator: every hidden layer input carries (a, v).
    {
        nn::Network net;
        std::size_t prev = config.input_dim;
        const std::size_t n_layers = config.real_hidden.size() + 1;
        for (std::size_t l = 0; l < config.real_hidden.size(); ++l) {
            nn::DenseLayer layer;
            layer.in = prev + (layer_is_conditioned(l, n_layers) ? 2 : 0);
            layer.out = config.real_hidden[l];
            layer.activation = nn::Activation::Relu;
            layer.weights.resize(layer.in * layer.out);
            layer.biases.assign(layer.out, 0.0);
            for (auto& w : layer.weights) w = config.init_std * rng.gaussian();
            prev = layer.out;
            net.layers.push_back(std::move(layer));
        }
        nn::DenseLayer out_layer;
        out_layer.in = prev + (layer_is_conditioned(n_layers - 1, n_layers) ? 2 : 0);
        out_layer.out = 1;
        out_layer.activation = nn::Activation::Sigmoid;
        out_layer.weights.resize(out_layer.in);
        out_layer.biases.assign(1, 0.0);
        for (auto& w : out_layer.weights) w = config.init_std * rng.gaussian();
        net.layers.push_back(std::move(out_layer));
        m.d_real = std::move(net);
    }

    // Frozen feature stack; alternating relu/tanh keeps both signs of the
    // input observable through the L1 match.
    {
        std::vector<nn::Activation> acts;
        for (std::size_t l = 0; l < config.surrogate_layers.size(); ++l)
            acts.push_back(l % 2 == 1 ? nn::Activation::Tanh : nn::Activation::Relu);
        m.surrogate =
            nn::make_network(config.input_dim, config.surrogate_layers, acts, rng, 0.25);
    }
    return m;
}

PkModel with_ablation(const PkModel& base, const AblationFlags& flags) {
    PkModel m = base;
    m.config.flags = flags;
    if (!flags.use_em) m.config.lambdas[1] = 0.0;
    if (!flags.use_prior) m.config.lambdas[3] = 0.0;
    if (!flags.use_real) m.config.lambdas[4] = 0.0;
    return m;
}

Vec encode(const PkModel& model, const Vec& x) { return nn::forward(model.encoder, x); }

Vec generate(const PkModel& model, const Vec& z, const AffectLabel& y) {
    if (z.size() != model.config.latent_dim)
        throw config_error("generate: latent code has wrong dimension");
    return nn::forward(model.generator, concat_label(z, y));
}

double d_real_score(const PkModel& model, const Vec& x, const AffectLabel& y) {
    return cond_forward(model.d_real, x, y, nullptr);
}

double loss_rec(const PkModel& model, const Vec& x, const AffectLabel& y) {
    const Vec x_gen = generate(model, encode(model, x), y);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::fabs(x[i] - x_gen[i]);
    return acc / static_cast<double>(x.size());
}

double loss_iden(const PkModel& model, const Vec& x, const Vec& x_gen) {
    return iden_value_and_grad(model.surrogate, x, x_gen, nullptr);
}

double loss_em(const PkModel& model, const Vec& x, const AffectLabel& y_true) {
    const Vec pred = nn::forward(model.d_em, encode(model, x));
    const double da = pred[0] - y_true.arousal;
    const double dv = pred[1] - y_true.valence;
    return da * da + dv * dv;
}

PriorLoss loss_prior(const PkModel& model, const Vec& x, const Vec& z_prior_sample) {
    PriorLoss out;
    const double d_on_prior =
        clamp_prob(nn::forward(model.d_prior, z_prior_sample)[0], out.saturations);
    const double d_on_code =
        clamp_prob(nn::forward(model.d_prior, encode(model, x))[0], out.saturations);
    out.d_loss = -(std::log(d_on_prior) + std::log(1.0 - d_on_code));
    out.e_loss = -std::log(d_on_code);
    return out;
}

ImgLoss loss_img(const PkModel& model, const Vec& x, const AffectLabel& y, const Vec& x_gen) {
    ImgLoss out;
    const double d_on_real = clamp_prob(cond_forward(model.d_real, x, y, nullptr), out.saturations);
    const double d_on_gen = clamp_prob(cond_forward(model.d_real, x_gen, y, nullptr), out.saturations);
    out.d_loss = -(std::log(d_on_real) + std::log(1.0 - d_on_gen));
    out.g_loss = -std::log(d_on_gen);
    return out;
}

AdamSet make_adam_set(const PkModel& model) {
    const AdamConfig& a = model.config.adam;
    return {nn::make_adam(model.encoder, a.alpha, a.beta1, a.beta2, a.eps),
            nn::make_adam(model.generator, a.alpha, a.beta1, a.beta2, a.eps),
            nn::make_adam(model.d_em, a.alpha, a.beta1, a.beta2, a.eps),
            nn::make_adam(model.d_prior, a.alpha, a.beta1, a.beta2, a.eps),
            nn::make_adam(model.d_real, a.alpha, a.beta1, a.beta2, a.eps)};
}

namespace {

struct DPhase {
    double mean_loss = 0.0;
    int saturations = 0;
};

// Discriminator objectives on their own parameters; encoder/generator
// outputs are constants here.

DPhase d_prior_phase(const PkModel& m, std::span<const ExpressionSample> batch,
                     const std::vector<Vec>& z_priors, nn::NetworkGrad* grads) {
    DPhase out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        nn::Tape tape_p, tape_z;
        const double d_on_prior_raw = nn::forward(m.d_prior, z_priors[i], tape_p)[0];
        const double d_on_code_raw =
            nn::forward(m.d_prior, encode(m, batch[i].x), tape_z)[0];
        const double d_on_prior = clamp_prob(d_on_prior_raw, out.saturations);
        const double d_on_code = clamp_prob(d_on_code_raw, out.saturations);
        out.mean_loss += -(std::log(d_on_prior) + std::log(1.0 - d_on_code));
        if (grads) {
            nn::backward(m.d_prior, tape_p, {-1.0 / std::max(d_on_prior_raw, kGradFloor)}, *grads);
            nn::backward(m.d_prior, tape_z, {1.0 / std::max(1.0 - d_on_code_raw, kGradFloor)},
                         *grads);
        }
    }
    out.mean_loss /= static_cast<double>(batch.size());
    return out;
}

// Real pairs carry the sample's own label; generated pairs carry a resampled
// edit label, so the discriminator must judge content-condition consistency
// and the generator is pushed to honor arbitrary conditions, not just the
// one the input already satisfies.
DPhase d_real_phase(const PkModel& m, std::span<const ExpressionSample> batch,
                    std::span<const AffectLabel> edit_labels, nn::NetworkGrad* grads) {
    DPhase out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ExpressionSample& s = batch[i];
        const AffectLabel& y = require_label(s, "train_step");
        const AffectLabel& y_edit = edit_labels[i];
        const Vec x_edit = generate(m, encode(m, s.x), y_edit);
        CondTape tape_r, tape_g;
        const double d_on_real_raw = cond_forward(m.d_real, s.x, y, &tape_r);
        const double d_on_gen_raw = cond_forward(m.d_real, x_edit, y_edit, &tape_g);
        const double d_on_real = clamp_prob(d_on_real_raw, out.saturations);
        const double d_on_gen = clamp_prob(d_on_gen_raw, out.saturations);
        out.mean_loss += -(std::log(d_on_real) + std::log(1.0 - d_on_gen));
        if (grads) {
            cond_backward(m.d_real, tape_r, -1.0 / std::max(d_on_real_raw, kGradFloor), grads);
            cond_backward(m.d_real, tape_g, 1.0 / std::max(1.0 - d_on_gen_raw, kGradFloor), grads);
        }
    }
    out.mean_loss /= static_cast<double>(batch.size());
    return out;
}

DPhase d_em_phase(const PkModel& m, std::span<const ExpressionSample> batch,
                  nn::NetworkGrad* grads) {
    DPhase out;
    for (const auto& s : batch) {
        const AffectLabel& y = require_label(s, "train_step");
        nn::Tape tape;
        const Vec pred = nn::forward(m.d_em, encode(m, s.x), tape);
        const double da = pred[0] - y.arousal;
        const double dv = pred[1] - y.valence;
        out.mean_loss += da * da + dv * dv;
        if (grads) nn::backward(m.d_em, tape, {2.0 * da, 2.0 * dv}, *grads);
    }
    out.mean_loss /= static_cast<double>(batch.size());
    return out;
}

struct EgPhase {
    double l_rec = 0.0;
    double l_em = 0.0;
    double l_iden = 0.0;
    double l_prior_g = 0.0;
    double l_img_g = 0.0;
    double total = 0.0;
    int saturations = 0;
};

// Gradient of sum_k weights[k] * component_k with respect to encoder and
// generator parameters; discriminators and surrogate are constants. A zero
// weight skips that component entirely. Reconstruction and identity use the
// sample's own label; the adversarial generator term uses the resampled
// edit label paired with it.
EgPhase eg_phase(const PkModel& m, std::span<const ExpressionSample> batch,
                 std::span<const AffectLabel> edit_labels, const std::array<double, 5>& weights,
                 nn::NetworkGrad* grads_e, nn::NetworkGrad* grads_g) {
    EgPhase out;
    const std::size_t input_dim = m.config.input_dim;
    const std::size_t latent_dim = m.config.latent_dim;
    const bool need_rec_path = weights[0] != 0.0 || weights[2] != 0.0;
    const bool need_edit_path = weights[4] != 0.0;

    for (std::size_t si = 0; si < batch.size(); ++si) {
        const ExpressionSample& s = batch[si];
        const AffectLabel& y = require_label(s, "train_step");
        nn::Tape tape_e;
        const Vec z = nn::forward(m.encoder, s.x, tape_e);
        Vec dz(latent_dim, 0.0);

        if (need_rec_path) {
            nn::Tape tape_g;
            const Vec x_gen = nn::forward(m.generator, concat_label(z, y), tape_g);
            Vec dxgen(input_dim, 0.0);
            if (weights[0] != 0.0) {
                double acc = 0.0;
                const double inv = 1.0 / static_cast<double>(input_dim);
                for (std::size_t i = 0; i < input_dim; ++i) {
                    acc += std::fabs(s.x[i] - x_gen[i]);
                    dxgen[i] += weights[0] * sign_or_zero(x_gen[i] - s.x[i]) * inv;
                }
                out.l_rec += acc * inv;
            }
            if (weights[2] != 0.0) {
                Vec diden;
                out.l_iden += iden_value_and_grad(m.surrogate, s.x, x_gen, &diden);
                for (std::size_t i = 0; i < input_dim; ++i) dxgen[i] += weights[2] * diden[i];
            }
            const Vec dgin = grads_g ? nn::backward(m.generator, tape_g, dxgen, *grads_g)
                                     : nn::backward_input_only(m.generator, tape_g, dxgen);
            for (std::size_t i = 0; i < latent_dim; ++i) dz[i] += dgin[i];
        }

        if (need_edit_path) {
            const AffectLabel& y_edit = edit_labels[si];
            nn::Tape tape_g;
            const Vec x_edit = nn::forward(m.generator, concat_label(z, y_edit), tape_g);
            CondTape tape_r;
            const double d_raw = cond_forward(m.d_real, x_edit, y_edit, &tape_r);
            out.l_img_g += -std::log(clamp_prob(d_raw, out.saturations));
            Vec dxedit =
                cond_backward(m.d_real, tape_r, -1.0 / std::max(d_raw, kGradFloor), nullptr);
            for (std::size_t i = 0; i < input_dim; ++i) dxedit[i] *= weights[4];
            const Vec dgin = grads_g ? nn::backward(m.generator, tape_g, dxedit, *grads_g)
                                     : nn::backward_input_only(m.generator, tape_g, dxedit);
            for (std::size_t i = 0; i < latent_dim; ++i) dz[i] += dgin[i];
        }

        if (weights[1] != 0.0) {
            nn::Tape tape_em;
            const Vec pred = nn::forward(m.d_em, z, tape_em);
            const double da = pred[0] - y.arousal;
            const double dv = pred[1] - y.valence;
            out.l_em += da * da + dv * dv;
            const Vec dz_em =
                nn::backward_input_only(m.d_em, tape_em, {2.0 * da, 2.0 * dv});
            for (std::size_t i = 0; i < latent_dim; ++i) dz[i] += weights[1] * dz_em[i];
        }
        if (weights[3] != 0.0) {
            nn::Tape tape_dp;
            const double d_raw = nn::forward(m.d_prior, z, tape_dp)[0];
            out.l_prior_g += -std::log(clamp_prob(d_raw, out.saturations));
            const Vec dz_pr = nn::backward_input_only(
                m.d_prior, tape_dp, {-1.0 / std::max(d_raw, kGradFloor)});
            for (std::size_t i = 0; i < latent_dim; ++i) dz[i] += weights[3] * dz_pr[i];
        }

        if (grads_e) {
            nn::backward(m.encoder, tape_e, dz, *grads_e);
        }
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    out.l_rec *= inv_b;
    out.l_em *= inv_b;
    out.l_iden *= inv_b;
    out.l_prior_g *= inv_b;
    out.l_img_g *= inv_b;
    out.total = weights[0] * out.l_rec + weights[1] * out.l_em + weights[2] * out.l_iden +
                weights[3] * out.l_prior_g + weights[4] * out.l_img_g;
    return out;
}

std::array<double, 5> effective_weights(const PkConfig& c) {
    std::array<double, 5> w = c.lambdas;
    if (!c.flags.use_em) w[1] = 0.0;
    if (!c.flags.use_prior) w[3] = 0.0;
    if (!c.flags.use_real) w[4] = 0.0;
    return w;
}

void require_finite(double v, const char* component) {
    if (!std::isfinite(v))
        throw numeric_error(std::string("train_step: non-finite ") + component);
}

}  // namespace

LossBreakdown train_step(PkModel& model, std::span<const ExpressionSample> batch,
                         AdamSet& adams, Rng& rng) {
    if (batch.empty()) throw config_error("train_step: empty batch");
    const std::size_t B = batch.size();
    const double inv_b = 1.0 / static_cast<double>(B);
    LossBreakdown out;

    // Discriminator phase.
    if (model.config.flags.use_prior) {
        std::vector<Vec> z_priors(B);
        for (auto& zp : z_priors) {
            zp.resize(model.config.latent_dim);
            for (auto& v : zp) v = rng.uniform(model.config.prior_lo, model.config.prior_hi);
        }
        nn::NetworkGrad grads = nn::zero_grad_like(model.d_prior);
        const DPhase r = d_prior_phase(model, batch, z_priors, &grads);
        grads.scale(inv_b);
        require_finite(r.mean_loss, "l_prior_d");
        nn::adam_step(adams.d_prior, model.d_prior, grads);
        out.l_prior_d = r.mean_loss;
        out.saturations += r.saturations;
    }
    std::vector<AffectLabel> edit_labels(B);
    if (model.config.flags.use_real) {
        for (auto& y : edit_labels) y = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        nn::NetworkGrad grads = nn::zero_grad_like(model.d_real);
        const DPhase r = d_real_phase(model, batch, edit_labels, &grads);
        grads.scale(inv_b);
        require_finite(r.mean_loss, "l_img_d");
        nn::adam_step(adams.d_real, model.d_real, grads);
        out.l_img_d = r.mean_loss;
        out.saturations += r.saturations;
    }
    if (model.config.flags.use_em) {
        nn::NetworkGrad grads = nn::zero_grad_like(model.d_em);
        const DPhase r = d_em_phase(model, batch, &grads);
        grads.scale(inv_b);
        require_finite(r.mean_loss, "l_em (discriminator phase)");
        nn::adam_step(adams.d_em, model.d_em, grads);
    }

    // Encoder/generator phase on the weighted total.
    const std::array<double, 5> weights = effective_weights(model.config);
    nn::NetworkGrad grads_e = nn::zero_grad_like(model.encoder);
    nn::NetworkGrad grads_g = nn::zero_grad_like(model.generator);
    const EgPhase eg = eg_phase(model, batch, edit_labels, weights, &grads_e, &grads_g);
    grads_e.scale(inv_b);
    grads_g.scale(inv_b);
    require_finite(eg.l_rec, "l_rec");
    require_finite(eg.l_em, "l_em");
    require_finite(eg.l_iden, "l_iden");
    require_finite(eg.l_prior_g, "l_prior_g");
    require_finite(eg.l_img_g, "l_img_g");
    require_finite(eg.total, "total");
    nn::adam_step(adams.encoder, model.encoder, grads_e);
    nn::adam_step(adams.generator, model.generator, grads_g);

    out.l_rec = eg.l_rec;
    out.l_em = eg.l_em;
    out.l_iden = eg.l_iden;
    out.l_prior_g = eg.l_prior_g;
    out.l_img_g = eg.l_img_g;
    out.total = eg.total;
    out.saturations += eg.saturations;
    return out;
}

// ---------------------------------------------------------------------------
// Gradient verification

namespace {

constexpr double kCheckEps = 1e-5;

double rel_error(double analytic, double numeric) {
    return std::fabs(analytic - numeric) /
           std::max(1.0, std::fabs(analytic) + std::fabs(numeric));
}

// Central-difference sweep over one network against precomputed analytic
// gradients, folding results into `check`.
template <typename F>
void sweep_network(nn::Network& net, const nn::NetworkGrad& analytic, const F& f,
                   ComponentCheck& check, double fault_offset) {
    bool fault_pending = fault_offset != 0.0 && check.parameters == 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto sweep_block = [&](Vec& params, const Vec& grad) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double saved = params[i];
                params[i] = saved + kCheckEps;
                const double up = f();
                params[i] = saved - kCheckEps;
                const double down = f();
                params[i] = saved;
                double a = grad[i];
                if (fault_pending) {
                    a += fault_offset;
                    fault_pending = false;
                }
                const double numeric = (up - down) / (2.0 * kCheckEps);
                check.max_rel_error = std::max(check.max_rel_error, rel_error(a, numeric));
                check.parameters += 1;
            }
        };
        sweep_block(net.layers[l].weights, analytic.dweights[l]);
        sweep_block(net.layers[l].biases, analytic.dbiases[l]);
    }
}

}  // namespace

std::vector<ComponentCheck> gradient_check(PkModel& model,
                                           std::span<const ExpressionSample> batch,
                                           Rng& rng, double fault_offset) {
    if (batch.empty()) throw config_error("gradient_check: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const PkConfig& cfg = model.config;
    std::vector<ComponentCheck> checks;

    // Fixed prior and edit-label draws shared by the analytic and numeric
    // sides.
    std::vector<Vec> z_priors(batch.size());
    for (auto& zp : z_priors) {
        zp.resize(cfg.latent_dim);
        for (auto& v : zp) v = rng.uniform(cfg.prior_lo, cfg.prior_hi);
    }
    std::vector<AffectLabel> edit_labels(batch.size());
    for (auto& y : edit_labels) y = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

    auto mean_over_batch = [&](auto&& per_sample) {
        double acc = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) acc += per_sample(batch[i], i);
        return acc * inv_b;
    };

    auto eg_component = [&](const char* name, std::size_t weight_index, auto&& value_fn) {
        std::array<double, 5> w{};
        w[weight_index] = 1.0;
        nn::NetworkGrad ge = nn::zero_grad_like(model.encoder);
        nn::NetworkGrad gg = nn::zero_grad_like(model.generator);
        eg_phase(model, batch, edit_labels, w, &ge, &gg);
        ge.scale(inv_b);
        gg.scale(inv_b);
        ComponentCheck check{name};
        auto f = [&] { return mean_over_batch(value_fn); };
        sweep_network(model.encoder, ge, f, check, fault_offset);
        sweep_network(model.generator, gg, f, check, fault_offset);
        return check;
    };

    auto f_rec = [&](const ExpressionSample& s, std::size_t) {
        return loss_rec(model, s.x, *s.y);
    };
    auto f_em = [&](const ExpressionSample& s, std::size_t) { return loss_em(model, s.x, *s.y); };
    auto f_iden = [&](const ExpressionSample& s, std::size_t) {
        return loss_iden(model, s.x, generate(model, encode(model, s.x), *s.y));
    };
    auto f_prior_g = [&](const ExpressionSample& s, std::size_t) {
        int sat = 0;
        return -std::log(clamp_prob(nn::forward(model.d_prior, encode(model, s.x))[0], sat));
    };
    auto f_img_g = [&](const ExpressionSample& s, std::size_t i) {
        int sat = 0;
        const Vec x_edit = generate(model, encode(model, s.x), edit_labels[i]);
        return -std::log(
            clamp_prob(cond_forward(model.d_real, x_edit, edit_labels[i], nullptr), sat));
    };

    for (const auto& s : batch) require_label(s, "gradient_check");

    checks.push_back(eg_component("rec", 0, f_rec));
    checks.push_back(eg_component("iden", 2, f_iden));

    if (cfg.flags.use_em) {
        // Joint check over the discriminator's own parameters and the
        // encoder parameters it feeds back into.
        nn::NetworkGrad gd = nn::zero_grad_like(model.d_em);
        d_em_phase(model, batch, &gd);
        gd.scale(inv_b);
        nn::NetworkGrad ge = nn::zero_grad_like(model.encoder);
        {
            std::array<double, 5> w{};
            w[1] = 1.0;
            eg_phase(model, batch, edit_labels, w, &ge, nullptr);
            ge.scale(inv_b);
        }
        ComponentCheck check{"em"};
        auto f = [&] { return mean_over_batch(f_em); };
        sweep_network(model.d_em, gd, f, check, fault_offset);
        sweep_network(model.encoder, ge, f, check, fault_offset);
        checks.push_back(check);
    }

    if (cfg.flags.use_prior) {
        nn::NetworkGrad gd = nn::zero_grad_like(model.d_prior);
        d_prior_phase(model, batch, z_priors, &gd);
        gd.scale(inv_b);
        ComponentCheck check{"prior_d"};
        auto f = [&] {
            return mean_over_batch([&](const ExpressionSample& s, std::size_t i) {
                int sat = 0;
                const double dp = clamp_prob(nn::forward(model.d_prior, z_priors[i])[0], sat);
                const double dz =
                    clamp_prob(nn::forward(model.d_prior, encode(model, s.x))[0], sat);
                return -(std::log(dp) + std::log(1.0 - dz));
            });
        };
        sweep_network(model.d_prior, gd, f, check, fault_offset);
        checks.push_back(check);

        ComponentCheck check_g{"prior_g"};
        nn::NetworkGrad ge = nn::zero_grad_like(model.encoder);
        {
            std::array<double, 5> w{};
            w[3] = 1.0;
            eg_phase(model, batch, edit_labels, w, &ge, nullptr);
            ge.scale(inv_b);
        }
        auto fg = [&] { return mean_over_batch(f_prior_g); };
        sweep_network(model.encoder, ge, fg, check_g, fault_offset);
        checks.push_back(check_g);
    }

    if (cfg.flags.use_real) {
        nn::NetworkGrad gd = nn::zero_grad_like(model.d_real);
        d_real_phase(model, batch, edit_labels, &gd);
        gd.scale(inv_b);
        ComponentCheck check{"img_d"};
        auto f = [&] {
            return mean_over_batch([&](const ExpressionSample& s, std::size_t i) {
                int sat = 0;
                const Vec x_edit = generate(model, encode(model, s.x), edit_labels[i]);
                const double dr = clamp_prob(cond_forward(model.d_real, s.x, *s.y, nullptr), sat);
                const double dg = clamp_prob(
                    cond_forward(model.d_real, x_edit, edit_labels[i], nullptr), sat);
                return -(std::log(dr) + std::log(1.0 - dg));
            });
        };
        sweep_network(model.d_real, gd, f, check, fault_offset);
        checks.push_back(check);

        checks.push_back(eg_component("img_g", 4, f_img_g));
    }

    // Weighted total over encoder and generator parameters.
    {
        const std::array<double, 5> w = effective_weights(cfg);
        nn::NetworkGrad ge = nn::zero_grad_like(model.encoder);
        nn::NetworkGrad gg = nn::zero_grad_like(model.generator);
        eg_phase(model, batch, edit_labels, w, &ge, &gg);
        ge.scale(inv_b);
        gg.scale(inv_b);
        ComponentCheck check{"total"};
        auto f = [&] {
            return mean_over_batch([&](const ExpressionSample& s, std::size_t i) {
                double acc = w[0] * f_rec(s, i) + w[2] * f_iden(s, i);
                if (w[1] != 0.0) acc += w[1] * f_em(s, i);
                if (w[3] != 0.0) acc += w[3] * f_prior_g(s, i);
                if (w[4] != 0.0) acc += w[4] * f_img_g(s, i);
                return acc;
            });
        };
        sweep_network(model.encoder, ge, f, check, fault_offset);
        sweep_network(model.generator, gg, f, check, fault_offset);
        checks.push_back(check);
    }

    return checks;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json net_to_json_obj(const nn::Network& net) {
    return nlohmann::json::parse(nn::to_json(net));
}

nlohmann::json config_to_json(const PkConfig& c) {
    nlohmann::json j;
    j["input_dim"] = c.input_dim;
    j["latent_dim"] = c.latent_dim;
    j["encoder_hidden"] = c.encoder_hidden;
    j["generator_hidden"] = c.generator_hidden;
    j["em_hidden"] = c.em_hidden;
    j["prior_hidden"] = c.prior_hidden;
    j["real_hidden"] = c.real_hidden;
    j["surrogate_layers"] = c.surrogate_layers;
    j["init_std"] = c.init_std;
    j["prior_lo"] = c.prior_lo;
    j["prior_hi"] = c.prior_hi;
    j["lambdas"] = c.lambdas;
    j["batch_size"] = c.batch_size;
    j["adam"] = {{"alpha", c.adam.alpha},
                 {"beta1", c.adam.beta1},
                 {"beta2", c.adam.beta2},
                 {"eps", c.adam.eps}};
    j["use_prior"] = c.flags.use_prior;
    j["use_real"] = c.flags.use_real;
    j["use_em"] = c.flags.use_em;
    return j;
}

PkConfig config_from_json(const nlohmann::json& j) {
    PkConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    c.generator_hidden = j.at("generator_hidden").get<std::vector<std::size_t>>();
    c.em_hidden = j.at("em_hidden").get<std::vector<std::size_t>>();
    c.prior_hidden = j.at("prior_hidden").get<std::vector<std::size_t>>();
    c.real_hidden = j.at("real_hidden").get<std::vector<std::size_t>>();
    c.surrogate_layers = j.at("surrogate_layers").get<std::vector<std::size_t>>();
    c.init_std = j.at("init_std").get<double>();
    c.prior_lo = j.at("prior_lo").get<double>();
    c.prior_hi = j.at("prior_hi").get<double>();
    const auto lambdas = j.at("lambdas").get<std::vector<double>>();
    if (lambdas.size() != 5) throw config_error("checkpoint: expected 5 lambdas");
    std::copy(lambdas.begin(), lambdas.end(), c.lambdas.begin());
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.adam.alpha = j.at("adam").at("alpha").get<double>();
    c.adam.beta1 = j.at("adam").at("beta1").get<double>();
    c.adam.beta2 = j.at("adam").at("beta2").get<double>();
    c.adam.eps = j.at("adam").at("eps").get<double>();
    c.flags.use_prior = j.at("use_prior").get<bool>();
    c.flags.use_real = j.at("use_real").get<bool>();
    c.flags.use_em = j.at("use_em").get<bool>();
    c.validate();
    return c;
}

}  // namespace

std::string checkpoint_json(const PkModel& model) {
    nlohmann::json j;
    j["config"] = config_to_json(model.config);
    j["networks"] = {{"encoder", net_to_json_obj(model.encoder)},
                     {"generator", net_to_json_obj(model.generator)},
                     {"d_em", net_to_json_obj(model.d_em)},
                     {"d_prior", net_to_json_obj(model.d_prior)},
                     {"d_real", net_to_json_obj(model.d_real)},
                     {"surrogate", net_to_json_obj(model.surrogate)}};
    return j.dump();
}

namespace {

void require_chain(const nn::Network& net, const char* name) {
    for (std::size_t l = 1; l < net.layers.size(); ++l)
        if (net.layers[l].in != net.layers[l - 1].out)
            throw config_error(std::string("checkpoint: ") + name +
                               " has incompatible adjacent layer dims");
}

void require_conditioned_chain(const nn::Network& net, const char* name) {
    const std::size_t n = net.layers.size();
    for (std::size_t l = 1; l < n; ++l) {
        const std::size_t expected =
            net.layers[l - 1].out + (layer_is_conditioned(l, n) ? 2 : 0);
        if (net.layers[l].in != expected)
            throw config_error(std::string("checkpoint: ") + name +
                               " has incompatible conditioned layer dims");
    }
}

}  // namespace

PkModel model_from_checkpoint_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    PkModel m;
    m.config = config_from_json(j.at("config"));
    const auto& nets = j.at("networks");
    m.encoder = nn::network_from_json(nets.at("encoder").dump());
    m.generator = nn::network_from_json(nets.at("generator").dump());
    m.d_em = nn::network_from_json(nets.at("d_em").dump());
    m.d_prior = nn::network_from_json(nets.at("d_prior").dump());
    m.d_real = nn::network_from_json(nets.at("d_real").dump());
    m.surrogate = nn::network_from_json(nets.at("surrogate").dump());
    require_chain(m.encoder, "encoder");
    require_chain(m.generator, "generator");
    require_chain(m.d_em, "d_em");
    require_chain(m.d_prior, "d_prior");
    require_chain(m.surrogate, "surrogate");
    require_conditioned_chain(m.d_real, "d_real");
    if (m.encoder.input_dim() != m.config.input_dim ||
        m.encoder.output_dim() != m.config.latent_dim)
        throw config_error("checkpoint: encoder dims do not match config");
    if (m.generator.input_dim() != m.config.latent_dim + 2 ||
        m.generator.output_dim() != m.config.input_dim)
        throw config_error("checkpoint: generator dims do not match config");
    return m;
}

void save_checkpoint(const PkModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open checkpoint for writing: " + path);
    out << checkpoint_json(model);
}

PkModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_from_checkpoint_json(ss.str());
}

}  // namespace affmem::pk
