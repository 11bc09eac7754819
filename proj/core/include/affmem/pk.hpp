#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "affmem/affect.hpp"
#include "affmem/nn.hpp"
#include "affmem/rng.hpp"

namespace affmem::pk {

/// Which adversarial discriminators take part in training. Disabled ones
/// contribute zero loss, receive no updates, and keep their initial weights.
struct AblationFlags {
    bool use_prior = true;
    bool use_real = true;
    bool use_em = true;
};

struct AdamConfig {
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct PkConfig {
    std::size_t input_dim = 24;
    std::size_t latent_dim = 50;
    std::vector<std::size_t> encoder_hidden = {48};
    std::vector<std::size_t> generator_hidden = {48};
    std::vector<std::size_t> em_hidden = {32};
    std::vector<std::size_t> prior_hidden = {32, 16, 8};
    std::vector<std::size_t> real_hidden = {48, 24};
    std::vector<std::size_t> surrogate_layers = {32, 32, 16};
    double init_std = 0.02;
    double prior_lo = -1.0;
    double prior_hi = 1.0;
    // rec, em, iden, prior (L_z), img
    std::array<double, 5> lambdas = {1.0, 0.02, 0.3, 0.01, 0.01};
    std::size_t batch_size = 48;
    AdamConfig adam;
    AblationFlags flags;

    void validate() const;
};

/// Encoder E, generator G, the three discriminators, and the frozen identity
/// surrogate. Value object: copy for snapshots, mutate only through
/// train_step (single writer per model).
struct PkModel {
    PkConfig config;
    nn::Network encoder;    // x -> z, tanh output matches the uniform box prior
    nn::Network generator;  // [z; a, v] -> x_gen
    nn::Network d_em;       // z -> (arousal, valence), tanh output
    nn::Network d_prior;    // z -> probability the code came from the prior
    nn::Network d_real;     // conditioned: (a, v) joins every hidden layer input
    nn::Network surrogate;  // frozen feature stack for the identity loss
};

PkModel make_model(const PkConfig& config, std::uint64_t seed);

/// Copy of `base` with the given discriminators enabled; the rest keep their
/// (shared) initial weights but get zero loss weight and no updates.
PkModel with_ablation(const PkModel& base, const AblationFlags& flags);

Vec encode(const PkModel& model, const Vec& x);
Vec generate(const PkModel& model, const Vec& z, const AffectLabel& y);

/// Output of the conditioned discriminator, in (0, 1).
double d_real_score(const PkModel& model, const Vec& x, const AffectLabel& y);

/// Mean absolute error between x and generate(encode(x), y), where y is the
/// sample's own label.
double loss_rec(const PkModel& model, const Vec& x, const AffectLabel& y);

/// Sum over the surrogate layers of the mean absolute activation gap
/// between x and x_gen.
double loss_iden(const PkModel& model, const Vec& x, const Vec& x_gen);

/// Squared arousal error plus squared valence error of d_em on encode(x).
double loss_em(const PkModel& model, const Vec& x, const AffectLabel& y_true);

struct PriorLoss {
    double d_loss = 0.0;  // negated adversarial objective (discriminator minimizes this)
    double e_loss = 0.0;  // -log D(E(x)), the non-saturating encoder term
    int saturations = 0;  // clamps of D output into [1e-7, 1-1e-7]
};
PriorLoss loss_prior(const PkModel& model, const Vec& x, const Vec& z_prior_sample);

struct ImgLoss {
    double d_loss = 0.0;
    double g_loss = 0.0;  // -log D(x_gen, y), non-saturating
    int saturations = 0;
};
ImgLoss loss_img(const PkModel& model, const Vec& x, const AffectLabel& y, const Vec& x_gen);

struct LossBreakdown {
    double l_rec = 0.0;
    double l_em = 0.0;
    double l_iden = 0.0;
    double l_prior_d = 0.0;
    double l_prior_g = 0.0;
    double l_img_d = 0.0;
    double l_img_g = 0.0;
    double total = 0.0;  // lambda-weighted E/G objective
    int saturations = 0;
};

struct AdamSet {
    nn::AdamState encoder;
    nn::AdamState generator;
    nn::AdamState d_em;
    nn::AdamState d_prior;
    nn::AdamState d_real;
};
AdamSet make_adam_set(const PkModel& model);

/// One alternating step: each enabled discriminator updates on its own
/// objective, then E and G update on the lambda-weighted total with the
/// adversarial terms in non-saturating form. Throws numeric_error naming the
/// first non-finite component.
LossBreakdown train_step(PkModel& model, std::span<const ExpressionSample> batch,
                         AdamSet& adams, Rng& rng);

struct ComponentCheck {
    std::string component;
    double max_rel_error = 0.0;
    std::size_t parameters = 0;
};

/// Central-difference verification (eps = 1e-5) of every enabled loss
/// component's analytic gradients over all parameter blocks that receive
/// them during training. `fault_offset` shifts one analytic entry and exists
/// so the failure path itself can be exercised.
std::vector<ComponentCheck> gradient_check(PkModel& model,
                                           std::span<const ExpressionSample> batch,
                                           Rng& rng, double fault_offset = 0.0);

std::string checkpoint_json(const PkModel& model);
PkModel model_from_checkpoint_json(const std::string& text);
void save_checkpoint(const PkModel& model, const std::string& path);
PkModel load_checkpoint(const std::string& path);

}  // namespace affmem::pk
