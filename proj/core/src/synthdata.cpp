#include "affmem/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "affmem/errors.hpp"

namespace affmem::synth {

SynthWorld::SynthWorld(const SynthWorldConfig& config) : config_(config) {
    if (config.input_dim == 0) throw config_error("synthworld: input_dim must be positive");
    if (config.noise_scale < 0.0) throw config_error("synthworld: noise_scale must be >= 0");

    Rng rng(mix_seed(config.world_seed, 0x5752444cULL));
    affect_map_.resize(config.input_dim * 2);
    for (auto& v : affect_map_) v = rng.gaussian();
    style_map_.resize(config.input_dim * config.style_dim);
    for (auto& v : style_map_) v = config.style_scale * rng.gaussian();
    offset_.resize(config.input_dim);
    for (auto& v : offset_) v = 0.5 * rng.gaussian();

    // Gram determinant of the affect block; zero would make labels
    // unrecoverable and every downstream experiment meaningless.
    double g00 = 0, g01 = 0, g11 = 0;
    for (std::size_t i = 0; i < config.input_dim; ++i) {
        g00 += affect_map_[2 * i] * affect_map_[2 * i];
        g01 += affect_map_[2 * i] * affect_map_[2 * i + 1];
        g11 += affect_map_[2 * i + 1] * affect_map_[2 * i + 1];
    }
    if (g00 * g11 - g01 * g01 <= 1e-9)
        throw numeric_error("synthworld: affect block of the mixing map is rank deficient");
}

Vec SynthWorld::observe(const AffectLabel& y, const Vec& style, Rng& noise_rng) const {
    if (style.size() != config_.style_dim)
        throw config_error("synthworld: style vector has wrong dimension");
    Vec x(config_.input_dim);
    for (std::size_t i = 0; i < config_.input_dim; ++i) {
        double acc = offset_[i];
        acc += affect_map_[2 * i] * y.arousal + affect_map_[2 * i + 1] * y.valence;
        const double* srow = style_map_.data() + i * config_.style_dim;
        for (std::size_t k = 0; k < config_.style_dim; ++k) acc += srow[k] * style[k];
        acc += config_.noise_scale * noise_rng.gaussian();
        x[i] = acc;
    }
    return x;
}

std::vector<ExpressionSample> SynthWorld::sample_dataset(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw config_error("sample_dataset: n must be positive");
    Rng rng(mix_seed(seed, 0x44415441ULL));
    const Vec zero_style(config_.style_dim, 0.0);
    std::vector<ExpressionSample> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        AffectLabel y{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        ExpressionSample s;
        s.x = observe(y, zero_style, rng);
        s.y = y;
        s.person_id = "dataset";
        s.frame_index = i;
        samples.push_back(std::move(s));
    }
    return samples;
}

Vec SynthWorld::person_style(std::uint64_t person_seed) const {
    Rng rng(mix_seed(person_seed, 0x5354594cULL));
    Vec style(config_.style_dim);
    for (auto& v : style) v = rng.gaussian();
    return style;
}

std::vector<ExpressionSample> SynthWorld::sample_person_stream(std::uint64_t person_seed,
                                                               std::size_t length) const {
    if (length == 0) throw config_error("sample_person_stream: length must be positive");
    const Vec style = person_style(person_seed);
    Rng rng(mix_seed(person_seed, 0x57414c4bULL));

    AffectLabel y{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    std::vector<ExpressionSample> frames;
    frames.reserve(length);
    const std::string person_id = "person_" + std::to_string(person_seed);
    for (std::size_t t = 0; t < length; ++t) {
        ExpressionSample s;
        s.x = observe(y, style, rng);
        s.y = y;
        s.person_id = person_id;
        s.frame_index = t;
        frames.push_back(std::move(s));
        y.arousal = std::clamp(y.arousal + config_.walk_step * rng.gaussian(), -1.0, 1.0);
        y.valence = std::clamp(y.valence + config_.walk_step * rng.gaussian(), -1.0, 1.0);
    }
    return frames;
}

}  // namespace affmem::synth
