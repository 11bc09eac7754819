#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "affmem/affect.hpp"
#include "affmem/rng.hpp"

namespace affmem::synth {

struct SynthWorldConfig {
    std::size_t input_dim = 24;
    std::size_t style_dim = 4;
    double noise_scale = 0.05;
    double walk_step = 0.02;    // random-walk step scale per frame
    double style_scale = 0.5;   // per-person offset magnitude
    std::uint64_t world_seed = 1;
};

/// Observations are a fixed random affine function of (arousal, valence,
/// person style, noise). The affect block is full rank, so labels are
/// recoverable in principle and experiment outcomes are attributable to the
/// training losses rather than to capacity.
class SynthWorld {
public:
    explicit SynthWorld(const SynthWorldConfig& config);

    const SynthWorldConfig& config() const { return config_; }

    /// One observation for a given label and style vector.
    Vec observe(const AffectLabel& y, const Vec& style, Rng& noise_rng) const;

    /// n labeled samples with uniform labels and zero style.
    std::vector<ExpressionSample> sample_dataset(std::size_t n, std::uint64_t seed) const;

    /// One person's ordered stream: a fixed random style vector and labels
    /// following a clipped smooth random walk.
    std::vector<ExpressionSample> sample_person_stream(std::uint64_t person_seed,
                                                       std::size_t length) const;

    /// Style vector a person stream with this seed would use.
    Vec person_style(std::uint64_t person_seed) const;

private:
    SynthWorldConfig config_;
    std::vector<double> affect_map_;  // input_dim x 2, row-major
    std::vector<double> style_map_;   // input_dim x style_dim, row-major
    Vec offset_;                      // input_dim
};

}  // namespace affmem::synth
