#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "affmem/errors.hpp"

namespace affmem {

using Vec = std::vector<double>;

/// Continuous arousal/valence pair, both in [-1, 1].
struct AffectLabel {
    double arousal = 0.0;
    double valence = 0.0;

    static AffectLabel clamped(double a, double v) {
        return {std::clamp(a, -1.0, 1.0), std::clamp(v, -1.0, 1.0)};
    }

    void validate() const {
        if (arousal < -1.0 || arousal > 1.0 || valence < -1.0 || valence > 1.0)
            throw config_error("AffectLabel outside [-1, 1]^2");
    }

    bool operator==(const AffectLabel&) const = default;
};

/// One observed input vector, optionally labeled, belonging to one person's
/// ordered stream.
struct ExpressionSample {
    Vec x;
    std::optional<AffectLabel> y;
    std::string person_id;
    std::size_t frame_index = 0;
};

}  // namespace affmem
