#include "affmem/metrics.hpp"

#include <cmath>
#include <string>

#include "affmem/errors.hpp"

namespace affmem::metrics {

namespace {

struct Moments {
    double mean_p = 0.0, mean_t = 0.0;
    double var_p = 0.0, var_t = 0.0;  // population (1/n)
    double cov = 0.0;
    std::size_t n = 0;
};

Moments moments(const SeriesPair& pair) {
    const auto& p = pair.predictions;
    const auto& t = pair.truths;
    if (p.size() != t.size())
        throw config_error("series length mismatch: " + std::to_string(p.size()) + " vs " +
                           std::to_string(t.size()));
    if (p.size() < 2) throw config_error("series must have at least 2 entries");
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!std::isfinite(p[i]) || !std::isfinite(t[i]))
            throw numeric_error("non-finite series entry at index " + std::to_string(i));

    Moments m;
    m.n = p.size();
    const double inv_n = 1.0 / static_cast<double>(m.n);
    for (std::size_t i = 0; i < m.n; ++i) {
        m.mean_p += p[i];
        m.mean_t += t[i];
    }
    m.mean_p *= inv_n;
    m.mean_t *= inv_n;
    for (std::size_t i = 0; i < m.n; ++i) {
        const double dp = p[i] - m.mean_p;
        const double dt = t[i] - m.mean_t;
        m.var_p += dp * dp;
        m.var_t += dt * dt;
        m.cov += dp * dt;
    }
    m.var_p *= inv_n;
    m.var_t *= inv_n;
    m.cov *= inv_n;
    return m;
}

}  // namespace

double ccc(const SeriesPair& pair) {
    const Moments m = moments(pair);
    const double gap = m.mean_p - m.mean_t;
    const double denom = m.var_p + m.var_t + gap * gap;
    if (denom == 0.0) return 1.0;  // both series constant and equal
    if (m.cov == 0.0) return 0.0;  // e.g. constant prediction against varying truth
    return 2.0 * m.cov / denom;
}

double pearson(const SeriesPair& pair) {
    const Moments m = moments(pair);
    if (m.var_p == 0.0 || m.var_t == 0.0)
        throw config_error("pearson undefined for constant series");
    return m.cov / (std::sqrt(m.var_p) * std::sqrt(m.var_t));
}

CccReport ccc_pairwise_report(const SeriesPair& arousal, const SeriesPair& valence) {
    return {ccc(arousal), ccc(valence)};
}

}  // namespace affmem::metrics
