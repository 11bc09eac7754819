#pragma once

#include <cstddef>
#include <vector>

namespace affmem::metrics {

struct SeriesPair {
    std::vector<double> predictions;
    std::vector<double> truths;
};

/// Concordance correlation coefficient, computed with population (1/n)
/// moments in the covariance form 2*cov / (var_p + var_t + (mean gap)^2).
/// Degenerate conventions: zero denominator -> 1 (identical constants),
/// zero covariance with positive denominator -> 0.
double ccc(const SeriesPair& pair);

/// Pearson correlation; throws if either series is constant.
double pearson(const SeriesPair& pair);

struct CccReport {
    double ccc_arousal = 0.0;
    double ccc_valence = 0.0;
};

CccReport ccc_pairwise_report(const SeriesPair& arousal, const SeriesPair& valence);

}  // namespace affmem::metrics
