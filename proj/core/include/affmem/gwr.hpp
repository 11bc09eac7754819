#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "affmem/affect.hpp"

namespace affmem::gwr {

struct GwrParams {
    double activity_threshold = 0.4;    // t_a
    double habituation_threshold = 0.2; // t_h
    double tau = 0.087;
    double kappa = 0.032;
    double epsilon_b = 0.1;             // BMU learning rate; not given by the source method
    double gamma = 0.4;                 // labeling factor
    int epochs = 10;
    int max_edge_age = 50;
    bool update_neighbors = false;      // classical neighbor update, off by default
    double epsilon_n = 0.01;            // neighbor learning rate when enabled

    void validate() const;
};

struct Neuron {
    Vec w;
    double h = 1.0;           // habituation counter, always in [0, 1]
    AffectLabel label;
    bool label_set = false;
};

/// Undirected edge between neuron indices (a < b) with an integer age.
struct Edge {
    std::size_t a = 0;
    std::size_t b = 0;
    int age = 0;
};

struct BmuResult {
    std::size_t best = 0;
    std::size_t second = 0;
    double activity = 0.0;  // exp(-||x - w_best||^2)
};

struct GrowEvent {
    enum class Kind { Inserted, Updated };
    Kind kind = Kind::Updated;
    std::size_t index = 0;  // inserted neuron or updated BMU
};

/// Habituation rule dh = tau * kappa * (1 - h) - tau, result clamped to [0, 1].
double habituate(double h, const GwrParams& params);

/// A grow-when-required prototype memory. Neurons are never removed, so
/// indices are stable for the lifetime of the memory.
class GwrMemory {
public:
    /// Initializes with exactly two neurons.
    GwrMemory(GwrParams params, const Vec& w0, const Vec& w1,
              std::optional<AffectLabel> label0 = std::nullopt,
              std::optional<AffectLabel> label1 = std::nullopt);

    /// Best and second-best matching unit; ties broken by lowest index.
    BmuResult bmu(const Vec& x) const;

    /// One presentation: insert a neuron when activity and BMU habituation
    /// are both below their thresholds, otherwise move the BMU toward x
    /// (activity-modulated) and maintain the edge topology. A present label
    /// updates the event neuron's label; absent labels never touch labels.
    GrowEvent grow_or_update(const Vec& x, const std::optional<AffectLabel>& label);

    /// label <- label + gamma * (y - label); marks the neuron labeled.
    void label_update(std::size_t index, const AffectLabel& y);

    /// Label of the BMU, falling back to the nearest labeled neuron when the
    /// BMU is unlabeled. Throws if no neuron is labeled.
    AffectLabel predict(const Vec& x) const;

    struct Sample {
        Vec x;
        std::optional<AffectLabel> label;
    };

    /// Presents the samples in order, `epochs` times (params.epochs when < 0).
    void train_epochs(const std::vector<Sample>& samples, int epochs = -1);

    const std::vector<Neuron>& neurons() const { return neurons_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const GwrParams& params() const { return params_; }
    std::size_t step_count() const { return step_count_; }

    std::string to_json() const;
    static GwrMemory from_json(const std::string& text);

private:
    GwrMemory() = default;

    void refresh_edge(std::size_t a, std::size_t b);
    void age_edges_of(std::size_t b, std::size_t except_a, std::size_t except_b);

    GwrParams params_;
    std::vector<Neuron> neurons_;
    std::vector<Edge> edges_;
    std::size_t step_count_ = 0;
};

}  // namespace affmem::gwr
