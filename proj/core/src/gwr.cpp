#include "affmem/gwr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "affmem/errors.hpp"
#include "json.hpp"

namespace affmem::gwr {

void GwrParams::validate() const {
    if (!(activity_threshold > 0.0 && activity_threshold < 1.0))
        throw config_error("gwr: activity_threshold must be in (0, 1)");
    if (!(habituation_threshold > 0.0 && habituation_threshold < 1.0))
        throw config_error("gwr: habituation_threshold must be in (0, 1)");
    if (!(epsilon_b > 0.0 && epsilon_b <= 1.0))
        throw config_error("gwr: epsilon_b must be in (0, 1]");
    if (epochs <= 0) throw config_error("gwr: epochs must be positive");
    if (max_edge_age <= 0) throw config_error("gwr: max_edge_age must be positive");
}

double habituate(double h, const GwrParams& params) {
    const double dh = params.tau * params.kappa * (1.0 - h) - params.tau;
    return std::clamp(h + dh, 0.0, 1.0);
}

static double squared_distance(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

GwrMemory::GwrMemory(GwrParams params, const Vec& w0, const Vec& w1,
                     std::optional<AffectLabel> label0, std::optional<AffectLabel> label1) {
    params.validate();
    if (w0.size() != w1.size() || w0.empty())
        throw config_error("gwr: initial neurons must share a nonzero dimension");
    params_ = params;
    Neuron n0{w0, 1.0, label0.value_or(AffectLabel{}), label0.has_value()};
    Neuron n1{w1, 1.0, label1.value_or(AffectLabel{}), label1.has_value()};
    neurons_.push_back(std::move(n0));
    neurons_.push_back(std::move(n1));
}

BmuResult GwrMemory::bmu(const Vec& x) const {
    if (neurons_.size() < 2) throw config_error("gwr: bmu requires at least two neurons");
    if (x.size() != neurons_[0].w.size())
        throw config_error("gwr: input dimension does not match neuron dimension");

    std::size_t best = 0, second = 0;
    double best_d = std::numeric_limits<double>::infinity();
    double second_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < neurons_.size(); ++j) {
        const double d = squared_distance(x, neurons_[j].w);
        if (d < best_d) {
            second = best;
            second_d = best_d;
            best = j;
            best_d = d;
        } else if (d < second_d) {
            second = j;
            second_d = d;
        }
    }
    return {best, second, std::exp(-best_d)};
}

void GwrMemory::refresh_edge(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    for (auto& e : edges_) {
        if (e.a == a && e.b == b) {
            e.age = 0;
            return;
        }
    }
    edges_.push_back({a, b, 0});
}

void GwrMemory::age_edges_of(std::size_t n, std::size_t except_a, std::size_t except_b) {
    if (except_a > except_b) std::swap(except_a, except_b);
    for (auto& e : edges_) {
        if ((e.a == n || e.b == n) && !(e.a == except_a && e.b == except_b)) e.age += 1;
    }
    std::erase_if(edges_, [this](const Edge& e) { return e.age > params_.max_edge_age; });
}

GrowEvent GwrMemory::grow_or_update(const Vec& x, const std::optional<AffectLabel>& label) {
    const BmuResult r = bmu(x);
    Neuron& best = neurons_[r.best];
    step_count_ += 1;

    if (r.activity < params_.activity_threshold && best.h < params_.habituation_threshold) {
        Neuron fresh;
        fresh.w.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) fresh.w[i] = 0.5 * (best.w[i] + x[i]);
        fresh.h = 1.0;
        fresh.label = label.value_or(best.label);
        fresh.label_set = false;
        const std::size_t idx = neurons_.size();
        neurons_.push_back(std::move(fresh));
        refresh_edge(idx, r.best);
        refresh_edge(idx, r.second);
        if (label) label_update(idx, *label);
        return {GrowEvent::Kind::Inserted, idx};
    }

    // dw = eps * h * (x - w) * (1 - activity)
    const double factor = params_.epsilon_b * best.h * (1.0 - r.activity);
    for (std::size_t i = 0; i < x.size(); ++i) best.w[i] += factor * (x[i] - best.w[i]);
    if (params_.update_neighbors) {
        for (const auto& e : edges_) {
            if (e.a != r.best && e.b != r.best) continue;
            Neuron& nb = neurons_[e.a == r.best ? e.b : e.a];
            const double nf = params_.epsilon_n * nb.h * (1.0 - r.activity);
            for (std::size_t i = 0; i < x.size(); ++i) nb.w[i] += nf * (x[i] - nb.w[i]);
        }
    }
    refresh_edge(r.best, r.second);
    age_edges_of(r.best, r.best, r.second);
    best.h = habituate(best.h, params_);
    if (label) label_update(r.best, *label);
    return {GrowEvent::Kind::Updated, r.best};
}

void GwrMemory::label_update(std::size_t index, const AffectLabel& y) {
    Neuron& n = neurons_.at(index);
    n.label.arousal += params_.gamma * (y.arousal - n.label.arousal);
    n.label.valence += params_.gamma * (y.valence - n.label.valence);
    n.label_set = true;
}

AffectLabel GwrMemory::predict(const Vec& x) const {
    const BmuResult r = bmu(x);
    if (neurons_[r.best].label_set) return neurons_[r.best].label;

    std::size_t nearest = neurons_.size();
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < neurons_.size(); ++j) {
        if (!neurons_[j].label_set) continue;
        const double d = squared_distance(x, neurons_[j].w);
        if (d < nearest_d) {
            nearest = j;
            nearest_d = d;
        }
    }
    if (nearest == neurons_.size()) throw config_error("gwr: predict with no labeled neuron");
    return neurons_[nearest].label;
}

void GwrMemory::train_epochs(const std::vector<Sample>& samples, int epochs) {
    const int n_epochs = epochs < 0 ? params_.epochs : epochs;
    for (int e = 0; e < n_epochs; ++e)
        for (const auto& s : samples) grow_or_update(s.x, s.label);
}

std::string GwrMemory::to_json() const {
    nlohmann::json j;
    j["params"] = {{"activity_threshold", params_.activity_threshold},
                   {"habituation_threshold", params_.habituation_threshold},
                   {"tau", params_.tau},
                   {"kappa", params_.kappa},
                   {"epsilon_b", params_.epsilon_b},
                   {"gamma", params_.gamma},
                   {"epochs", params_.epochs},
                   {"max_edge_age", params_.max_edge_age},
                   {"update_neighbors", params_.update_neighbors},
                   {"epsilon_n", params_.epsilon_n}};
    j["step_count"] = step_count_;
    j["neurons"] = nlohmann::json::array();
    for (const auto& n : neurons_) {
        j["neurons"].push_back({{"w", n.w},
                                {"h", n.h},
                                {"arousal", n.label.arousal},
                                {"valence", n.label.valence},
                                {"label_set", n.label_set}});
    }
    j["edges"] = nlohmann::json::array();
    for (const auto& e : edges_) j["edges"].push_back({{"i", e.a}, {"j", e.b}, {"age", e.age}});
    return j.dump();
}

GwrMemory GwrMemory::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    GwrMemory m;
    const auto& p = j.at("params");
    m.params_.activity_threshold = p.at("activity_threshold").get<double>();
    m.params_.habituation_threshold = p.at("habituation_threshold").get<double>();
    m.params_.tau = p.at("tau").get<double>();
    m.params_.kappa = p.at("kappa").get<double>();
    m.params_.epsilon_b = p.at("epsilon_b").get<double>();
    m.params_.gamma = p.at("gamma").get<double>();
    m.params_.epochs = p.at("epochs").get<int>();
    m.params_.max_edge_age = p.at("max_edge_age").get<int>();
    m.params_.update_neighbors = p.at("update_neighbors").get<bool>();
    m.params_.epsilon_n = p.at("epsilon_n").get<double>();
    m.params_.validate();
    m.step_count_ = j.at("step_count").get<std::size_t>();
    for (const auto& nj : j.at("neurons")) {
        Neuron n;
        n.w = nj.at("w").get<Vec>();
        n.h = nj.at("h").get<double>();
        n.label.arousal = nj.at("arousal").get<double>();
        n.label.valence = nj.at("valence").get<double>();
        n.label_set = nj.at("label_set").get<bool>();
        m.neurons_.push_back(std::move(n));
    }
    if (m.neurons_.size() < 2) throw config_error("gwr snapshot: fewer than two neurons");
    for (const auto& ej : j.at("edges")) {
        Edge e{ej.at("i").get<std::size_t>(), ej.at("j").get<std::size_t>(),
               ej.at("age").get<int>()};
        if (e.a >= m.neurons_.size() || e.b >= m.neurons_.size())
            throw config_error("gwr snapshot: edge endpoint out of range");
        m.edges_.push_back(e);
    }
    return m;
}

}  // namespace affmem::gwr
