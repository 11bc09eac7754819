#include <fstream>
#include <set>
#include <sstream>

#include "affmem/errors.hpp"
#include "affmem/harness.hpp"
#include "json.hpp"

namespace affmem::harness {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw config_error("config: '" + path + "' must be an object");
    for (const auto& item : j.items()) {
        if (!allowed.contains(item.key()))
            throw config_error("config: unknown field '" + path + "." + item.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& value) {
    if (!j.contains(key)) return;
    try {
        value = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error("config: bad value for '" + path + "." + std::string(key) + "'");
    }
}

void read_pk(const json& j, pk::PkConfig& c) {
    check_keys(j, "pk",
               {"input_dim", "latent_dim", "encoder_hidden", "generator_hidden", "em_hidden",
                "prior_hidden", "real_hidden", "surrogate_layers", "init_std", "prior_lo",
                "prior_hi", "lambdas", "batch_size", "adam", "use_prior", "use_real", "use_em"});
    read_field(j, "pk", "input_dim", c.input_dim);
    read_field(j, "pk", "latent_dim", c.latent_dim);
    read_field(j, "pk", "encoder_hidden", c.encoder_hidden);
    read_field(j, "pk", "generator_hidden", c.generator_hidden);
    read_field(j, "pk", "em_hidden", c.em_hidden);
    read_field(j, "pk", "prior_hidden", c.prior_hidden);
    read_field(j, "pk", "real_hidden", c.real_hidden);
    read_field(j, "pk", "surrogate_layers", c.surrogate_layers);
    read_field(j, "pk", "init_std", c.init_std);
    read_field(j, "pk", "prior_lo", c.prior_lo);
    read_field(j, "pk", "prior_hi", c.prior_hi);
    if (j.contains("lambdas")) {
        const auto l = j.at("lambdas").get<std::vector<double>>();
        if (l.size() != 5) throw config_error("config: pk.lambdas must have 5 entries");
        std::copy(l.begin(), l.end(), c.lambdas.begin());
    }
    read_field(j, "pk", "batch_size", c.batch_size);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        check_keys(a, "pk.adam", {"alpha", "beta1", "beta2", "eps"});
        read_field(a, "pk.adam", "alpha", c.adam.alpha);
        read_field(a, "pk.adam", "beta1", c.adam.beta1);
        read_field(a, "pk.adam", "beta2", c.adam.beta2);
        read_field(a, "pk.adam", "eps", c.adam.eps);
    }
    read_field(j, "pk", "use_prior", c.flags.use_prior);
    read_field(j, "pk", "use_real", c.flags.use_real);
    read_field(j, "pk", "use_em", c.flags.use_em);
}

json pk_to_json(const pk::PkConfig& c) {
    json j;
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

void read_gwr(const json& j, gwr::GwrParams& g) {
    check_keys(j, "gwr",
               {"activity_threshold", "habituation_threshold", "tau", "kappa", "epsilon_b",
                "gamma", "epochs", "max_edge_age", "update_neighbors", "epsilon_n"});
    read_field(j, "gwr", "activity_threshold", g.activity_threshold);
    read_field(j, "gwr", "habituation_threshold", g.habituation_threshold);
    read_field(j, "gwr", "tau", g.tau);
    read_field(j, "gwr", "kappa", g.kappa);
    read_field(j, "gwr", "epsilon_b", g.epsilon_b);
    read_field(j, "gwr", "gamma", g.gamma);
    read_field(j, "gwr", "epochs", g.epochs);
    read_field(j, "gwr", "max_edge_age", g.max_edge_age);
    read_field(j, "gwr", "update_neighbors", g.update_neighbors);
    read_field(j, "gwr", "epsilon_n", g.epsilon_n);
}

json gwr_to_json(const gwr::GwrParams& g) {
    return json{{"activity_threshold", g.activity_threshold},
                {"habituation_threshold", g.habituation_threshold},
                {"tau", g.tau},
                {"kappa", g.kappa},
                {"epsilon_b", g.epsilon_b},
                {"gamma", g.gamma},
                {"epochs", g.epochs},
                {"max_edge_age", g.max_edge_age},
                {"update_neighbors", g.update_neighbors},
                {"epsilon_n", g.epsilon_n}};
}

}  // namespace

void ExperimentConfig::validate() const {
    if (workers == 0) throw config_error("config: workers must be >= 1");
    if (out_dir.empty()) throw config_error("config: out_dir must not be empty");
    pk.validate();
    gwr.validate();
    if (world.input_dim != pk.input_dim)
        throw config_error("config: world.input_dim must equal pk.input_dim");
    if (session.seed_count < 2) throw config_error("config: session.seed_count must be >= 2");
    if (session.seed_frame_limit == 0)
        throw config_error("config: session.seed_frame_limit must be >= 1");
    if (session.seeds_per_frame == 0)
        throw config_error("config: session.seeds_per_frame must be >= 1");
    if (train.log_every == 0) throw config_error("config: train.log_every must be >= 1");
    if (personalize.stream_length == 0)
        throw config_error("config: personalize.stream_length must be >= 1");
    if (gradcheck.seeds == 0) throw config_error("config: gradcheck.seeds must be >= 1");
    if (gradcheck.batch_size == 0) throw config_error("config: gradcheck.batch_size must be >= 1");
    if (gradcheck.tolerance <= 0.0) throw config_error("config: gradcheck.tolerance must be > 0");
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(j, "<root>",
               {"seed", "workers", "out_dir", "pk", "gwr", "world", "session", "train",
                "personalize", "eval", "gradcheck"});

    ExperimentConfig c;
    read_field(j, "<root>", "seed", c.seed);
    read_field(j, "<root>", "workers", c.workers);
    read_field(j, "<root>", "out_dir", c.out_dir);
    if (j.contains("pk")) read_pk(j.at("pk"), c.pk);
    if (j.contains("gwr")) read_gwr(j.at("gwr"), c.gwr);
    if (j.contains("world")) {
        const auto& w = j.at("world");
        check_keys(w, "world",
                   {"input_dim", "style_dim", "noise_scale", "walk_step", "style_scale",
                    "world_seed"});
        read_field(w, "world", "input_dim", c.world.input_dim);
        read_field(w, "world", "style_dim", c.world.style_dim);
        read_field(w, "world", "noise_scale", c.world.noise_scale);
        read_field(w, "world", "walk_step", c.world.walk_step);
        read_field(w, "world", "style_scale", c.world.style_scale);
        read_field(w, "world", "world_seed", c.world.world_seed);
    }
    if (j.contains("session")) {
        const auto& s = j.at("session");
        check_keys(s, "session",
                   {"seed_count", "seed_frame_limit", "seeds_per_frame", "replay_seeding"});
        read_field(s, "session", "seed_count", c.session.seed_count);
        read_field(s, "session", "seed_frame_limit", c.session.seed_frame_limit);
        read_field(s, "session", "seeds_per_frame", c.session.seeds_per_frame);
        read_field(s, "session", "replay_seeding", c.session.replay_seeding);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train",
                   {"steps", "train_samples", "eval_samples", "log_every"});
        read_field(t, "train", "steps", c.train.steps);
        read_field(t, "train", "train_samples", c.train.train_samples);
        read_field(t, "train", "eval_samples", c.train.eval_samples);
        read_field(t, "train", "log_every", c.train.log_every);
    }
    if (j.contains("personalize")) {
        const auto& p = j.at("personalize");
        check_keys(p, "personalize", {"persons", "stream_length", "checkpoint"});
        read_field(p, "personalize", "persons", c.personalize.persons);
        read_field(p, "personalize", "stream_length", c.personalize.stream_length);
        read_field(p, "personalize", "checkpoint", c.personalize.checkpoint);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, "eval", {"checkpoint", "stream"});
        read_field(e, "eval", "checkpoint", c.eval.checkpoint);
        read_field(e, "eval", "stream", c.eval.stream);
    }
    if (j.contains("gradcheck")) {
        const auto& g = j.at("gradcheck");
        check_keys(g, "gradcheck",
                   {"seeds", "batch_size", "tolerance", "inject_fault", "input_dim",
                    "latent_dim"});
        read_field(g, "gradcheck", "seeds", c.gradcheck.seeds);
        read_field(g, "gradcheck", "batch_size", c.gradcheck.batch_size);
        read_field(g, "gradcheck", "tolerance", c.gradcheck.tolerance);
        read_field(g, "gradcheck", "inject_fault", c.gradcheck.inject_fault);
        read_field(g, "gradcheck", "input_dim", c.gradcheck.input_dim);
        read_field(g, "gradcheck", "latent_dim", c.gradcheck.latent_dim);
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["out_dir"] = c.out_dir;
    j["pk"] = pk_to_json(c.pk);
    j["gwr"] = gwr_to_json(c.gwr);
    j["world"] = {{"input_dim", c.world.input_dim},     {"style_dim", c.world.style_dim},
                  {"noise_scale", c.world.noise_scale}, {"walk_step", c.world.walk_step},
                  {"style_scale", c.world.style_scale}, {"world_seed", c.world.world_seed}};
    j["session"] = {{"seed_count", c.session.seed_count},
                    {"seed_frame_limit", c.session.seed_frame_limit},
                    {"seeds_per_frame", c.session.seeds_per_frame},
                    {"replay_seeding", c.session.replay_seeding}};
    j["train"] = {{"steps", c.train.steps},
                  {"train_samples", c.train.train_samples},
                  {"eval_samples", c.train.eval_samples},
                  {"log_every", c.train.log_every}};
    j["personalize"] = {{"persons", c.personalize.persons},
                        {"stream_length", c.personalize.stream_length},
                        {"checkpoint", c.personalize.checkpoint}};
    j["eval"] = {{"checkpoint", c.eval.checkpoint}, {"stream", c.eval.stream}};
    j["gradcheck"] = {{"seeds", c.gradcheck.seeds},
                      {"batch_size", c.gradcheck.batch_size},
                      {"tolerance", c.gradcheck.tolerance},
                      {"inject_fault", c.gradcheck.inject_fault},
                      {"input_dim", c.gradcheck.input_dim},
                      {"latent_dim", c.gradcheck.latent_dim}};
    return j.dump();
}

}  // namespace affmem::harness
