#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "affmem/gwr.hpp"
#include "affmem/pk.hpp"
#include "affmem/synthdata.hpp"

namespace affmem::harness {

struct TrainConfig {
    std::size_t steps = 20000;
    std::size_t train_samples = 4096;
    std::size_t eval_samples = 1024;
    std::size_t log_every = 100;
};

struct SessionOptions {
    std::size_t seed_count = 200;
    std::size_t seed_frame_limit = 25;
    std::size_t seeds_per_frame = 8;
    bool replay_seeding = false;
};

struct PersonalizeConfig {
    std::size_t persons = 10;
    std::size_t stream_length = 500;
    std::string checkpoint;  // empty: <out_dir>/pk_checkpoint.json
};

struct EvalConfig {
    std::string checkpoint;
    std::string stream;  // labeled stream CSV
};

struct GradcheckConfig {
    std::size_t seeds = 10;
    std::size_t batch_size = 4;
    double tolerance = 1e-4;
    bool inject_fault = false;  // test fixture: corrupt one analytic entry
    std::size_t input_dim = 6;
    std::size_t latent_dim = 8;
};

/// Every knob of every module, with defaults pinned to the published values
/// where they exist. One JSON file holds the whole experiment record.
struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::size_t workers = 2;
    std::string out_dir = "out";
    pk::PkConfig pk;
    gwr::GwrParams gwr;
    synth::SynthWorldConfig world;
    SessionOptions session;
    TrainConfig train;
    PersonalizeConfig personalize;
    EvalConfig eval;
    GradcheckConfig gradcheck;

    void validate() const;
};

/// Strict JSON parse: unknown keys and malformed values raise config_error
/// naming the offending path. Absent keys keep their defaults.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json_text(const ExperimentConfig& config);

const char* build_id();

/// Trains the configured PK variant on a synthetic training split; writes
/// <out_dir>/pk_checkpoint.json and <out_dir>/train_log.csv. Returns the
/// checkpoint path.
std::string cmd_train_pk(const ExperimentConfig& config);

struct AblationRow {
    std::string model_id;
    double ccc_arousal = 0.0;
    double ccc_valence = 0.0;
    std::size_t n_frames = 0;
};

/// All eight discriminator combinations from shared initial weights and
/// shared data; held-out CCC per variant. Writes <out_dir>/ablation.csv.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config);

/// The eight canonical variants in table order (base, singles, pairs, all).
std::vector<std::pair<std::string, pk::AblationFlags>> ablation_variants();

/// Trains one variant and evaluates held-out CCC through the variant's own
/// affect head. Exposed for experiment drivers that sweep seeds.
AblationRow run_ablation_variant(const ExperimentConfig& config, const std::string& model_id,
                                 const pk::AblationFlags& flags, std::uint64_t seed);

/// Personalization experiment over synthetic person streams: per-stream and
/// pooled CCC for the PK-only baseline and the memory-backed predictions.
/// Writes <out_dir>/personalization.csv plus one report JSON per stream.
std::vector<AblationRow> cmd_personalize(const ExperimentConfig& config);

/// Replays a labeled stream CSV through the pipeline; writes
/// <out_dir>/eval.csv with per-person and pooled rows.
std::vector<AblationRow> cmd_eval(const ExperimentConfig& config);

/// Gradient verification of every enabled loss component on small model
/// instances over `gradcheck.seeds` seeds. Prints one line per component.
/// Returns 0 when every component stays under tolerance, else 2.
int cmd_gradcheck(const ExperimentConfig& config, std::ostream& report);

}  // namespace affmem::harness
