#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

#include "affmem/affect.hpp"
#include "affmem/gwr.hpp"
#include "affmem/pk.hpp"

namespace affmem::pipeline {

/// Deterministic low-discrepancy labels covering [-1, 1]^2 (Halton bases 2
/// and 3, start index keyed by the seed).
std::vector<AffectLabel> seed_grid(std::size_t count, std::uint64_t seed);

struct SessionConfig {
    std::size_t seed_count = 200;       // generated samples per person
    std::size_t seed_frame_limit = 25;  // generation cutoff, in frames
    std::size_t seeds_per_frame = 8;    // replay-mode injection rate
    bool replay_seeding = false;        // default: seed all at once at open
    std::uint64_t grid_seed = 1;
    gwr::GwrParams gwr;
};

struct FrameResult {
    AffectLabel prediction;
    double activity = 0.0;       // BMU activity before the frame's update
    std::size_t neuron_count = 0;
};

/// One person's affective memory: a GWR over latent codes, seeded from
/// generator-edited variants of the person's first frame and adapted online
/// on unlabeled frames.
class PersonSession {
public:
    PersonSession(const pk::PkModel& model, const ExpressionSample& first_frame,
                  const SessionConfig& config);

    /// Predicts before adapting. While seeding is active (first
    /// seed_frame_limit frames) replay mode injects pending generated seeds
    /// ahead of the real-frame update.
    FrameResult process_frame(const ExpressionSample& frame);

    const gwr::GwrMemory& memory() const { return memory_; }
    const std::string& person_id() const { return person_id_; }
    std::size_t frames_seen() const { return frames_seen_; }
    bool seeding_active() const { return frames_seen_ < config_.seed_frame_limit; }
    std::size_t seeds_injected() const { return seeds_injected_; }

    /// Latent/label pairs of the seed set (for seeding-fidelity probes).
    const std::vector<gwr::GwrMemory::Sample>& seeds() const { return seeds_; }

private:
    const pk::PkModel* model_;
    SessionConfig config_;
    std::string person_id_;
    std::vector<gwr::GwrMemory::Sample> seeds_;
    std::deque<std::size_t> pending_seeds_;
    gwr::GwrMemory memory_;
    std::size_t frames_seen_ = 0;
    std::size_t seeds_injected_ = 0;
};

PersonSession open_session(const pk::PkModel& model, const ExpressionSample& first_frame,
                           const SessionConfig& config);

struct StreamSummary {
    double paffmem_ccc_arousal = 0.0;
    double paffmem_ccc_valence = 0.0;
    double pk_ccc_arousal = 0.0;
    double pk_ccc_valence = 0.0;
    std::size_t n_frames = 0;
};

struct StreamReport {
    std::string person_id;
    std::vector<double> prediction_arousal;
    std::vector<double> prediction_valence;
    std::vector<double> pk_arousal;  // PK-only baseline: d_em on the latent code
    std::vector<double> pk_valence;
    std::vector<double> activity;
    std::vector<std::size_t> neuron_count;
    std::vector<double> truth_arousal;
    std::vector<double> truth_valence;
    StreamSummary summary;

    std::string to_json() const;
};

/// Replays one labeled person stream through a fresh session and reports
/// per-frame predictions plus summary CCC for both the memory-backed
/// predictions and the PK-only baseline.
StreamReport run_stream(const pk::PkModel& model, const std::vector<ExpressionSample>& frames,
                        const SessionConfig& config);

/// Stream CSV: header person_id,frame_index,x_0..x_{d-1},arousal,valence;
/// the two truth columns are optional.
void write_stream_csv(std::ostream& out, const std::vector<ExpressionSample>& samples);
std::vector<ExpressionSample> read_stream_csv(std::istream& in);

}  // namespace affmem::pipeline
