#include "affmem/pipeline.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "affmem/errors.hpp"
#include "affmem/metrics.hpp"
#include "affmem/textio.hpp"
#include "json.hpp"

namespace affmem::pipeline {

namespace {

double halton(std::uint64_t index, std::uint64_t base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= static_cast<double>(base);
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

// Edited variants of the person's first expression across the label grid,
// encoded back into latent space: the transfer of general knowledge into
// this person's memory.
std::vector<gwr::GwrMemory::Sample> build_seeds(const pk::PkModel& model,
                                                const ExpressionSample& first_frame,
                                                const SessionConfig& config) {
    if (config.seed_count < 2)
        throw config_error("session: need at least two seed samples to initialize the memory");
    if (first_frame.x.size() != model.config.input_dim)
        throw config_error("session: first frame dimension does not match the model");

    const Vec z_first = pk::encode(model, first_frame.x);
    const std::vector<AffectLabel> grid = seed_grid(config.seed_count, config.grid_seed);
    std::vector<gwr::GwrMemory::Sample> seeds;
    seeds.reserve(config.seed_count);
    for (const AffectLabel& y : grid) {
        const Vec x_edit = pk::generate(model, z_first, y);
        seeds.push_back({pk::encode(model, x_edit), y});
    }
    return seeds;
}

}  // namespace

std::vector<AffectLabel> seed_grid(std::size_t count, std::uint64_t seed) {
    std::vector<AffectLabel> grid;
    grid.reserve(count);
    const std::uint64_t start = 1 + (seed % 4096);
    for (std::size_t k = 0; k < count; ++k) {
        const std::uint64_t i = start + k;
        grid.push_back({2.0 * halton(i, 2) - 1.0, 2.0 * halton(i, 3) - 1.0});
    }
    return grid;
}

PersonSession::PersonSession(const pk::PkModel& model, const ExpressionSample& first_frame,
                             const SessionConfig& config)
    : model_(&model),
      config_(config),
      person_id_(first_frame.person_id),
      seeds_(build_seeds(model, first_frame, config)),
      memory_(config.gwr, seeds_[0].x, seeds_[1].x, seeds_[0].label, seeds_[1].label) {
    if (config.replay_seeding) {
        for (std::size_t k = 0; k < seeds_.size(); ++k) pending_seeds_.push_back(k);
    } else {
        memory_.train_epochs(seeds_, config.gwr.epochs);
        seeds_injected_ = seeds_.size();
    }
}

FrameResult PersonSession::process_frame(const ExpressionSample& frame) {
    const Vec z = pk::encode(*model_, frame.x);

    FrameResult result;
    result.activity = memory_.bmu(z).activity;
    result.prediction = memory_.predict(z);

    if (config_.replay_seeding && seeding_active()) {
        for (std::size_t k = 0; k < config_.seeds_per_frame && !pending_seeds_.empty(); ++k) {
            const auto& seed = seeds_[pending_seeds_.front()];
            pending_seeds_.pop_front();
            memory_.grow_or_update(seed.x, seed.label);
            ++seeds_injected_;
        }
    }

    // Online adaptation: prototypes move, labels never change on real frames.
    memory_.grow_or_update(z, std::nullopt);
    frames_seen_ += 1;
    result.neuron_count = memory_.neurons().size();
    return result;
}

PersonSession open_session(const pk::PkModel& model, const ExpressionSample& first_frame,
                           const SessionConfig& config) {
    return PersonSession(model, first_frame, config);
}

StreamReport run_stream(const pk::PkModel& model, const std::vector<ExpressionSample>& frames,
                        const SessionConfig& config) {
    if (frames.empty()) throw config_error("run_stream: empty stream");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].y) throw config_error("run_stream: frame without truth label");
        if (i > 0 && frames[i].frame_index <= frames[i - 1].frame_index)
            throw config_error("run_stream: frame_index must be strictly increasing");
    }

    PersonSession session = open_session(model, frames.front(), config);
    StreamReport report;
    report.person_id = frames.front().person_id;

    for (const auto& frame : frames) {
        const FrameResult r = session.process_frame(frame);
        report.prediction_arousal.push_back(r.prediction.arousal);
        report.prediction_valence.push_back(r.prediction.valence);
        report.activity.push_back(r.activity);
        report.neuron_count.push_back(r.neuron_count);

        const Vec em = nn::forward(model.d_em, pk::encode(model, frame.x));
        report.pk_arousal.push_back(em[0]);
        report.pk_valence.push_back(em[1]);

        report.truth_arousal.push_back(frame.y->arousal);
        report.truth_valence.push_back(frame.y->valence);
    }

    report.summary.n_frames = frames.size();
    report.summary.paffmem_ccc_arousal =
        metrics::ccc({report.prediction_arousal, report.truth_arousal});
    report.summary.paffmem_ccc_valence =
        metrics::ccc({report.prediction_valence, report.truth_valence});
    report.summary.pk_ccc_arousal = metrics::ccc({report.pk_arousal, report.truth_arousal});
    report.summary.pk_ccc_valence = metrics::ccc({report.pk_valence, report.truth_valence});
    return report;
}

std::string StreamReport::to_json() const {
    nlohmann::json j;
    j["person_id"] = person_id;
    j["prediction_a"] = prediction_arousal;
    j["prediction_v"] = prediction_valence;
    j["pk_a"] = pk_arousal;
    j["pk_v"] = pk_valence;
    j["activity"] = activity;
    j["neuron_count"] = neuron_count;
    j["truth_a"] = truth_arousal;
    j["truth_v"] = truth_valence;
    j["summary"] = {{"paffmem_ccc_arousal", summary.paffmem_ccc_arousal},
                    {"paffmem_ccc_valence", summary.paffmem_ccc_valence},
                    {"pk_ccc_arousal", summary.pk_ccc_arousal},
                    {"pk_ccc_valence", summary.pk_ccc_valence},
                    {"n_frames", summary.n_frames}};
    return j.dump();
}

void write_stream_csv(std::ostream& out, const std::vector<ExpressionSample>& samples) {
    if (samples.empty()) throw config_error("write_stream_csv: no samples");
    const std::size_t d = samples.front().x.size();
    const bool with_truth = samples.front().y.has_value();

    out << "person_id,frame_index";
    for (std::size_t i = 0; i < d; ++i) out << ",x_" << i;
    if (with_truth) out << ",arousal,valence";
    out << "\n";
    for (const auto& s : samples) {
        if (s.x.size() != d) throw config_error("write_stream_csv: inconsistent dimensions");
        if (s.y.has_value() != with_truth)
            throw config_error("write_stream_csv: mixed labeled/unlabeled samples");
        out << s.person_id << ',' << s.frame_index;
        for (double v : s.x) out << ',' << format_double(v);
        if (with_truth)
            out << ',' << format_double(s.y->arousal) << ',' << format_double(s.y->valence);
        out << "\n";
    }
}

std::vector<ExpressionSample> read_stream_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw config_error("stream csv: missing header");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "person_id" || header[1] != "frame_index")
        throw config_error("stream csv: header must start with person_id,frame_index");

    bool with_truth = false;
    std::size_t d = header.size() - 2;
    if (header.size() >= 4 && header[header.size() - 2] == "arousal" &&
        header[header.size() - 1] == "valence") {
        with_truth = true;
        d -= 2;
    }
    for (std::size_t i = 0; i < d; ++i)
        if (header[2 + i] != "x_" + std::to_string(i))
            throw config_error("stream csv: unexpected feature column '" +
                               std::string(header[2 + i]) + "'");

    std::vector<ExpressionSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw config_error("stream csv: row with wrong field count");
        ExpressionSample s;
        s.person_id = std::string(fields[0]);
        s.frame_index = static_cast<std::size_t>(parse_double(fields[1]));
        s.x.resize(d);
        for (std::size_t i = 0; i < d; ++i) s.x[i] = parse_double(fields[2 + i]);
        if (with_truth) {
            AffectLabel y{parse_double(fields[2 + d]), parse_double(fields[3 + d])};
            y.validate();
            s.y = y;
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace affmem::pipeline
