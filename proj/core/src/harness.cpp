#include "affmem/harness.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "affmem/errors.hpp"
#include "affmem/metrics.hpp"
#include "affmem/pipeline.hpp"
#include "affmem/textio.hpp"

namespace affmem::harness {

namespace fs = std::filesystem;

namespace {

// Stream ids for per-purpose seed derivation.
enum : std::uint64_t {
    kModelInit = 1,
    kTrainData = 2,
    kEvalData = 3,
    kTrainLoop = 4,
    kBatchOrder = 5,
    kSeedGrid = 7,
    kPersonBase = 1000,
};

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t n_threads = std::min(workers, n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

void write_report_header(std::ostream& out, const ExperimentConfig& config) {
    out << "# build: " << build_id() << "\n";
    out << "# config: " << config_to_json_text(config) << "\n";
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open output file: " + path.string());
    return out;
}

std::vector<ExpressionSample> sample_batch(const std::vector<ExpressionSample>& data,
                                           std::size_t batch_size, Rng& rng) {
    std::vector<ExpressionSample> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i)
        batch.push_back(data[rng.uniform_index(data.size())]);
    return batch;
}

struct TrainedVariant {
    pk::PkModel model;
    std::vector<pk::LossBreakdown> log;  // one entry per logged step
    std::vector<std::size_t> log_steps;
};

/// Shared training loop. All randomness derives from `seed`, so two variants
/// trained with the same seed see identical batch schedules and prior draws.
TrainedVariant train_variant(const ExperimentConfig& config, const pk::PkModel& initial,
                             const std::vector<ExpressionSample>& train_data,
                             std::uint64_t seed) {
    TrainedVariant out{initial, {}, {}};
    pk::AdamSet adams = pk::make_adam_set(out.model);
    Rng prior_rng(mix_seed(seed, kTrainLoop));
    Rng batch_rng(mix_seed(seed, kBatchOrder));
    for (std::size_t step = 0; step < config.train.steps; ++step) {
        const auto batch = sample_batch(train_data, config.pk.batch_size, batch_rng);
        const pk::LossBreakdown bd = pk::train_step(out.model, batch, adams, prior_rng);
        if (step % config.train.log_every == 0 || step + 1 == config.train.steps) {
            out.log.push_back(bd);
            out.log_steps.push_back(step);
        }
    }
    return out;
}

metrics::CccReport evaluate_affect(const pk::PkModel& model, const nn::Network& readout,
                                   const std::vector<ExpressionSample>& eval_data) {
    metrics::SeriesPair arousal, valence;
    for (const auto& s : eval_data) {
        const Vec pred = nn::forward(readout, pk::encode(model, s.x));
        arousal.predictions.push_back(pred[0]);
        valence.predictions.push_back(pred[1]);
        arousal.truths.push_back(s.y->arousal);
        valence.truths.push_back(s.y->valence);
    }
    return metrics::ccc_pairwise_report(arousal, valence);
}

pipeline::SessionConfig session_config(const ExperimentConfig& config) {
    pipeline::SessionConfig sc;
    sc.seed_count = config.session.seed_count;
    sc.seed_frame_limit = config.session.seed_frame_limit;
    sc.seeds_per_frame = config.session.seeds_per_frame;
    sc.replay_seeding = config.session.replay_seeding;
    sc.grid_seed = mix_seed(config.seed, kSeedGrid);
    sc.gwr = config.gwr;
    return sc;
}

double median(std::vector<double> values) {
    if (values.empty()) throw config_error("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_rows_csv(std::ostream& out, const ExperimentConfig& config,
                    const std::vector<AblationRow>& rows) {
    write_report_header(out, config);
    out << "model_id,ccc_arousal,ccc_valence,n_frames\n";
    for (const auto& r : rows)
        out << r.model_id << ',' << format_double(r.ccc_arousal) << ','
            << format_double(r.ccc_valence) << ',' << r.n_frames << "\n";
}

/// Per-stream, pooled and median rows for a set of stream reports, for both
/// prediction routes.
std::vector<AblationRow> stream_rows(const std::vector<pipeline::StreamReport>& reports) {
    std::vector<AblationRow> rows;
    metrics::SeriesPair pooled_pk_a, pooled_pk_v, pooled_mem_a, pooled_mem_v;
    std::vector<double> pk_a, pk_v, mem_a, mem_v;
    std::size_t total_frames = 0;
    for (const auto& r : reports) {
        rows.push_back({"pk_only/" + r.person_id, r.summary.pk_ccc_arousal,
                        r.summary.pk_ccc_valence, r.summary.n_frames});
        rows.push_back({"paffmem/" + r.person_id, r.summary.paffmem_ccc_arousal,
                        r.summary.paffmem_ccc_valence, r.summary.n_frames});
        pk_a.push_back(r.summary.pk_ccc_arousal);
        pk_v.push_back(r.summary.pk_ccc_valence);
        mem_a.push_back(r.summary.paffmem_ccc_arousal);
        mem_v.push_back(r.summary.paffmem_ccc_valence);
        total_frames += r.summary.n_frames;
        auto extend = [](metrics::SeriesPair& dst, const std::vector<double>& pred,
                         const std::vector<double>& truth) {
            dst.predictions.insert(dst.predictions.end(), pred.begin(), pred.end());
            dst.truths.insert(dst.truths.end(), truth.begin(), truth.end());
        };
        extend(pooled_pk_a, r.pk_arousal, r.truth_arousal);
        extend(pooled_pk_v, r.pk_valence, r.truth_valence);
        extend(pooled_mem_a, r.prediction_arousal, r.truth_arousal);
        extend(pooled_mem_v, r.prediction_valence, r.truth_valence);
    }
    if (!reports.empty()) {
        rows.push_back({"pk_only/pooled", metrics::ccc(pooled_pk_a), metrics::ccc(pooled_pk_v),
                        total_frames});
        rows.push_back({"paffmem/pooled", metrics::ccc(pooled_mem_a), metrics::ccc(pooled_mem_v),
                        total_frames});
        rows.push_back({"pk_only/median", median(pk_a), median(pk_v), total_frames});
        rows.push_back({"paffmem/median", median(mem_a), median(mem_v), total_frames});
    }
    return rows;
}

}  // namespace

const char* build_id() {
#ifdef AFFMEM_BUILD_ID
    return AFFMEM_BUILD_ID;
#else
    return "unknown";
#endif
}

std::string cmd_train_pk(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    const synth::SynthWorld world(config.world);
    const auto train_data =
        world.sample_dataset(config.train.train_samples, mix_seed(config.seed, kTrainData));
    pk::PkModel model = pk::with_ablation(
        pk::make_model(config.pk, mix_seed(config.seed, kModelInit)), config.pk.flags);

    const TrainedVariant trained = train_variant(config, model, train_data, config.seed);

    auto log = open_output(fs::path(config.out_dir) / "train_log.csv");
    write_report_header(log, config);
    log << "step,l_rec,l_em,l_iden,l_prior_d,l_prior_g,l_img_d,l_img_g,total\n";
    for (std::size_t i = 0; i < trained.log.size(); ++i) {
        const auto& b = trained.log[i];
        log << trained.log_steps[i] << ',' << format_double(b.l_rec) << ','
            << format_double(b.l_em) << ',' << format_double(b.l_iden) << ','
            << format_double(b.l_prior_d) << ',' << format_double(b.l_prior_g) << ','
            << format_double(b.l_img_d) << ',' << format_double(b.l_img_g) << ','
            << format_double(b.total) << "\n";
    }

    const std::string path = (fs::path(config.out_dir) / "pk_checkpoint.json").string();
    pk::save_checkpoint(trained.model, path);
    return path;
}

std::vector<std::pair<std::string, pk::AblationFlags>> ablation_variants() {
    return {{"PK_base", {false, false, false}},
            {"PK_base+D_prior", {true, false, false}},
            {"PK_base+D_real", {false, true, false}},
            {"PK_base+D_em", {false, false, true}},
            {"PK_base+D_prior+D_real", {true, true, false}},
            {"PK_base+D_prior+D_em", {true, false, true}},
            {"PK_base+D_real+D_em", {false, true, true}},
            {"PK_all", {true, true, true}}};
}

AblationRow run_ablation_variant(const ExperimentConfig& config, const std::string& model_id,
                                 const pk::AblationFlags& flags, std::uint64_t seed) {
    const synth::SynthWorld world(config.world);
    const auto train_data =
        world.sample_dataset(config.train.train_samples, mix_seed(seed, kTrainData));
    const auto eval_data =
        world.sample_dataset(config.train.eval_samples, mix_seed(seed, kEvalData));

    pk::PkConfig full = config.pk;
    full.flags = {true, true, true};
    const pk::PkModel initial = pk::make_model(full, mix_seed(seed, kModelInit));
    const TrainedVariant trained =
        train_variant(config, pk::with_ablation(initial, flags), train_data, seed);

    // Every variant is scored through its own affect head. Variants that
    // trained without d_em keep its initial weights, so their score reflects
    // what the variant's objective actually taught about affect.
    const metrics::CccReport r = evaluate_affect(trained.model, trained.model.d_em, eval_data);
    return {model_id, r.ccc_arousal, r.ccc_valence, eval_data.size()};
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    const auto variants = ablation_variants();
    std::vector<AblationRow> rows(variants.size());
    parallel_for(variants.size(), config.workers, [&](std::size_t i) {
        rows[i] = run_ablation_variant(config, variants[i].first, variants[i].second, config.seed);
    });

    auto out = open_output(fs::path(config.out_dir) / "ablation.csv");
    write_rows_csv(out, config, rows);
    return rows;
}

std::vector<AblationRow> cmd_personalize(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    if (config.personalize.persons == 0) {
        std::cerr << "personalize: zero persons configured, emitting empty table\n";
        auto out = open_output(fs::path(config.out_dir) / "personalization.csv");
        write_rows_csv(out, config, {});
        return {};
    }

    const std::string checkpoint =
        config.personalize.checkpoint.empty()
            ? (fs::path(config.out_dir) / "pk_checkpoint.json").string()
            : config.personalize.checkpoint;
    const pk::PkModel model = pk::load_checkpoint(checkpoint);

    const synth::SynthWorld world(config.world);
    const pipeline::SessionConfig sc = session_config(config);

    std::vector<pipeline::StreamReport> reports(config.personalize.persons);
    parallel_for(config.personalize.persons, config.workers, [&](std::size_t i) {
        const std::uint64_t person_seed = mix_seed(config.seed, kPersonBase + i);
        const auto frames =
            world.sample_person_stream(person_seed, config.personalize.stream_length);
        reports[i] = pipeline::run_stream(model, frames, sc);
    });

    for (const auto& r : reports) {
        auto out = open_output(fs::path(config.out_dir) / ("stream_" + r.person_id + ".json"));
        out << r.to_json();
    }

    const std::vector<AblationRow> rows = stream_rows(reports);
    auto out = open_output(fs::path(config.out_dir) / "personalization.csv");
    write_rows_csv(out, config, rows);
    return rows;
}

std::vector<AblationRow> cmd_eval(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);
    if (config.eval.stream.empty()) throw config_error("eval: no stream CSV configured");
    if (config.eval.checkpoint.empty()) throw config_error("eval: no checkpoint configured");

    const pk::PkModel model = pk::load_checkpoint(config.eval.checkpoint);
    std::ifstream in(config.eval.stream, std::ios::binary);
    if (!in) throw config_error("eval: cannot open stream: " + config.eval.stream);
    const auto samples = pipeline::read_stream_csv(in);
    if (samples.empty()) throw config_error("eval: stream is empty");

    // Group rows into per-person streams, preserving first-appearance order.
    std::vector<std::string> order;
    std::vector<std::vector<ExpressionSample>> groups;
    for (const auto& s : samples) {
        auto it = std::find(order.begin(), order.end(), s.person_id);
        if (it == order.end()) {
            order.push_back(s.person_id);
            groups.emplace_back();
            it = order.end() - 1;
        }
        groups[static_cast<std::size_t>(it - order.begin())].push_back(s);
    }

    const pipeline::SessionConfig sc = session_config(config);
    std::vector<pipeline::StreamReport> reports(groups.size());
    parallel_for(groups.size(), config.workers, [&](std::size_t i) {
        reports[i] = pipeline::run_stream(model, groups[i], sc);
    });

    const std::vector<AblationRow> rows = stream_rows(reports);
    auto out = open_output(fs::path(config.out_dir) / "eval.csv");
    write_rows_csv(out, config, rows);
    return rows;
}

int cmd_gradcheck(const ExperimentConfig& config, std::ostream& report) {
    config.validate();

    // Reduced-size instances: the gradient code is dimension-generic, so
    // verifying small models exercises exactly the same paths the full
    // model trains with, across many seeds in well under the time budget.
    pk::PkConfig small;
    small.input_dim = config.gradcheck.input_dim;
    small.latent_dim = config.gradcheck.latent_dim;
    small.encoder_hidden = {10};
    small.generator_hidden = {10};
    small.em_hidden = {8};
    small.prior_hidden = {8, 6};
    small.real_hidden = {8, 6};
    small.surrogate_layers = {8, 6, 4};
    small.lambdas = config.pk.lambdas;
    small.adam = config.pk.adam;
    small.flags = {true, true, true};
    // O(1) pre-activations keep the central-difference probes away from
    // relu kinks; the chain rule under test does not depend on the scale.
    small.init_std = 0.5;

    synth::SynthWorldConfig wc;
    wc.input_dim = small.input_dim;
    wc.style_dim = 2;
    wc.noise_scale = config.world.noise_scale;
    wc.world_seed = config.world.world_seed;
    const synth::SynthWorld world(wc);

    struct Agg {
        double max_err = 0.0;
        std::size_t params = 0;
    };
    std::vector<std::string> component_order;
    std::vector<Agg> aggregates;
    const double fault = config.gradcheck.inject_fault ? 1e-2 : 0.0;

    for (std::size_t s = 1; s <= config.gradcheck.seeds; ++s) {
        pk::PkModel model = pk::make_model(small, mix_seed(config.seed, 100 + s));
        const auto batch =
            world.sample_dataset(config.gradcheck.batch_size, mix_seed(config.seed, 200 + s));
        Rng rng(mix_seed(config.seed, 300 + s));
        const auto checks = pk::gradient_check(model, batch, rng, fault);
        for (const auto& c : checks) {
            auto it = std::find(component_order.begin(), component_order.end(), c.component);
            std::size_t idx;
            if (it == component_order.end()) {
                component_order.push_back(c.component);
                aggregates.push_back({});
                idx = component_order.size() - 1;
            } else {
                idx = static_cast<std::size_t>(it - component_order.begin());
            }
            aggregates[idx].max_err = std::max(aggregates[idx].max_err, c.max_rel_error);
            aggregates[idx].params += c.parameters;
        }
    }

    bool all_ok = true;
    for (std::size_t i = 0; i < component_order.size(); ++i) {
        const bool ok = aggregates[i].max_err < config.gradcheck.tolerance;
        all_ok = all_ok && ok;
        report << (ok ? "[ok]   " : "[FAIL] ") << "loss component " << component_order[i]
               << ": max_rel_error=" << format_double(aggregates[i].max_err)
               << " parameters=" << aggregates[i].params << " seeds=" << config.gradcheck.seeds
               << "\n";
    }
    return all_ok ? 0 : 2;
}

}  // namespace affmem::harness
