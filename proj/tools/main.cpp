#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "affmem/errors.hpp"
#include "affmem/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config JSON");
    cmd->add_option("--seed", flags.seed, "override config seed");
    cmd->add_option("--out-dir", flags.out_dir, "override config out_dir");
    cmd->add_option("--workers", flags.workers, "override config worker count");
}

affmem::harness::ExperimentConfig resolve(const CommonFlags& flags) {
    affmem::harness::ExperimentConfig config;
    if (!flags.config_path.empty()) config = affmem::harness::load_config(flags.config_path);
    if (flags.seed) config.seed = *flags.seed;
    if (flags.out_dir) config.out_dir = *flags.out_dir;
    if (flags.workers) config.workers = *flags.workers;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial-autoencoder affect model with per-person GWR memories"};
    app.require_subcommand(1);

    CommonFlags train_flags, ablate_flags, pers_flags, grad_flags, eval_flags;
    std::string pers_checkpoint, eval_checkpoint, eval_stream;

    CLI::App* train = app.add_subcommand("train-pk", "train the PK model on synthetic data");
    add_common(train, train_flags);

    CLI::App* ablate = app.add_subcommand("ablate", "train and score all discriminator variants");
    add_common(ablate, ablate_flags);

    CLI::App* pers =
        app.add_subcommand("personalize", "per-person memory experiment on synthetic streams");
    add_common(pers, pers_flags);
    pers->add_option("--checkpoint", pers_checkpoint, "trained PK checkpoint");

    CLI::App* grad = app.add_subcommand("gradcheck", "verify analytic gradients of every loss");
    add_common(grad, grad_flags);

    CLI::App* eval = app.add_subcommand("eval", "score a labeled stream CSV with a checkpoint");
    add_common(eval, eval_flags);
    eval->add_option("--checkpoint", eval_checkpoint, "trained PK checkpoint");
    eval->add_option("--stream", eval_stream, "stream CSV with truth columns");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const auto config = resolve(train_flags);
            std::cout << affmem::harness::cmd_train_pk(config) << "\n";
        } else if (ablate->parsed()) {
            const auto config = resolve(ablate_flags);
            for (const auto& row : affmem::harness::cmd_ablate(config))
                std::cout << row.model_id << " ccc_arousal=" << row.ccc_arousal
                          << " ccc_valence=" << row.ccc_valence << "\n";
        } else if (pers->parsed()) {
            auto config = resolve(pers_flags);
            if (!pers_checkpoint.empty()) config.personalize.checkpoint = pers_checkpoint;
            for (const auto& row : affmem::harness::cmd_personalize(config))
                std::cout << row.model_id << " ccc_arousal=" << row.ccc_arousal
                          << " ccc_valence=" << row.ccc_valence << "\n";
        } else if (grad->parsed()) {
            const auto config = resolve(grad_flags);
            return affmem::harness::cmd_gradcheck(config, std::cout);
        } else if (eval->parsed()) {
            auto config = resolve(eval_flags);
            if (!eval_checkpoint.empty()) config.eval.checkpoint = eval_checkpoint;
            if (!eval_stream.empty()) config.eval.stream = eval_stream;
            for (const auto& row : affmem::harness::cmd_eval(config))
                std::cout << row.model_id << " ccc_arousal=" << row.ccc_arousal
                          << " ccc_valence=" << row.ccc_valence << "\n";
        }
    } catch (const affmem::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const affmem::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
