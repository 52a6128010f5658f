// SPDX-License-Identifier: Apache-2.0
// Command-line front end for the localization pipeline.
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mmloc/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> scenes;
    std::optional<int> workers;
    std::string stage = "generate";
    std::string predictions;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "key = value config file");
    sub->add_option("--seed", c.seed, "master seed");
    sub->add_option("--out", c.out, "artifact directory");
    sub->add_option("--scenes", c.scenes, "number of scenes");
    sub->add_option("--workers", c.workers, "worker threads");
}

mmloc::RunConfig resolve(const Common& c) {
    mmloc::RunConfig cfg;
    if (!c.config.empty()) cfg = mmloc::load_config(c.config, cfg);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (c.scenes) cfg.scenes = *c.scenes;
    if (c.workers) cfg.workers = *c.workers;
    mmloc::validate(cfg);
    return cfg;
}

void print_complexity(const mmloc::RunConfig& cfg) {
    mmloc::ComplexityConfig desk{cfg.channel.tx.n_x, cfg.channel.tx.n_y, cfg.channel.rx.n_x, cfg.channel.rx.n_y,
                                 cfg.channel.n_d,    cfg.recovery.k_res,  cfg.sounding.n_s,   cfg.sounding.q,
                                 cfg.recovery.n_est, cfg.recovery.n_iter};
    mmloc::ComplexityConfig full{16, 16, 8, 8, 64, 128, 4, 64, 5, 3};
    std::cout << "config        OMP            MOMP           two-stage      OMP/two-stage\n";
    for (auto [name, c] : {std::pair{"desk ", desk}, std::pair{"full ", full}}) {
        auto k = mmloc::complexity_probe(c);
        std::cout << name << "  " << std::scientific << std::setprecision(4) << k.omp << "  " << k.momp << "  "
                  << k.two_stage << "  " << k.omp / k.two_stage << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse mmWave channel estimation and single-anchor localization"};
    app.require_subcommand(1);
    Common c;

    auto* gen = app.add_subcommand("generate", "synthesize scenes and trace paths");
    auto* snd = app.add_subcommand("sound", "sound every scene through the hybrid front end");
    auto* est = app.add_subcommand("estimate", "two-stage sparse recovery of path parameters");
    auto* cls = app.add_subcommand("classify", "train the path classifier and label estimates");
    auto* loc = app.add_subcommand("locate", "qualify channels and solve for positions");
    auto* exr = app.add_subcommand("export-refine", "write the refinement training set");
    auto* inr = app.add_subcommand("ingest-refine", "read refinement predictions and re-evaluate");
    auto* evl = app.add_subcommand("eval", "run the pipeline from --stage and print the report");
    auto* cpx = app.add_subcommand("complexity", "print operation counts for the recovery algorithms");
    for (auto* s : {gen, snd, est, cls, loc, exr, inr, evl, cpx}) add_common(s, c);
    evl->add_option("--stage", c.stage, "first stage to run (generate, sound, estimate, classify, locate, eval)");
    inr->add_option("--predictions", c.predictions, "prediction JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    mmloc::RunConfig cfg;
    try {
        cfg = resolve(c);
    } catch (const mmloc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        namespace st = mmloc::stage;
        if (*gen) st::generate(cfg);
        if (*snd) st::sound(cfg);
        if (*est) st::estimate(cfg);
        if (*cls) {
            auto m = st::classify(cfg);
            std::cout << "classifier trained for " << m.epochs_run << " epochs, best validation loss "
                      << m.best_val_loss << '\n';
        }
        if (*loc) st::locate(cfg);
        if (*exr) st::export_refine(cfg);
        if (*inr) st::ingest_refine(cfg, c.predictions, &std::cout);
        if (*evl) st::run(cfg, c.stage, &std::cout);
        if (*cpx) print_complexity(cfg);
    } catch (const mmloc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << '\n';
        return kExitStage;
    }
    return 0;
}
