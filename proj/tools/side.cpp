// SPDX-License-Identifier: Apache-2.0
//
// side: desk-scale lab for studying training-data extraction from tiny
// diffusion models via time-dependent classifier guidance.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "side/config.hpp"
#include "side/harness.hpp"
#include "side/verify.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    int threads = 0;
};

side::ExperimentConfig make_config(const GlobalOpts& g) {
    side::ExperimentConfig cfg;
    if (!g.config_path.empty()) cfg = side::load_config(g.config_path);
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (g.threads > 0) cfg.threads = g.threads;
    return cfg;
}

void print_reports(const std::vector<side::MemorizationReport>& reports) {
    std::printf("%8s %6s %10s %10s %10s %8s\n", "lambda", "tier", "ams", "ums", "in_tier", "n_g");
    for (const auto& r : reports)
        for (const auto& t : r.tiers)
            std::printf("%8.3f %6s %10.5f %10.5f %10zu %8zu\n", r.lambda, t.name.c_str(), t.ams,
                        t.ums, t.in_tier, r.n_g);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"side: training-data extraction lab for tiny diffusion models"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config (json)");
    app.add_option("--out", g.out_dir, "output directory (overrides config)");
    app.add_option("--seed", g.seed, "override the subcommand's primary seed");
    app.add_option("--threads", g.threads, "worker threads (overrides config)");

    auto* cmd_synth = app.add_subcommand("synth", "synthesize the training dataset");
    auto* cmd_traind = app.add_subcommand("train-diffusion", "train the score network");
    auto* cmd_traint = app.add_subcommand("train-teacher", "assign labels and train the teacher");
    auto* cmd_distill =
        app.add_subcommand("distill", "generate the pseudo dataset and distill the student");
    auto* cmd_extract = app.add_subcommand("extract", "guided sampling at one or all lambdas");
    auto* cmd_eval = app.add_subcommand("evaluate", "full pipeline with per-lambda reports");
    auto* cmd_sweep = app.add_subcommand("sweep", "lambda sweep table and plot");
    auto* cmd_compare =
        app.add_subcommand("compare", "Random vs time-independent guidance vs SIDE");
    auto* cmd_verify = app.add_subcommand("verify-theory", "closed-form Gaussian identity checks");
    auto* cmd_report = app.add_subcommand("report", "print the summary and refresh plots");

    double ex_lambda = -1.0;
    int ex_steps = 0, ex_class = -2;
    std::int64_t ex_n = 0;
    cmd_extract->add_option("--lambda", ex_lambda, "single lambda (default: all configured)");
    cmd_extract->add_option("--steps", ex_steps, "sampler steps (overrides config)");
    cmd_extract->add_option("--n", ex_n, "samples to draw (overrides config n_g)");
    cmd_extract->add_option("--class", ex_class, "target class, -1 cycles all classes");

    std::vector<double> sweep_lambdas;
    cmd_sweep->add_option("--lambdas", sweep_lambdas, "lambda values to sweep")
        ->delimiter(',');

    std::uint64_t vt_samples = 1000000;
    std::size_t vt_pairs = 20, vt_ratio = 100;
    cmd_verify->add_option("--mc-samples", vt_samples, "Monte Carlo samples per identity");
    cmd_verify->add_option("--pairs", vt_pairs, "random SPD pairs");
    cmd_verify->add_option("--ratio-configs", vt_ratio, "kl ratio bound configurations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        side::ExperimentConfig cfg = make_config(g);

        if (cmd_synth->parsed()) {
            if (g.seed >= 0) cfg.dataset.seed = std::uint64_t(g.seed);
            side::Harness h(cfg, &std::cerr);
            const auto& ds = h.dataset();
            std::printf("dataset: %zu x %zu -> %s\n", ds.x.rows(), ds.x.cols(),
                        (h.out_dir() / "dataset.bin").string().c_str());
        } else if (cmd_traind->parsed()) {
            side::Harness h(cfg, &std::cerr);
            const auto& net = h.score_net();
            std::printf("score net: %zu trainable parameters -> %s\n", net.num_trainable(),
                        (h.out_dir() / "score_net.bin").string().c_str());
        } else if (cmd_traint->parsed()) {
            side::Harness h(cfg, &std::cerr);
            const auto& t = h.teacher();
            std::printf("teacher: %zu classes -> %s\n", t.cfg.output_dim,
                        (h.out_dir() / "teacher.bin").string().c_str());
        } else if (cmd_distill->parsed()) {
            side::Harness h(cfg, &std::cerr);
            const auto& s = h.student();
            std::printf("student: %zu trainable parameters -> %s\n", s.num_trainable(),
                        (h.out_dir() / "student.bin").string().c_str());
        } else if (cmd_extract->parsed()) {
            if (g.seed >= 0) cfg.extract.seed = std::uint64_t(g.seed);
            if (ex_steps > 0) cfg.extract.steps = ex_steps;
            if (ex_n > 0) cfg.extract.n_g = std::size_t(ex_n);
            if (ex_class >= -1) cfg.extract.target_class = ex_class;
            side::Harness h(cfg, &std::cerr);
            std::vector<double> lambdas =
                ex_lambda >= 0.0 ? std::vector<double>{ex_lambda} : cfg.extract.lambda_set;
            for (double l : lambdas) {
                h.extract(l);
                std::printf("samples lambda=%g -> %s\n", l,
                            (h.out_dir() /
                             ("samples_side_lambda_" + side::lambda_tag(l) + ".bin"))
                                .string()
                                .c_str());
            }
        } else if (cmd_eval->parsed() || cmd_report->parsed()) {
            if (g.seed >= 0) cfg.extract.seed = std::uint64_t(g.seed);
            side::Harness h(cfg, &std::cerr);
            h.run_side();
            std::vector<side::MemorizationReport> reports;
            for (double l : cfg.extract.lambda_set) reports.push_back(h.evaluate(l));
            print_reports(reports);
            std::printf("report: %s\nsummary: %s\n", (h.out_dir() / "report.csv").string().c_str(),
                        (h.out_dir() / "summary.csv").string().c_str());
        } else if (cmd_sweep->parsed()) {
            if (g.seed >= 0) cfg.extract.seed = std::uint64_t(g.seed);
            side::Harness h(cfg, &std::cerr);
            auto lambdas = sweep_lambdas.empty() ? cfg.extract.lambda_set : sweep_lambdas;
            auto res = h.sweep_lambda(lambdas);
            print_reports(res.reports);
            std::printf("argmax lambda: ams=%g ums=%g\nsweep: %s\n", res.argmax_ams_lambda,
                        res.argmax_ums_lambda, (h.out_dir() / "sweep.csv").string().c_str());
        } else if (cmd_compare->parsed()) {
            if (g.seed >= 0) cfg.extract.seed = std::uint64_t(g.seed);
            side::Harness h(cfg, &std::cerr);
            auto res = h.compare_variants();
            std::printf("%12s %6s %10s %10s\n", "variant", "tier", "ams", "ums");
            for (const auto& r : res.rows)
                std::printf("%12s %6s %10.5f %10.5f\n", r.variant.c_str(), r.tier.c_str(), r.ams,
                            r.ums);
            std::printf("compare: %s\n", (h.out_dir() / "compare.csv").string().c_str());
        } else if (cmd_verify->parsed()) {
            side::verify::TheoryOptions opt;
            if (g.seed >= 0) opt.seed = std::uint64_t(g.seed);
            opt.mc_samples = vt_samples;
            opt.n_pairs = vt_pairs;
            opt.n_ratio_configs = vt_ratio;
            opt.threads = cfg.threads;
            auto results = side::verify::run_theory_checks(opt);
            bool all_pass = true;
            std::printf("%-36s %12s %12s %6s  %s\n", "identity", "observed", "tolerance", "state",
                        "note");
            for (const auto& r : results) {
                std::printf("%-36s %12.3e %12.3e %6s  %s\n", r.name.c_str(), r.observed,
                            r.tolerance, r.pass ? "PASS" : "FAIL", r.note.c_str());
                all_pass = all_pass && r.pass;
            }
            if (!all_pass) return 3;
        }
        return 0;
    } catch (const side::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const side::StageError& e) {
        std::fprintf(stderr, "stage failure [%s]: %s\n", e.stage_name.c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
