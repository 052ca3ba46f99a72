// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: corpus generation, head chasing, allocation,
// compression and the bench experiments.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "headkv/bench.hpp"
#include "headkv/error.hpp"
#include "headkv/head_chaser.hpp"
#include "headkv/serialize.hpp"

namespace {

using namespace headkv;
using nlohmann::json;

struct CommonRun {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::optional<std::string> out_dir;

    bench::ExperimentConfig load() const {
        auto config = config_path.empty() ? bench::ExperimentConfig{} : bench::config_from_json(io::read_json_file(config_path));
        if (seed) {
            config.seed = *seed;
        }
        if (jobs) {
            config.jobs = *jobs;
        }
        if (out_dir) {
            config.out_dir = *out_dir;
        }
        config.validate();
        return config;
    }
};

void add_common(CLI::App* cmd, CommonRun& run) {
    cmd->add_option("--config", run.config_path, "Experiment config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", run.seed, "Override the config seed");
    cmd->add_option("--jobs", run.jobs, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out-dir", run.out_dir, "Override the config output directory");
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"headkv: visual-head scoring, per-head KV budgets and cache eviction"};
    app.require_subcommand(1);

    // corpus
    CommonRun corpus_run;
    std::string corpus_out;
    std::size_t corpus_samples = 0;
    auto* corpus = app.add_subcommand("corpus", "Generate a traced OCR corpus from the planted model of run 0");
    add_common(corpus, corpus_run);
    corpus->add_option("--out", corpus_out, "Output directory for sample_*.json")->required();
    corpus->add_option("--samples", corpus_samples, "Sample count (config corpus size when 0)");

    // prefill
    CommonRun prefill_run;
    std::string prefill_out;
    auto* prefill = app.add_subcommand("prefill", "Write the decode prefill state (keys, window queries) of run 0");
    add_common(prefill, prefill_run);
    prefill->add_option("--out", prefill_out, "Prefill JSON")->required();

    // chase
    std::string chase_corpus;
    std::string chase_out;
    std::size_t chase_group = 1;
    std::size_t chase_jobs = 1;
    auto* chase = app.add_subcommand("chase", "Score heads over a corpus directory");
    chase->add_option("--corpus", chase_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    chase->add_option("--out", chase_out, "Score file")->required();
    chase->add_option("--group", chase_group, "Query heads per kv head; >1 writes kv-head scores")
        ->check(CLI::PositiveNumber);
    chase->add_option("--jobs", chase_jobs, "Worker threads")->check(CLI::PositiveNumber);

    // allocate
    std::string alloc_scores;
    std::string alloc_out;
    std::string alloc_policy = "sparsemm";
    std::size_t alloc_budget = 0;
    std::size_t alloc_window = 32;
    double alloc_rho = 0.1;
    std::uint64_t alloc_seed = 0;
    auto* allocate = app.add_subcommand("allocate", "Turn a score file into a per-head budget plan");
    allocate->add_option("--scores", alloc_scores, "Score file (kv-head scores)")->required()->check(CLI::ExistingFile);
    allocate->add_option("--budget", alloc_budget, "Global budget B")->required();
    allocate->add_option("--rho", alloc_rho, "Uniform share of the post-window remainder");
    allocate->add_option("--window", alloc_window, "Local window w");
    allocate->add_option("--policy", alloc_policy, "sparsemm|uniform|pyramid|random|ada");
    allocate->add_option("--seed", alloc_seed, "Seed for the random policy");
    allocate->add_option("--out", alloc_out, "Plan file")->required();

    // compress
    std::string compress_trace;
    std::string compress_plan;
    std::string compress_out;
    std::string compress_csv;
    auto* compress = app.add_subcommand("compress", "Evict a prefill state under a plan");
    compress->add_option("--trace", compress_trace, "Prefill JSON")->required()->check(CLI::ExistingFile);
    compress->add_option("--plan", compress_plan, "Plan file")->required()->check(CLI::ExistingFile);
    compress->add_option("--out", compress_out, "Eviction report JSON")->required();
    compress->add_option("--csv", compress_csv, "Eviction report CSV");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Run an experiment table");
    bench_cmd->require_subcommand(1);
    CommonRun bench_run;
    auto* sweep = bench_cmd->add_subcommand("sweep", "Recall per (seed, budget, policy)");
    auto* rho = bench_cmd->add_subcommand("rho", "Recall across rho at a fixed budget");
    auto* mask = bench_cmd->add_subcommand("mask", "Top-scored vs random head masking");
    auto* cost = bench_cmd->add_subcommand("cost", "Closed-form peak slot and slot-touch accounting");
    for (auto* sub : {sweep, rho, mask, cost}) {
        add_common(sub, bench_run);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (corpus->parsed()) {
            const auto config = corpus_run.load();
            const auto seed = bench::run_seed(config, 0);
            const auto model = bench::make_model(config, seed);
            const auto samples = sim::generate_ocr_samples(
                model, corpus_samples == 0 ? config.corpus_size : corpus_samples, bench::corpus_seed(seed),
                config.corpus, config.jobs);
            io::write_corpus(corpus_out, samples);
            json planted = json::array();
            for (const auto& e : model.planted().entries) {
                planted.push_back({{"layer", e.head.layer}, {"head", e.head.head}, {"strength", e.strength}});
            }
            io::write_json_file(std::filesystem::path(corpus_out) / "planted.json", planted);
            std::cout << fmt::format("{} samples, digest {}\n", samples.size(),
                                     io::hex64(io::corpus_digest(samples)));
        } else if (prefill->parsed()) {
            const auto config = prefill_run.load();
            const auto seed = bench::run_seed(config, 0);
            const auto dseed = bench::decode_seed(seed);
            const auto scenario = sim::make_decode_scenario(config.prompt_len, config.out_len, dseed);
            const auto inputs = sim::realize_decode(bench::make_model(config, seed), scenario, config.window, dseed);
            io::write_json_file(prefill_out, io::prefill_to_json(inputs.prefill));
        } else if (chase->parsed()) {
            const auto samples = io::read_corpus(chase_corpus);
            auto result = chaser::chase_corpus(samples, chase_jobs);
            auto scores = chaser::aggregate_gqa_scores(result.scores, chase_group);
            io::write_json_file(chase_out, io::scores_to_json(scores));
            if (result.skipped_tokens > 0) {
                std::cerr << fmt::format("warning: {} output tokens had no bbox match\n", result.skipped_tokens);
            }
        } else if (allocate->parsed()) {
            const auto text = io::read_text_file(alloc_scores);
            const auto scores = io::scores_from_json(json::parse(text));
            const alloc::AllocationConfig config{alloc_budget, alloc_window, alloc_rho};
            const auto plan = alloc::allocate(alloc::parse_policy(alloc_policy), scores, config, alloc_seed);
            for (const auto& w : plan.warnings) {
                std::cerr << "warning: " << w << "\n";
            }
            io::write_json_file(alloc_out, io::plan_to_json(plan, io::hex64(io::digest(text))));
        } else if (compress->parsed()) {
            const auto prefill_state = io::prefill_from_json(io::read_json_file(compress_trace));
            const auto plan = io::plan_from_json(io::read_json_file(compress_plan)).plan;
            const auto result = cache::compress_prefill(prefill_state, plan, plan.window);
            io::write_json_file(compress_out, io::report_to_json(result.report));
            if (!compress_csv.empty()) {
                std::ostringstream csv;
                io::write_report_csv(csv, result.report);
                io::write_text_file(compress_csv, csv.str());
            }
        } else if (bench_cmd->parsed()) {
            const auto config = bench_run.load();
            const std::filesystem::path dir = config.out_dir;
            if (sweep->parsed()) {
                const auto rows = bench::run_budget_sweep(config);
                bench::write_table(dir, "sweep", bench::to_csv(rows), bench::to_json(rows));
            } else if (rho->parsed()) {
                const auto rows = bench::run_rho_sweep(config);
                bench::write_table(dir, "rho", bench::to_csv(rows), bench::to_json(rows));
            } else if (mask->parsed()) {
                const auto rows = bench::run_masking_study(config);
                bench::write_table(dir, "mask", bench::to_csv(rows), bench::to_json(rows));
            } else if (cost->parsed()) {
                const auto rows = bench::run_cost_model(config);
                bench::write_table(dir, "cost", bench::to_csv(rows), bench::to_json(rows));
            }
            io::write_json_file(dir / "config.json", bench::config_to_json(config));
        }
    } catch (const Error& e) {
        print_error(e.kind(), e.what());
        return EXIT_FAILURE;
    } catch (const nlohmann::json::exception& e) {
        print_error("invalid_input", e.what());
        return EXIT_FAILURE;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
