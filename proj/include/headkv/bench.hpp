// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headkv/allocator.hpp"
#include "headkv/head_chaser.hpp"
#include "headkv/sim_model.hpp"

namespace headkv::bench {

struct ExperimentConfig {
    sim::ModelGeometry geometry{8, 8, 8, 128};
    double planted_fraction = 0.05;
    double planted_strength = 0.8;
    sim::BehaviorParams behavior;
    sim::CorpusParams corpus;
    std::size_t corpus_size = 200;

    std::size_t prompt_len = 384;
    std::size_t out_len = 24;
    std::size_t window = 32;
    double rho = 0.1;

    /// Per-head budgets; the global budget is this times the kv-head count.
    std::vector<std::size_t> budgets{48, 64, 128};
    std::vector<alloc::Policy> policies{alloc::Policy::SparseMM, alloc::Policy::Uniform, alloc::Policy::Random};
    std::vector<double> rhos{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t rho_budget = 64;
    std::vector<double> mask_fractions{0.02, 0.05, 0.10};

    std::vector<std::size_t> cost_lengths{2048, 4096, 8192, 16384, 32768};
    std::size_t cost_out_len = 100;
    std::size_t cost_budget = 256;

    std::uint64_t seed = 0;
    std::size_t seeds = 5;
    std::size_t jobs = 1;
    std::string out_dir = "results";

    /// Throws InvalidInput on any contract violation.
    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& value);

/// Seed of run `index`; each run derives its own sub-seeds from it.
std::uint64_t run_seed(const ExperimentConfig& config, std::size_t index);

/// Planted model of the run with the given seed.
sim::SyntheticModel make_model(const ExperimentConfig& config, std::uint64_t seed);
/// Corpus seed of the run with the given seed.
std::uint64_t corpus_seed(std::uint64_t seed);
/// Decode scenario and realization seed of the run with the given seed.
std::uint64_t decode_seed(std::uint64_t seed);

/// Everything shared by the policy runs of one seed.
struct SeedRun {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::optional<sim::SyntheticModel> model;
    std::uint64_t corpus_seed = 0;
    chaser::ChaseResult chase;
    HeadScoreMatrix kv_scores;
    chaser::Recovery recovery;
    sim::DecodeInputs decode;
};

/// Model, corpus, head scores and decode tensors for run `index`.
SeedRun prepare_seed(const ExperimentConfig& config, std::size_t index);

/// Global budget, the allocation seed and the decode record for one cell.
struct CellResult {
    alloc::BudgetPlan plan;
    sim::DecodeRecord record;
};
CellResult run_cell(const ExperimentConfig& config, const SeedRun& run, alloc::Policy policy,
                    std::size_t per_head_budget, double rho);

struct ResultRow {
    std::string policy;
    std::size_t budget = 0;  // per head
    std::size_t total_budget = 0;
    std::optional<double> rho;  // empty for policies that ignore it
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    double recall = 0.0;
    double min_recall = 0.0;
    std::size_t peak_slots = 0;
    std::size_t slot_touches = 0;
    double planted_precision = 0.0;
    double planted_recall = 0.0;
};

/// One row per (seed, budget, policy), in that nesting order.
std::vector<ResultRow> run_budget_sweep(const ExperimentConfig& config);
/// Per seed: one sparsemm row per rho, then a uniform reference row, all at rho_budget.
std::vector<ResultRow> run_rho_sweep(const ExperimentConfig& config);

struct MaskRow {
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    std::string selection;  // "none", "top" or "random"
    double fraction = 0.0;
    std::size_t masked = 0;
    /// Head-averaged attention mass on the answer region (see visual_grounding).
    double grounding = 0.0;
    double grounding_drop = 0.0;
    double planted_recall = 0.0;
    double planted_recall_drop = 0.0;
};

/// Per seed: an unmasked baseline, then top-scored and random masks for each
/// fraction. Every masked corpus reuses the baseline's corpus seed.
std::vector<MaskRow> run_masking_study(const ExperimentConfig& config);

struct CostRow {
    std::size_t prompt_len = 0;
    std::size_t out_len = 0;
    std::size_t budget = 0;  // per head
    std::size_t heads = 0;   // kv heads
    std::size_t full_peak = 0;
    std::size_t compressed_peak = 0;
    std::size_t full_touches = 0;
    std::size_t compressed_touches = 0;
    double peak_ratio = 0.0;   // compressed / full
    double touch_ratio = 0.0;  // full / compressed
    double cache_reduction = 0.0;
};

/// Closed-form slot accounting for one prompt length.
CostRow cost_row(std::size_t kv_heads, std::size_t prompt_len, std::size_t out_len, std::size_t budget);
std::vector<CostRow> run_cost_model(const ExperimentConfig& config);

std::string to_csv(const std::vector<ResultRow>& rows);
std::string to_csv(const std::vector<MaskRow>& rows);
std::string to_csv(const std::vector<CostRow>& rows);
nlohmann::json to_json(const std::vector<ResultRow>& rows);
nlohmann::json to_json(const std::vector<MaskRow>& rows);
nlohmann::json to_json(const std::vector<CostRow>& rows);

/// Writes <dir>/<name>.csv and <dir>/<name>.json.
void write_table(const std::filesystem::path& dir, const std::string& name, const std::string& csv,
                 const nlohmann::json& json);

}  // namespace headkv::bench
