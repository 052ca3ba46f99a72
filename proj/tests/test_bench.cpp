// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "headkv/bench.hpp"
#include "headkv/error.hpp"

namespace headkv::bench {
namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.geometry = {2, 4, 2, 32};
    c.planted_fraction = 0.25;
    c.corpus_size = 12;
    c.corpus.grid_max = 5;
    c.corpus.tokens_per_sample = 3;
    c.prompt_len = 96;
    c.out_len = 6;
    c.window = 16;
    c.budgets = {24, 32, 48};
    c.rho_budget = 32;
    c.rhos = {0.0, 0.5, 1.0};
    c.mask_fractions = {0.25};
    c.seeds = 5;
    return c;
}

TEST(BudgetSweep, OneRowPerSeedBudgetPolicy) {
    const auto c = tiny_config();
    const auto rows = run_budget_sweep(c);
    ASSERT_EQ(rows.size(), 45u);
    // Nesting order: seed, then budget, then policy.
    EXPECT_EQ(rows[0].policy, "sparsemm");
    EXPECT_EQ(rows[1].policy, "uniform");
    EXPECT_EQ(rows[2].policy, "random");
    EXPECT_EQ(rows[3].budget, 32u);
    EXPECT_EQ(rows[9].seed_index, 1u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.total_budget, r.budget * 4);
        EXPECT_GT(r.recall, 0.0);
        EXPECT_LE(r.recall, 1.0 + 1e-12);
        EXPECT_LE(r.min_recall, r.recall);
        EXPECT_EQ(r.rho.has_value(), r.policy != "uniform");
    }
}

TEST(BudgetSweep, ByteIdenticalAcrossRunsAndJobCounts) {
    auto c = tiny_config();
    c.seeds = 2;
    const auto a = to_csv(run_budget_sweep(c));
    const auto b = to_csv(run_budget_sweep(c));
    c.jobs = 3;
    const auto d = to_csv(run_budget_sweep(c));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
    EXPECT_EQ(to_json(run_budget_sweep(c)).dump(), to_json(run_budget_sweep(c)).dump());
}

TEST(BudgetSweep, LargerBudgetNeverLowersRecallForUniform) {
    auto c = tiny_config();
    c.seeds = 2;
    const auto rows = run_budget_sweep(c);
    for (std::size_t s = 0; s < 2; ++s) {
        double previous = 0.0;
        for (const auto& r : rows) {
            if (r.seed_index == s && r.policy == "uniform") {
                EXPECT_GE(r.recall, previous - 1e-12);
                previous = r.recall;
            }
        }
    }
}

TEST(RhoSweep, RhoOneMatchesUniformWhenBudgetsDivideEvenly) {
    auto c = tiny_config();
    c.seeds = 2;
    const auto rows = run_rho_sweep(c);
    ASSERT_EQ(rows.size(), 2u * (c.rhos.size() + 1));
    for (std::size_t s = 0; s < 2; ++s) {
        const auto& rho_one = rows[s * 4 + 2];
        const auto& uniform = rows[s * 4 + 3];
        ASSERT_EQ(rho_one.rho, 1.0);
        ASSERT_EQ(uniform.policy, "uniform");
        EXPECT_DOUBLE_EQ(rho_one.recall, uniform.recall);
        EXPECT_EQ(rho_one.slot_touches, uniform.slot_touches);
    }
}

TEST(MaskingStudy, BaselineThenTopAndRandom) {
    auto c = tiny_config();
    c.seeds = 1;
    const auto rows = run_masking_study(c);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].selection, "none");
    EXPECT_EQ(rows[0].grounding_drop, 0.0);
    EXPECT_EQ(rows[1].selection, "top");
    EXPECT_EQ(rows[2].selection, "random");
    EXPECT_EQ(rows[1].masked, 2u);
    EXPECT_EQ(rows[2].masked, 2u);
    EXPECT_DOUBLE_EQ(rows[1].grounding_drop, rows[0].grounding - rows[1].grounding);
}

TEST(CostModel, MatchesStepByStepCount) {
    const std::size_t heads = 3;
    for (std::size_t lp : {10u, 100u, 1000u}) {
        for (std::size_t budget : {5u, 100u, 2000u}) {
            const std::size_t out = 7;
            std::size_t full = 0;
            std::size_t compressed = 0;
            const std::size_t kept = std::min(lp, budget);
            for (std::size_t t = 1; t <= out; ++t) {
                full += heads * (lp + t);
                compressed += heads * (kept + t);
            }
            const auto row = cost_row(heads, lp, out, budget);
            EXPECT_EQ(row.full_touches, full);
            EXPECT_EQ(row.compressed_touches, compressed);
            EXPECT_EQ(row.full_peak, heads * (lp + out));
            EXPECT_EQ(row.compressed_peak, heads * (kept + out));
            EXPECT_DOUBLE_EQ(row.cache_reduction, 1.0 - row.peak_ratio);
        }
    }
}

TEST(CostModel, LongContextRatio) {
    const auto row = cost_row(64, 32768, 100, 256);
    EXPECT_NEAR(row.peak_ratio, 356.0 / 32868.0, 1e-15);
    EXPECT_EQ(run_cost_model(ExperimentConfig{}).size(), 5u);
}

TEST(ConfigJson, RoundTripAndStrictKeys) {
    auto c = tiny_config();
    c.policies = {alloc::Policy::Pyramid, alloc::Policy::Adaptive};
    c.seed = 1234;
    const auto j = config_to_json(c);
    const auto back = config_from_json(j);
    EXPECT_EQ(config_to_json(back), j);

    auto unknown = j;
    unknown["budgetz"] = 3;
    EXPECT_THROW(config_from_json(unknown), InvalidInput);
    auto nested = j;
    nested["geometry"]["extra"] = 1;
    EXPECT_THROW(config_from_json(nested), InvalidInput);
    EXPECT_EQ(config_to_json(config_from_json(nlohmann::json::object())), config_to_json(ExperimentConfig{}));
}

TEST(ConfigValidate, RejectsBudgetBelowWindow) {
    auto c = tiny_config();
    c.budgets = {8};
    EXPECT_THROW(c.validate(), InvalidInput);
    c = tiny_config();
    c.prompt_len = 8;
    EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(SeedRuns, DistinctSeedsAndStableDerivation) {
    const auto c = tiny_config();
    EXPECT_NE(run_seed(c, 0), run_seed(c, 1));
    EXPECT_EQ(run_seed(c, 3), run_seed(c, 3));
    EXPECT_NE(corpus_seed(7), decode_seed(7));
}

}  // namespace
}  // namespace headkv::bench
