// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "headkv/allocator.hpp"
#include "headkv/error.hpp"
#include "oracles.hpp"

namespace headkv::alloc {
namespace {

using Budgets = std::vector<std::size_t>;

HeadScoreMatrix row_scores(std::vector<double> s) {
    const auto n = s.size();
    return HeadScoreMatrix(1, n, std::move(s));
}

TEST(Apportion, ConservesAndBreaksTiesByIndex) {
    const std::vector<double> q{2.5, 2.5, 2.5, 2.5};
    EXPECT_EQ(apportion(q, 10), Budgets({3, 3, 2, 2}));
    const std::vector<double> r{0.2, 0.7, 1.1};
    EXPECT_EQ(apportion(r, 2), Budgets({0, 1, 1}));
    const std::vector<double> near{31.9999999999999, 32.0000000000001};
    EXPECT_EQ(apportion(near, 64), Budgets({32, 32}));
}

TEST(SparseMM, SymmetricScoresGiveEqualShares) {
    // remain1 = 128, r = 3.2, remain2 = 115.2, score share 28.8 each.
    const auto plan = allocate_sparsemm(row_scores({1, 1, 1, 1}), {256, 32, 0.1});
    EXPECT_EQ(plan.budgets, Budgets({64, 64, 64, 64}));
    EXPECT_DOUBLE_EQ(plan.remain_after_window, 128.0);
    EXPECT_NEAR(plan.uniform_share, 3.2, 1e-12);
    EXPECT_NEAR(plan.remain_for_scores, 115.2, 1e-12);
}

TEST(SparseMM, RhoOneIsUniform) {
    const auto plan = allocate_sparsemm(row_scores({5, 0, 1, 9}), {256, 32, 1.0});
    EXPECT_EQ(plan.budgets, Budgets({64, 64, 64, 64}));
}

TEST(SparseMM, RhoZeroGivesRemainderByScore) {
    const auto plan = allocate_sparsemm(row_scores({1, 0, 0, 0}), {256, 32, 0.0});
    EXPECT_EQ(plan.budgets, Budgets({160, 32, 32, 32}));
}

TEST(SparseMM, MatchesHandEvaluatedQuotas) {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + gen() % 12;
        const std::size_t w = gen() % 40;
        const std::size_t budget = n * w + gen() % 2000;
        const double rho = u(gen);
        std::vector<double> s(n);
        for (auto& x : s) {
            x = u(gen);
        }
        const auto plan = allocate_sparsemm(row_scores(s), {budget, w, rho});
        const auto quotas = oracle::sparsemm_quotas(s, static_cast<double>(budget), static_cast<double>(w), rho);
        for (std::size_t i = 0; i < n; ++i) {
            // Largest-remainder rounding moves each head by less than one slot.
            EXPECT_LT(std::abs(static_cast<double>(plan.budgets[i]) - quotas[i]), 1.0);
            EXPECT_GE(plan.budgets[i], w + static_cast<std::size_t>(std::floor(plan.uniform_share)));
        }
        EXPECT_EQ(plan.sum(), budget);
    }
}

TEST(SparseMM, ZeroScoresFallBackToUniformWithWarning) {
    const auto plan = allocate_sparsemm(row_scores({0, 0, 0, 0}), {258, 32, 0.1});
    EXPECT_EQ(plan.budgets, Budgets({65, 65, 64, 64}));
    ASSERT_EQ(plan.warnings.size(), 1u);
}

TEST(SparseMM, InfeasibleAndBadRhoRejected) {
    EXPECT_THROW(allocate_sparsemm(row_scores({1, 1}), {63, 32, 0.1}), InfeasibleBudget);
    EXPECT_THROW(allocate_sparsemm(row_scores({1, 1}), {64, 32, -0.1}), InvalidInput);
    EXPECT_THROW(allocate_sparsemm(row_scores({1, 1}), {64, 32, 1.5}), InvalidInput);
}

TEST(SparseMM, MonotoneInScore) {
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + gen() % 10;
        std::vector<double> s(n);
        for (auto& x : s) {
            x = u(gen);
        }
        const double rho = 0.9 * u(gen);
        const AllocationConfig config{n * 32 + gen() % 3000, 32, rho};
        const auto plan = allocate_sparsemm(row_scores(s), config);
        const double unit = 1.0 / (plan.remain_for_scores / std::accumulate(s.begin(), s.end(), 0.0));
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                if (s[a] > s[b]) {
                    EXPECT_GE(plan.budgets[a], plan.budgets[b]);
                    if (s[a] - s[b] > unit) {
                        EXPECT_GT(plan.budgets[a], plan.budgets[b]);
                    }
                }
            }
        }
    }
}

TEST(SparseMM, ScaleInvariant) {
    const std::vector<double> s{0.3, 0.1, 0.05, 0.55, 0.2};
    std::vector<double> scaled;
    for (double x : s) {
        scaled.push_back(x * 8.0);  // a power of two keeps the ratios exact
    }
    const AllocationConfig config{777, 32, 0.1};
    EXPECT_EQ(allocate_sparsemm(row_scores(s), config).budgets, allocate_sparsemm(row_scores(scaled), config).budgets);
}

TEST(Uniform, Examples) {
    EXPECT_EQ(allocate_uniform({256, 32, 0.1}, 1, 4).budgets, Budgets({64, 64, 64, 64}));
    EXPECT_EQ(allocate_uniform({10, 0, 0.1}, 1, 4).budgets, Budgets({3, 3, 2, 2}));
    EXPECT_THROW(allocate_uniform({3, 0, 0.1}, 1, 4), InfeasibleBudget);
}

TEST(Uniform, AgreesWithEqualScoreSparseMMUpToRounding) {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t layers = 1 + gen() % 4;
        const std::size_t heads = 1 + gen() % 8;
        const std::size_t w = gen() % 33;
        const AllocationConfig config{layers * heads * (w + 1) + gen() % 5000, w, (gen() % 11) / 10.0};
        const auto uniform = allocate_uniform(config, layers, heads);
        const auto equal = allocate_sparsemm(HeadScoreMatrix(layers, heads, std::vector<double>(layers * heads, 1.0)),
                                             config);
        EXPECT_EQ(uniform.budgets, equal.budgets);
    }
}

TEST(Pyramid, SingleLayerIsUniform) {
    const AllocationConfig config{1000, 32, 0.1};
    EXPECT_EQ(allocate_pyramid(config, 1, 7).budgets, allocate_uniform(config, 1, 7).budgets);
}

TEST(Pyramid, TwoLayerSchedule) {
    // E = 300 - 4*32 = 172; layer weights 2/3 and 1/3: quotas 64 + 114.67 and
    // 64 + 57.33, rounded to 179 and 121, then halved within each layer.
    const auto plan = allocate_pyramid({300, 32, 0.1}, 2, 2);
    EXPECT_EQ(plan.budgets, Budgets({90, 89, 61, 60}));
}

TEST(Pyramid, LayerTotalsNonIncreasing) {
    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t layers = 1 + gen() % 10;
        const std::size_t heads = 1 + gen() % 6;
        const AllocationConfig config{layers * heads * 16 + gen() % 4000, 16, 0.1};
        const auto totals = allocate_pyramid(config, layers, heads).layer_totals();
        for (std::size_t l = 1; l < layers; ++l) {
            EXPECT_LE(totals[l], totals[l - 1]);
        }
    }
}

TEST(Random, DeterministicAndConserving) {
    const AllocationConfig config{4096, 32, 0.1};
    const auto a = allocate_random(config, 8, 8, 42);
    EXPECT_EQ(a.budgets, allocate_random(config, 8, 8, 42).budgets);
    EXPECT_NE(a.budgets, allocate_random(config, 8, 8, 43).budgets);
    EXPECT_EQ(a.sum(), 4096u);
    EXPECT_EQ(a.allocator, "random");
}

TEST(Random, MeanOverSeedsNearUniformShare) {
    // A wide window keeps the score-driven share small relative to B/N, so
    // 1000 seeds pin the mean well inside the 2% band.
    const AllocationConfig config{2048, 96, 0.1};
    std::vector<double> mean(16, 0.0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto plan = allocate_random(config, 2, 8, seed);
        for (std::size_t i = 0; i < 16; ++i) {
            mean[i] += static_cast<double>(plan.budgets[i]) / 1000.0;
        }
    }
    for (double m : mean) {
        EXPECT_NEAR(m, 128.0, 0.02 * 128.0);
    }
}

TEST(Adaptive, EqualScoresMatchUniform) {
    const AllocationConfig config{1000, 20, 0.1};
    const HeadScoreMatrix s(3, 4, std::vector<double>(12, 0.7));
    EXPECT_EQ(allocate_adaptive_layer(s, config).budgets, allocate_uniform(config, 3, 4).budgets);
}

TEST(Adaptive, DominantHeadTakesLayerRemainder) {
    // B/L = 200 per layer, w = 32: remainder 200 - 96 = 104 goes to the
    // single scored head of each layer.
    const HeadScoreMatrix s(2, 3, {0, 1, 0, 0, 0, 5});
    const auto plan = allocate_adaptive_layer(s, {400, 32, 0.1});
    EXPECT_EQ(plan.budgets, Budgets({32, 136, 32, 32, 32, 136}));
    EXPECT_EQ(plan.layer_totals(), Budgets({200, 200}));
}

TEST(Adaptive, ZeroLayerSplitsUniformlyWithWarning) {
    const HeadScoreMatrix s(2, 2, {0, 0, 1, 3});
    const auto plan = allocate_adaptive_layer(s, {200, 10, 0.1});
    EXPECT_EQ(plan.budgets, Budgets({50, 50, 30, 70}));
    EXPECT_EQ(plan.warnings.size(), 1u);
}

TEST(Dispatch, PolicyNamesRoundTrip) {
    for (auto p : {Policy::SparseMM, Policy::Uniform, Policy::Pyramid, Policy::Random, Policy::Adaptive}) {
        EXPECT_EQ(parse_policy(policy_name(p)), p);
    }
    EXPECT_THROW(parse_policy("snapkv"), InvalidInput);
}

TEST(AllAllocators, ConserveBudgetAndWindowFloor) {
    std::mt19937_64 gen(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t layers = 1 + gen() % 6;
        const std::size_t heads = 1 + gen() % 6;
        const std::size_t w = gen() % 48;
        std::vector<double> s(layers * heads);
        for (auto& x : s) {
            x = gen() % 4 == 0 ? 0.0 : u(gen);
        }
        const AllocationConfig config{layers * heads * (w + 1) + gen() % 3000, w, u(gen)};
        for (auto p : {Policy::SparseMM, Policy::Uniform, Policy::Pyramid, Policy::Random, Policy::Adaptive}) {
            const auto plan = allocate(p, HeadScoreMatrix(layers, heads, s), config, gen());
            EXPECT_EQ(plan.sum(), config.total_budget) << policy_name(p);
            for (auto b : plan.budgets) {
                EXPECT_GE(b, w) << policy_name(p);
            }
        }
    }
}

}  // namespace
}  // namespace headkv::alloc
