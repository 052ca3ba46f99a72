// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "headkv/error.hpp"
#include "headkv/rng.hpp"

namespace headkv::alloc {

namespace {

// Absorbs floating error around integer boundaries (e.g. 2.9999999999).
constexpr double kRoundingSlack = 1e-9;

void check_config(const AllocationConfig& config, std::size_t heads) {
    HEADKV_CHECK(heads > 0, InvalidInput, "allocation needs at least one head");
    HEADKV_CHECK(config.rho >= 0.0 && config.rho <= 1.0, InvalidInput, "rho must lie in [0, 1]");
    HEADKV_CHECK(config.total_budget >= heads * config.window, InfeasibleBudget,
                 "budget " + std::to_string(config.total_budget) + " < N*w = " +
                     std::to_string(heads * config.window));
}

BudgetPlan make_plan(std::string name, const AllocationConfig& config, std::size_t layers, std::size_t kv_heads) {
    BudgetPlan plan;
    plan.allocator = std::move(name);
    plan.layers = layers;
    plan.kv_heads = kv_heads;
    plan.total_budget = config.total_budget;
    plan.window = config.window;
    plan.rho = config.rho;
    return plan;
}

std::vector<std::size_t> equal_split(std::size_t total, std::size_t parts) {
    std::vector<std::size_t> out(parts, total / parts);
    for (std::size_t i = 0; i < total % parts; ++i) {
        ++out[i];
    }
    return out;
}

}  // namespace

std::string_view policy_name(Policy policy) {
    switch (policy) {
    case Policy::SparseMM:
        return "sparsemm";
    case Policy::Uniform:
        return "uniform";
    case Policy::Pyramid:
        return "pyramid";
    case Policy::Random:
        return "random";
    case Policy::Adaptive:
        return "ada";
    }
    return "unknown";
}

Policy parse_policy(std::string_view name) {
    for (auto p : {Policy::SparseMM, Policy::Uniform, Policy::Pyramid, Policy::Random, Policy::Adaptive}) {
        if (policy_name(p) == name) {
            return p;
        }
    }
    throw InvalidInput("unknown allocation policy '" + std::string(name) + "'");
}

std::size_t BudgetPlan::sum() const { return std::accumulate(budgets.begin(), budgets.end(), std::size_t{0}); }

std::vector<std::size_t> BudgetPlan::layer_totals() const {
    std::vector<std::size_t> out(layers, 0);
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < kv_heads; ++h) {
            out[l] += at(l, h);
        }
    }
    return out;
}

std::vector<std::size_t> apportion(std::span<const double> quotas, std::size_t total) {
    const std::size_t n = quotas.size();
    HEADKV_CHECK(n > 0, InvalidInput, "apportion needs at least one quota");
    std::vector<std::size_t> out(n);
    std::vector<long long> frac_key(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        HEADKV_CHECK(std::isfinite(quotas[i]) && quotas[i] >= 0.0, InvalidInput, "quotas must be non-negative");
        const double base = std::floor(quotas[i] + kRoundingSlack);
        out[i] = static_cast<std::size_t>(base);
        // Quantized so that numerically equal remainders compare equal.
        frac_key[i] = std::llround((quotas[i] - base) / kRoundingSlack);
        assigned += out[i];
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac_key[a] > frac_key[b]; });

    if (assigned < total) {
        std::size_t remaining = total - assigned;
        for (std::size_t k = 0; remaining > 0; k = (k + 1) % n, --remaining) {
            ++out[order[k]];
        }
    } else {
        // Only reachable through rounding slack, so only entries that the
        // slack lifted above their quota give a slot back.
        std::size_t excess = assigned - total;
        for (std::size_t k = n; excess > 0 && k > 0;) {
            --k;
            if (static_cast<double>(out[order[k]]) > quotas[order[k]]) {
                --out[order[k]];
                --excess;
            }
        }
        HEADKV_CHECK(excess == 0, InvalidInput, "quotas sum above the apportioned total");
    }
    return out;
}

BudgetPlan allocate_sparsemm(const HeadScoreMatrix& kv_scores, const AllocationConfig& config) {
    const std::size_t n = kv_scores.size();
    check_config(config, n);
    auto plan = make_plan("sparsemm", config, kv_scores.layers(), kv_scores.heads());

    const double heads = static_cast<double>(n);
    const double remain1 = static_cast<double>(config.total_budget - n * config.window);
    const double r = config.rho * remain1 / heads;
    const double remain2 = remain1 - config.rho * remain1;
    plan.remain_after_window = remain1;
    plan.uniform_share = r;
    plan.remain_for_scores = remain2;

    const double score_total = kv_scores.total();
    std::vector<double> quotas(n);
    if (score_total <= 0.0) {
        plan.warnings.emplace_back("all head scores are zero; score-preferred share split uniformly");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double share = score_total > 0.0 ? kv_scores.values()[i] / score_total : 1.0 / heads;
        quotas[i] = static_cast<double>(config.window) + r + remain2 * share;
    }
    plan.budgets = apportion(quotas, config.total_budget);
    return plan;
}

BudgetPlan allocate_uniform(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads) {
    const std::size_t n = layers * kv_heads;
    HEADKV_CHECK(n > 0, InvalidInput, "allocation needs at least one head");
    HEADKV_CHECK(config.total_budget >= n, InfeasibleBudget,
                 "budget " + std::to_string(config.total_budget) + " < head count " + std::to_string(n));
    auto plan = make_plan("uniform", config, layers, kv_heads);
    plan.budgets = equal_split(config.total_budget, n);
    return plan;
}

BudgetPlan allocate_pyramid(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads) {
    HEADKV_CHECK(layers >= 1, InvalidInput, "pyramid allocation needs at least one layer");
    const std::size_t n = layers * kv_heads;
    check_config(config, n);
    auto plan = make_plan("pyramid", config, layers, kv_heads);

    const double extra = static_cast<double>(config.total_budget - n * config.window);
    const double weight_sum = static_cast<double>(layers * (layers + 1)) / 2.0;
    std::vector<double> layer_quota(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        layer_quota[l] = static_cast<double>(kv_heads * config.window) +
                         extra * static_cast<double>(layers - l) / weight_sum;
    }
    const auto layer_total = apportion(layer_quota, config.total_budget);
    plan.budgets.reserve(n);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto split = equal_split(layer_total[l], kv_heads);
        plan.budgets.insert(plan.budgets.end(), split.begin(), split.end());
    }
    plan.remain_after_window = extra;
    return plan;
}

BudgetPlan allocate_random(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads,
                           std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x72616e64}));
    std::vector<double> scores(layers * kv_heads);
    for (auto& s : scores) {
        s = rng.uniform();
    }
    auto plan = allocate_sparsemm(HeadScoreMatrix(layers, kv_heads, std::move(scores)), config);
    plan.allocator = "random";
    return plan;
}

BudgetPlan allocate_adaptive_layer(const HeadScoreMatrix& kv_scores, const AllocationConfig& config) {
    const std::size_t layers = kv_scores.layers();
    const std::size_t heads = kv_scores.heads();
    const std::size_t n = layers * heads;
    check_config(config, n);
    auto plan = make_plan("ada", config, layers, heads);

    const double per_layer = static_cast<double>(config.total_budget) / static_cast<double>(layers);
    const double layer_extra = per_layer - static_cast<double>(heads * config.window);
    std::vector<double> quotas(n);
    for (std::size_t l = 0; l < layers; ++l) {
        double layer_score = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            layer_score += kv_scores.at(l, h);
        }
        if (layer_score <= 0.0) {
            plan.warnings.emplace_back("layer " + std::to_string(l) + " has zero score; split uniformly");
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const double share = layer_score > 0.0 ? kv_scores.at(l, h) / layer_score : 1.0 / static_cast<double>(heads);
            quotas[l * heads + h] = static_cast<double>(config.window) + layer_extra * share;
        }
    }
    plan.budgets = apportion(quotas, config.total_budget);
    plan.remain_after_window = static_cast<double>(config.total_budget - n * config.window);
    return plan;
}

BudgetPlan allocate(Policy policy, const HeadScoreMatrix& kv_scores, const AllocationConfig& config,
                    std::uint64_t seed) {
    switch (policy) {
    case Policy::SparseMM:
        return allocate_sparsemm(kv_scores, config);
    case Policy::Uniform:
        return allocate_uniform(config, kv_scores.layers(), kv_scores.heads());
    case Policy::Pyramid:
        return allocate_pyramid(config, kv_scores.layers(), kv_scores.heads());
    case Policy::Random:
        return allocate_random(config, kv_scores.layers(), kv_scores.heads(), seed);
    case Policy::Adaptive:
        return allocate_adaptive_layer(kv_scores, config);
    }
    throw InvalidInput("unhandled allocation policy");
}

}  // namespace headkv::alloc
