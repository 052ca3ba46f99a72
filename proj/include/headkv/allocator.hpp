// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "headkv/head_scores.hpp"

namespace headkv::alloc {

struct AllocationConfig {
    /// Cache slots across all (layer, kv-head) pairs.
    std::size_t total_budget = 0;
    /// Local window kept by every head.
    std::size_t window = 32;
    /// Fraction of the post-window remainder split uniformly.
    double rho = 0.1;
};

enum class Policy { SparseMM, Uniform, Pyramid, Random, Adaptive };

std::string_view policy_name(Policy policy);
/// Parses "sparsemm", "uniform", "pyramid", "random" or "ada".
Policy parse_policy(std::string_view name);

/// Per-(layer, kv-head) integer budgets. Sum equals total_budget exactly.
struct BudgetPlan {
    std::size_t layers = 0;
    std::size_t kv_heads = 0;
    std::vector<std::size_t> budgets;  // row-major [layer][kv_head]

    std::size_t total_budget = 0;
    std::size_t window = 0;
    double rho = 0.0;
    /// B - N*w.
    double remain_after_window = 0.0;
    /// B - N*w - rho*(B - N*w).
    double remain_for_scores = 0.0;
    /// rho*(B - N*w)/N.
    double uniform_share = 0.0;

    std::string allocator;
    std::vector<std::string> warnings;

    std::size_t at(std::size_t layer, std::size_t kv_head) const { return budgets[layer * kv_heads + kv_head]; }
    std::size_t head_count() const noexcept { return budgets.size(); }
    std::size_t sum() const;
    /// Per-layer budget totals.
    std::vector<std::size_t> layer_totals() const;
};

/// Largest-remainder rounding of non-negative real quotas to integers summing
/// to `total`. Ties in the fractional part go to the lower index.
std::vector<std::size_t> apportion(std::span<const double> quotas, std::size_t total);

/// Three-part allocation: local window w, a uniform share r of the rho
/// fraction of the remainder, and a score-proportional share of the rest.
/// `kv_scores` holds one score per kv head (see chaser::aggregate_gqa_scores).
/// All-zero scores split the score share uniformly and record a warning.
BudgetPlan allocate_sparsemm(const HeadScoreMatrix& kv_scores, const AllocationConfig& config);

/// floor(B/N) per head, the remainder to the lowest-index heads.
BudgetPlan allocate_uniform(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads);

/// Layer totals decrease linearly from the first layer to the last. Every
/// head gets w; the remainder E = B - N*w goes to layer l with weight
/// (L - l) / (L(L+1)/2), then each layer splits its total equally.
BudgetPlan allocate_pyramid(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads);

/// allocate_sparsemm on i.i.d. uniform scores drawn from `seed`.
BudgetPlan allocate_random(const AllocationConfig& config, std::size_t layers, std::size_t kv_heads,
                           std::uint64_t seed);

/// Fixed B/L per layer; within a layer each head gets w plus a share of the
/// layer remainder proportional to its score. rho is not used.
BudgetPlan allocate_adaptive_layer(const HeadScoreMatrix& kv_scores, const AllocationConfig& config);

/// Dispatches on `policy`; `kv_scores` supplies the shape for score-free policies.
BudgetPlan allocate(Policy policy, const HeadScoreMatrix& kv_scores, const AllocationConfig& config,
                    std::uint64_t seed = 0);

}  // namespace headkv::alloc
