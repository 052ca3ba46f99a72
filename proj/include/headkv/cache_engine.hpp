// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "headkv/allocator.hpp"
#include "headkv/tensor.hpp"

namespace headkv::cache {

using tensor::Matrix;

/// Prompt state handed to eviction: keys for every kv head and the queries of
/// the final `window` prompt positions for every query head.
struct PrefillState {
    std::size_t layers = 0;
    std::size_t query_heads = 0;
    std::size_t kv_heads = 0;
    std::size_t head_dim = 0;
    std::size_t window = 0;

    /// [layer * kv_heads + g]: prompt_length x head_dim.
    std::vector<Matrix> keys;
    /// [layer * query_heads + h]: min(window, prompt_length) x head_dim.
    std::vector<Matrix> window_queries;

    std::size_t group() const noexcept { return query_heads / kv_heads; }
    std::size_t prompt_length() const { return keys.empty() ? 0 : keys.front().rows(); }
    const Matrix& key(std::size_t layer, std::size_t g) const { return keys[layer * kv_heads + g]; }
    const Matrix& window_query(std::size_t layer, std::size_t h) const {
        return window_queries[layer * query_heads + h];
    }

    /// Shape and consistency checks; throws InvalidInput.
    void validate() const;
};

/// Retained prompt positions per kv head, indexed [layer * kv_heads + g].
using RetainedSets = std::vector<std::vector<std::size_t>>;

/// Per-kv-head slot store: absolute positions (ascending) with their keys.
/// Values are tracked by identity; a slot's value handle is its position.
class KvCache {
public:
    struct HeadSlots {
        std::vector<std::size_t> positions;
        std::vector<double> keys;  // row-major, head_dim per slot
    };

    KvCache() = default;
    KvCache(std::size_t layers, std::size_t kv_heads, std::size_t head_dim);

    std::size_t layers() const noexcept { return m_layers; }
    std::size_t kv_heads() const noexcept { return m_kv_heads; }
    std::size_t head_dim() const noexcept { return m_head_dim; }

    const HeadSlots& head(std::size_t layer, std::size_t g) const { return m_heads[layer * m_kv_heads + g]; }
    std::size_t slot_count(std::size_t layer, std::size_t g) const { return head(layer, g).positions.size(); }
    std::size_t total_slots() const;

    std::span<const double> key(std::size_t layer, std::size_t g, std::size_t slot) const;
    std::size_t value_handle(std::size_t layer, std::size_t g, std::size_t slot) const {
        return head(layer, g).positions[slot];
    }

    /// Appends a slot; `position` must exceed every position already held.
    void append(std::size_t layer, std::size_t g, std::size_t position, std::span<const double> key);

private:
    std::size_t m_layers = 0;
    std::size_t m_kv_heads = 0;
    std::size_t m_head_dim = 0;
    std::vector<HeadSlots> m_heads;
};

/// softmax(q_local k_all^T / sqrt(d) + M) where row i of q_local sits at
/// absolute position Lp - w + i. Result is w x Lp.
Matrix window_attention(const Matrix& q_local, const Matrix& k_all);

/// Column means over the window rows for the Lp - w keys before the window.
std::vector<double> average_window_scores(const Matrix& attn);

struct TopK {
    std::vector<std::size_t> positions;  // ascending
    bool clamped = false;                // k exceeded the score count
};

/// Positions of the k largest scores; ties go to the earlier position.
TopK select_topk(std::span<const double> scores, std::size_t k);

struct HeadEviction {
    std::size_t budget = 0;
    std::vector<std::size_t> kept;       // ascending
    std::vector<double> window_scores;   // length Lp - w (empty for short prompts)
    bool clamped = false;
};

struct EvictionReport {
    std::size_t layers = 0;
    std::size_t kv_heads = 0;
    std::size_t prompt_length = 0;
    std::size_t window = 0;
    std::vector<HeadEviction> heads;  // [layer * kv_heads + g]
    std::size_t total_kept = 0;

    const HeadEviction& head(std::size_t layer, std::size_t g) const { return heads[layer * kv_heads + g]; }
};

struct CompressedPrefill {
    KvCache cache;
    EvictionReport report;
};

/// Keeps the last `window` prompt positions of every head plus the top
/// (b - window) earlier positions ranked by the window-averaged attention,
/// with query heads of a GQA group summed first. Prompts no longer than the
/// window, or budgets covering the prompt, keep everything. A budget below
/// the window keeps the most recent `budget` positions.
CompressedPrefill compress_prefill(const PrefillState& prefill, const alloc::BudgetPlan& plan, std::size_t window);

/// Builds a cache holding exactly the given prompt positions. Throws
/// PolicyError on out-of-range or repeated positions or a wrong head count.
KvCache build_cache(const PrefillState& prefill, const RetainedSets& retained);

/// Cache holding the whole prompt.
KvCache full_cache(const PrefillState& prefill);

struct StepStats {
    std::size_t step = 0;
    /// Mean over query heads of the full-attention mass on retained slots.
    double recall = 0.0;
    std::vector<double> head_recall;  // [layer * query_heads + h]
    /// Slots held across all kv heads after the append.
    std::size_t retained_slots = 0;
    /// Key reads this step: one per retained slot per kv head.
    std::size_t slot_touches = 0;
};

/// Append-only decode over a compressed cache, with a full-cache shadow used
/// to measure how much attention mass the compressed cache captures.
class DecodeSession {
public:
    DecodeSession(KvCache compressed, KvCache shadow, std::size_t query_heads);

    /// queries: (layers*query_heads) x d, keys: (layers*kv_heads) x d for the
    /// new token. The token is appended to every head before attending.
    StepStats step(const Matrix& queries, const Matrix& keys);

    const KvCache& cache() const noexcept { return m_cache; }
    const KvCache& shadow() const noexcept { return m_shadow; }
    std::size_t steps_taken() const noexcept { return m_step; }

private:
    KvCache m_cache;
    KvCache m_shadow;
    std::size_t m_query_heads;
    std::size_t m_step = 0;
};

}  // namespace headkv::cache
