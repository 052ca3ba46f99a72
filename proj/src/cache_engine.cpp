// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/cache_engine.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "headkv/error.hpp"

namespace headkv::cache {

void PrefillState::validate() const {
    HEADKV_CHECK(layers > 0 && query_heads > 0 && kv_heads > 0 && head_dim > 0, InvalidInput,
                 "prefill geometry must be positive");
    HEADKV_CHECK(query_heads % kv_heads == 0, InvalidInput, "query heads must be a multiple of kv heads");
    HEADKV_CHECK(keys.size() == layers * kv_heads, InvalidInput, "prefill needs one key matrix per kv head");
    HEADKV_CHECK(window_queries.size() == layers * query_heads, InvalidInput,
                 "prefill needs one window query matrix per query head");
    const std::size_t lp = prompt_length();
    const std::size_t rows = std::min(window, lp);
    for (const auto& k : keys) {
        HEADKV_CHECK(k.rows() == lp && k.cols() == head_dim, InvalidInput, "key matrix shape mismatch");
    }
    for (const auto& q : window_queries) {
        HEADKV_CHECK(q.rows() == rows && q.cols() == head_dim, InvalidInput, "window query shape mismatch");
    }
}

KvCache::KvCache(std::size_t layers, std::size_t kv_heads, std::size_t head_dim)
    : m_layers(layers), m_kv_heads(kv_heads), m_head_dim(head_dim), m_heads(layers * kv_heads) {}

std::size_t KvCache::total_slots() const {
    std::size_t n = 0;
    for (const auto& h : m_heads) {
        n += h.positions.size();
    }
    return n;
}

std::span<const double> KvCache::key(std::size_t layer, std::size_t g, std::size_t slot) const {
    const auto& h = head(layer, g);
    return {h.keys.data() + slot * m_head_dim, m_head_dim};
}

void KvCache::append(std::size_t layer, std::size_t g, std::size_t position, std::span<const double> key) {
    HEADKV_CHECK(key.size() == m_head_dim, InvalidInput, "key length != head_dim");
    auto& h = m_heads[layer * m_kv_heads + g];
    HEADKV_CHECK(h.positions.empty() || h.positions.back() < position, InvalidInput,
                 "cache positions must be strictly increasing");
    h.positions.push_back(position);
    h.keys.insert(h.keys.end(), key.begin(), key.end());
}

Matrix window_attention(const Matrix& q_local, const Matrix& k_all) {
    const std::size_t w = q_local.rows();
    const std::size_t lp = k_all.rows();
    HEADKV_CHECK(w <= lp, InvalidInput,
                 "observation window (" + std::to_string(w) + ") exceeds prompt length (" + std::to_string(lp) + ")");
    const auto scores = tensor::matmul_scaled(q_local, k_all, tensor::inv_sqrt_dim(q_local.cols()));
    return tensor::softmax_row_masked(scores, tensor::CausalMask{}, lp - w);
}

std::vector<double> average_window_scores(const Matrix& attn) {
    const std::size_t w = attn.rows();
    const std::size_t lp = attn.cols();
    HEADKV_CHECK(w <= lp, InvalidInput, "window attention has more rows than columns");
    std::vector<double> out(lp - w, 0.0);
    if (w == 0) {
        return out;
    }
    for (std::size_t i = 0; i < w; ++i) {
        const auto row = attn.row(i);
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += row[j];
        }
    }
    for (auto& v : out) {
        v /= static_cast<double>(w);
    }
    return out;
}

TopK select_topk(std::span<const double> scores, std::size_t k) {
    TopK out;
    if (k > scores.size()) {
        out.clamped = true;
        k = scores.size();
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
    out.positions.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.positions.begin(), out.positions.end());
    return out;
}

namespace {

HeadEviction evict_head(const PrefillState& prefill, std::size_t layer, std::size_t g, std::size_t budget,
                        std::size_t window) {
    HeadEviction out;
    out.budget = budget;
    const std::size_t lp = prefill.prompt_length();

    if (lp <= window) {
        out.kept.resize(lp);
        std::iota(out.kept.begin(), out.kept.end(), std::size_t{0});
        out.clamped = budget < lp;
        if (budget < lp) {
            out.kept.erase(out.kept.begin(), out.kept.end() - static_cast<std::ptrdiff_t>(budget));
        }
        return out;
    }

    // Group-summed window attention.
    const std::size_t group = prefill.group();
    Matrix summed(window, lp);
    for (std::size_t h = g * group; h < (g + 1) * group; ++h) {
        const auto attn = window_attention(prefill.window_query(layer, h), prefill.key(layer, g));
        for (std::size_t i = 0; i < window; ++i) {
            auto dst = summed.row(i);
            const auto src = attn.row(i);
            for (std::size_t j = 0; j < lp; ++j) {
                dst[j] += src[j];
            }
        }
    }
    out.window_scores = average_window_scores(summed);

    if (budget < window) {
        out.clamped = true;
        for (std::size_t p = lp - budget; p < lp; ++p) {
            out.kept.push_back(p);
        }
        return out;
    }

    auto top = select_topk(out.window_scores, budget - window);
    out.clamped = top.clamped;
    out.kept = std::move(top.positions);
    for (std::size_t p = lp - window; p < lp; ++p) {
        out.kept.push_back(p);
    }
    return out;
}

}  // namespace

CompressedPrefill compress_prefill(const PrefillState& prefill, const alloc::BudgetPlan& plan, std::size_t window) {
    prefill.validate();
    HEADKV_CHECK(plan.layers == prefill.layers && plan.kv_heads == prefill.kv_heads, InvalidInput,
                 "budget plan shape " + std::to_string(plan.layers) + "x" + std::to_string(plan.kv_heads) +
                     " does not match model " + std::to_string(prefill.layers) + "x" +
                     std::to_string(prefill.kv_heads));
    HEADKV_CHECK(prefill.prompt_length() <= window || prefill.window == window, InvalidInput,
                 "prefill window queries were captured for a different window size");

    CompressedPrefill out;
    out.report.layers = prefill.layers;
    out.report.kv_heads = prefill.kv_heads;
    out.report.prompt_length = prefill.prompt_length();
    out.report.window = window;
    out.report.heads.reserve(prefill.layers * prefill.kv_heads);
    RetainedSets retained;
    retained.reserve(prefill.layers * prefill.kv_heads);
    for (std::size_t l = 0; l < prefill.layers; ++l) {
        for (std::size_t g = 0; g < prefill.kv_heads; ++g) {
            auto head = evict_head(prefill, l, g, plan.at(l, g), window);
            out.report.total_kept += head.kept.size();
            retained.push_back(head.kept);
            out.report.heads.push_back(std::move(head));
        }
    }
    out.cache = build_cache(prefill, retained);
    return out;
}

KvCache build_cache(const PrefillState& prefill, const RetainedSets& retained) {
    HEADKV_CHECK(retained.size() == prefill.layers * prefill.kv_heads, PolicyError,
                 "retention policy returned " + std::to_string(retained.size()) + " head sets, expected " +
                     std::to_string(prefill.layers * prefill.kv_heads));
    const std::size_t lp = prefill.prompt_length();
    KvCache cache(prefill.layers, prefill.kv_heads, prefill.head_dim);
    for (std::size_t l = 0; l < prefill.layers; ++l) {
        for (std::size_t g = 0; g < prefill.kv_heads; ++g) {
            auto positions = retained[l * prefill.kv_heads + g];
            std::sort(positions.begin(), positions.end());
            for (std::size_t i = 0; i < positions.size(); ++i) {
                HEADKV_CHECK(positions[i] < lp, PolicyError,
                             "retained position " + std::to_string(positions[i]) + " outside prompt of length " +
                                 std::to_string(lp));
                HEADKV_CHECK(i == 0 || positions[i] != positions[i - 1], PolicyError,
                             "retained position " + std::to_string(positions[i]) + " listed twice");
                cache.append(l, g, positions[i], prefill.key(l, g).row(positions[i]));
            }
        }
    }
    return cache;
}

KvCache full_cache(const PrefillState& prefill) {
    RetainedSets all(prefill.layers * prefill.kv_heads, std::vector<std::size_t>(prefill.prompt_length()));
    for (auto& set : all) {
        std::iota(set.begin(), set.end(), std::size_t{0});
    }
    return build_cache(prefill, all);
}

DecodeSession::DecodeSession(KvCache compressed, KvCache shadow, std::size_t query_heads)
    : m_cache(std::move(compressed)), m_shadow(std::move(shadow)), m_query_heads(query_heads) {
    HEADKV_CHECK(m_cache.layers() == m_shadow.layers() && m_cache.kv_heads() == m_shadow.kv_heads() &&
                     m_cache.head_dim() == m_shadow.head_dim(),
                 InvalidInput, "compressed cache and shadow differ in shape");
    HEADKV_CHECK(m_shadow.kv_heads() > 0 && query_heads % m_shadow.kv_heads() == 0, InvalidInput,
                 "query heads must be a multiple of kv heads");
    for (std::size_t l = 0; l < m_shadow.layers(); ++l) {
        for (std::size_t g = 0; g < m_shadow.kv_heads(); ++g) {
            const auto& full = m_shadow.head(l, g).positions;
            for (std::size_t j = 0; j < full.size(); ++j) {
                HEADKV_CHECK(full[j] == j, InvalidInput, "shadow cache must hold every position from 0");
            }
            const auto& kept = m_cache.head(l, g).positions;
            HEADKV_CHECK(kept.empty() || kept.back() < full.size(), InvalidInput,
                         "compressed cache holds a position the shadow lacks");
        }
    }
}

StepStats DecodeSession::step(const Matrix& queries, const Matrix& keys) {
    const std::size_t layers = m_shadow.layers();
    const std::size_t kv_heads = m_shadow.kv_heads();
    const std::size_t d = m_shadow.head_dim();
    const std::size_t group = m_query_heads / kv_heads;
    HEADKV_CHECK(queries.rows() == layers * m_query_heads && queries.cols() == d, InvalidInput,
                 "decode queries must be (layers*query_heads) x head_dim");
    HEADKV_CHECK(keys.rows() == layers * kv_heads && keys.cols() == d, InvalidInput,
                 "decode keys must be (layers*kv_heads) x head_dim");

    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t g = 0; g < kv_heads; ++g) {
            const auto& shadow_head = m_shadow.head(l, g);
            const std::size_t position = shadow_head.positions.empty() ? 0 : shadow_head.positions.back() + 1;
            m_shadow.append(l, g, position, keys.row(l * kv_heads + g));
            m_cache.append(l, g, position, keys.row(l * kv_heads + g));
        }
    }

    StepStats stats;
    stats.step = m_step++;
    stats.head_recall.resize(layers * m_query_heads);
    const double scale = tensor::inv_sqrt_dim(d);
    double recall_sum = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < m_query_heads; ++h) {
            const std::size_t g = h / group;
            const auto& full = m_shadow.head(l, g);
            const std::size_t n = full.positions.size();
            std::vector<double> logits(n);
            const auto q = queries.row(l * m_query_heads + h);
            for (std::size_t j = 0; j < n; ++j) {
                logits[j] = scale * tensor::dot(q, m_shadow.key(l, g, j));
            }
            // The shadow holds every position 0..n-1, so slot index == position.
            const auto probs = tensor::softmax_row_masked(Matrix(1, n, std::move(logits)), tensor::CausalMask{}, n - 1);
            double captured = 0.0;
            for (auto pos : m_cache.head(l, g).positions) {
                captured += probs(0, pos);
            }
            stats.head_recall[l * m_query_heads + h] = captured;
            recall_sum += captured;
        }
    }
    stats.recall = recall_sum / static_cast<double>(layers * m_query_heads);
    stats.retained_slots = m_cache.total_slots();
    stats.slot_touches = stats.retained_slots;
    return stats;
}

}  // namespace headkv::cache
