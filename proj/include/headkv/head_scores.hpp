// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

namespace headkv {

/// (layer, head) coordinate. `head` is a query head or a kv head depending on
/// which matrix it indexes.
struct HeadId {
    std::size_t layer = 0;
    std::size_t head = 0;
    auto operator<=>(const HeadId&) const = default;
};

/// L x H non-negative per-head scores, row-major by layer.
class HeadScoreMatrix {
public:
    HeadScoreMatrix() = default;
    HeadScoreMatrix(std::size_t layers, std::size_t heads);
    /// Throws InvalidInput on a shape mismatch or a negative/non-finite entry.
    HeadScoreMatrix(std::size_t layers, std::size_t heads, std::vector<double> scores);

    std::size_t layers() const noexcept { return m_layers; }
    std::size_t heads() const noexcept { return m_heads; }
    std::size_t size() const noexcept { return m_scores.size(); }

    double at(std::size_t layer, std::size_t head) const { return m_scores[layer * m_heads + head]; }
    double& at(std::size_t layer, std::size_t head) { return m_scores[layer * m_heads + head]; }
    double operator[](const HeadId& id) const { return at(id.layer, id.head); }

    const std::vector<double>& values() const noexcept { return m_scores; }
    double total() const;

    /// "none" for raw increments, "minmax" after corpus aggregation.
    std::string normalization = "none";
    /// Output tokens that contributed (N in the corpus average).
    std::size_t corpus_tokens = 0;

    bool operator==(const HeadScoreMatrix&) const = default;

private:
    std::size_t m_layers = 0;
    std::size_t m_heads = 0;
    std::vector<double> m_scores;
};

/// The k highest-scoring heads, ties broken toward lower (layer, head).
std::vector<HeadId> top_heads(const HeadScoreMatrix& scores, std::size_t k);

}  // namespace headkv
