// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/head_scores.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "headkv/error.hpp"

namespace headkv {

HeadScoreMatrix::HeadScoreMatrix(std::size_t layers, std::size_t heads)
    : m_layers(layers), m_heads(heads), m_scores(layers * heads, 0.0) {}

HeadScoreMatrix::HeadScoreMatrix(std::size_t layers, std::size_t heads, std::vector<double> scores)
    : m_layers(layers), m_heads(heads), m_scores(std::move(scores)) {
    HEADKV_CHECK(m_scores.size() == layers * heads, InvalidInput, "score matrix length does not match L x H");
    for (double s : m_scores) {
        HEADKV_CHECK(std::isfinite(s) && s >= 0.0, InvalidInput, "head scores must be finite and non-negative");
    }
}

double HeadScoreMatrix::total() const { return std::accumulate(m_scores.begin(), m_scores.end(), 0.0); }

std::vector<HeadId> top_heads(const HeadScoreMatrix& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& v = scores.values();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    k = std::min(k, order.size());
    std::vector<HeadId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({order[i] / scores.heads(), order[i] % scores.heads()});
    }
    return out;
}

}  // namespace headkv
