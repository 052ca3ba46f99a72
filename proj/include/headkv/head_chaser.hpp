// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "headkv/head_scores.hpp"
#include "headkv/ocr.hpp"
#include "headkv/sim_model.hpp"

namespace headkv::chaser {

/// Unnormalized per-head hit mass of one sample.
struct SampleScore {
    HeadScoreMatrix increment;
    std::size_t scored_tokens = 0;
    /// Output tokens with no (text, bbox) pair; they add nothing.
    std::size_t skipped_tokens = 0;
};

/// For every output token, each head whose whole-row argmax falls inside the
/// token's patch positions gains 1 / |patch positions|.
SampleScore score_sample(const OcrSample& sample, const sim::AttentionTrace& trace);

/// Sum of increments over the total token count, min-max normalized to [0, 1].
/// A matrix whose entries are all equal and positive normalizes to all ones.
HeadScoreMatrix aggregate_corpus(std::span<const HeadScoreMatrix> increments, std::span<const std::size_t> token_counts);

/// kv score j of a layer = sum of query scores j*group .. j*group + group - 1.
HeadScoreMatrix aggregate_gqa_scores(const HeadScoreMatrix& scores, std::size_t group);

struct ChaseResult {
    HeadScoreMatrix scores;  // normalized, over query heads
    std::size_t scored_tokens = 0;
    std::size_t skipped_tokens = 0;
};

/// score_sample over the corpus (in parallel), then aggregate_corpus.
ChaseResult chase_corpus(std::span<const sim::TracedSample> corpus, std::size_t jobs = 1);

struct Recovery {
    double precision = 0.0;
    double recall = 0.0;
    std::size_t hits = 0;
};

/// Overlap between the top-k scored heads and the planted set.
Recovery planted_recovery(const HeadScoreMatrix& scores, const sim::PlantedHeadSet& planted, std::size_t k);

/// Mean over output tokens of the head-averaged attention mass that lands on
/// the token's patch positions.
double visual_grounding(std::span<const sim::TracedSample> corpus);

}  // namespace headkv::chaser
