// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/head_chaser.hpp"

#include <algorithm>
#include <string>

#include "headkv/error.hpp"
#include "headkv/parallel.hpp"
#include "headkv/tensor.hpp"

namespace headkv::chaser {

namespace {

const TextBox* find_pair(const OcrSample& sample, std::int64_t token) {
    for (const auto& pair : sample.pairs) {
        if (pair.token == token) {
            return &pair;
        }
    }
    return nullptr;
}

void check_trace(const OcrSample& sample, const sim::AttentionTrace& trace) {
    HEADKV_CHECK(trace.prompt_length() == sample.prompt_length(), InvalidInput,
                 "trace prompt length " + std::to_string(trace.prompt_length()) + " differs from sample prompt length " +
                     std::to_string(sample.prompt_length()));
}

}  // namespace

SampleScore score_sample(const OcrSample& sample, const sim::AttentionTrace& trace) {
    validate(sample);
    check_trace(sample, trace);
    SampleScore out{HeadScoreMatrix(trace.layers(), trace.heads()), 0, 0};
    for (std::size_t t = 0; t < trace.token_count(); ++t) {
        const TextBox* pair = find_pair(sample, trace.output_tokens()[t]);
        if (pair == nullptr) {
            ++out.skipped_tokens;
            continue;
        }
        const auto region = find_image_tokens(sample.prompt_layout,
                                              match_bbox_to_patches(pair->bbox, sample.image_shape, sample.grid));
        const double weight = 1.0 / static_cast<double>(region.positions.size());
        for (std::size_t l = 0; l < trace.layers(); ++l) {
            for (std::size_t h = 0; h < trace.heads(); ++h) {
                const auto index = tensor::argmax_row(trace.row(t, l, h));
                if (std::binary_search(region.positions.begin(), region.positions.end(), index)) {
                    out.increment.at(l, h) += weight;
                }
            }
        }
        ++out.scored_tokens;
    }
    return out;
}

HeadScoreMatrix aggregate_corpus(std::span<const HeadScoreMatrix> increments, std::span<const std::size_t> token_counts) {
    HEADKV_CHECK(increments.size() == token_counts.size(), InvalidInput, "one token count per increment required");
    HEADKV_CHECK(!increments.empty(), InvalidInput, "no increments to aggregate");
    const std::size_t layers = increments.front().layers();
    const std::size_t heads = increments.front().heads();
    std::vector<double> sum(layers * heads, 0.0);
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < increments.size(); ++i) {
        const auto& inc = increments[i];
        HEADKV_CHECK(inc.layers() == layers && inc.heads() == heads, InvalidInput,
                     "increment " + std::to_string(i) + " has a different shape");
        for (std::size_t k = 0; k < sum.size(); ++k) {
            sum[k] += inc.values()[k];
        }
        tokens += token_counts[i];
    }
    HEADKV_CHECK(tokens > 0, InvalidInput, "corpus has zero scored tokens");
    for (auto& v : sum) {
        v /= static_cast<double>(tokens);
    }
    const auto [lo_it, hi_it] = std::minmax_element(sum.begin(), sum.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    for (auto& v : sum) {
        if (hi > lo) {
            v = (v - lo) / (hi - lo);
        } else {
            v = hi > 0.0 ? 1.0 : 0.0;
        }
    }
    HeadScoreMatrix out(layers, heads, std::move(sum));
    out.normalization = "minmax";
    out.corpus_tokens = tokens;
    return out;
}

HeadScoreMatrix aggregate_gqa_scores(const HeadScoreMatrix& scores, std::size_t group) {
    HEADKV_CHECK(group >= 1 && scores.heads() % group == 0, InvalidInput,
                 "query heads (" + std::to_string(scores.heads()) + ") not divisible by group " + std::to_string(group));
    const std::size_t kv = scores.heads() / group;
    HeadScoreMatrix out(scores.layers(), kv);
    for (std::size_t l = 0; l < scores.layers(); ++l) {
        for (std::size_t h = 0; h < scores.heads(); ++h) {
            out.at(l, h / group) += scores.at(l, h);
        }
    }
    out.normalization = scores.normalization;
    out.corpus_tokens = scores.corpus_tokens;
    return out;
}

ChaseResult chase_corpus(std::span<const sim::TracedSample> corpus, std::size_t jobs) {
    HEADKV_CHECK(!corpus.empty(), InvalidInput, "empty corpus");
    std::vector<SampleScore> parts(corpus.size());
    parallel_for(corpus.size(), jobs,
                 [&](std::size_t i) { parts[i] = score_sample(corpus[i].sample, corpus[i].trace); });
    std::vector<HeadScoreMatrix> increments;
    std::vector<std::size_t> counts;
    ChaseResult out;
    for (auto& p : parts) {
        out.scored_tokens += p.scored_tokens;
        out.skipped_tokens += p.skipped_tokens;
        counts.push_back(p.scored_tokens);
        increments.push_back(std::move(p.increment));
    }
    out.scores = aggregate_corpus(increments, counts);
    return out;
}

Recovery planted_recovery(const HeadScoreMatrix& scores, const sim::PlantedHeadSet& planted, std::size_t k) {
    const auto top = top_heads(scores, k);
    const auto truth = planted.heads();
    Recovery out;
    for (const auto& h : top) {
        if (std::find(truth.begin(), truth.end(), h) != truth.end()) {
            ++out.hits;
        }
    }
    out.precision = top.empty() ? 0.0 : static_cast<double>(out.hits) / static_cast<double>(top.size());
    out.recall = truth.empty() ? 1.0 : static_cast<double>(out.hits) / static_cast<double>(truth.size());
    return out;
}

double visual_grounding(std::span<const sim::TracedSample> corpus) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ts : corpus) {
        const auto& sample = ts.sample;
        const auto& trace = ts.trace;
        check_trace(sample, trace);
        const double heads = static_cast<double>(trace.layers() * trace.heads());
        for (std::size_t t = 0; t < trace.token_count(); ++t) {
            const TextBox* pair = find_pair(sample, trace.output_tokens()[t]);
            if (pair == nullptr) {
                continue;
            }
            const auto region = find_image_tokens(sample.prompt_layout,
                                                  match_bbox_to_patches(pair->bbox, sample.image_shape, sample.grid));
            double mass = 0.0;
            for (std::size_t l = 0; l < trace.layers(); ++l) {
                for (std::size_t h = 0; h < trace.heads(); ++h) {
                    const auto row = trace.row(t, l, h);
                    for (auto pos : region.positions) {
                        mass += row[pos];
                    }
                }
            }
            total += mass / heads;
            ++tokens;
        }
    }
    HEADKV_CHECK(tokens > 0, InvalidInput, "corpus has zero scored tokens");
    return total / static_cast<double>(tokens);
}

}  // namespace headkv::chaser
