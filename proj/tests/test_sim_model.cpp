// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "headkv/error.hpp"
#include "headkv/head_chaser.hpp"
#include "headkv/serialize.hpp"
#include "headkv/sim_model.hpp"
#include "oracles.hpp"

namespace headkv::sim {
namespace {

std::vector<std::size_t> region_of(const TracedSample& ts, std::size_t t) {
    const auto& s = ts.sample;
    const auto token = ts.trace.output_tokens()[t];
    const auto pair = std::find_if(s.pairs.begin(), s.pairs.end(), [&](const TextBox& p) { return p.token == token; });
    return find_image_tokens(s.prompt_layout, match_bbox_to_patches(pair->bbox, s.image_shape, s.grid)).positions;
}

bool hits(const TracedSample& ts, std::size_t t, std::size_t l, std::size_t h) {
    const auto region = region_of(ts, t);
    return std::binary_search(region.begin(), region.end(), tensor::argmax_row(ts.trace.row(t, l, h)));
}

TEST(ModelGeometry, QueryHeadsMustDivide) {
    EXPECT_THROW((ModelGeometry{2, 6, 4, 8}.validate()), InvalidInput);
    EXPECT_THROW((ModelGeometry{0, 4, 4, 8}.validate()), InvalidInput);
    EXPECT_NO_THROW((ModelGeometry{2, 32, 8, 8}.validate()));
}

TEST(BuildSyntheticModel, RejectsBadPlantedEntries) {
    const ModelGeometry geo{2, 4, 4, 8};
    EXPECT_THROW(build_synthetic_model(geo, {{{{2, 0}, 1.0}}}, 0), InvalidInput);
    EXPECT_THROW(build_synthetic_model(geo, {{{{0, 4}, 1.0}}}, 0), InvalidInput);
    EXPECT_THROW(build_synthetic_model(geo, {{{{0, 1}, 1.5}}}, 0), InvalidInput);
    EXPECT_THROW(build_synthetic_model(geo, {{{{0, 1}, 1.0}, {{0, 1}, 0.5}}}, 0), InvalidInput);
}

TEST(HeadCountForFraction, RoundsWithFloorOfOne) {
    const ModelGeometry geo{8, 8, 8, 8};
    EXPECT_EQ(head_count_for_fraction(geo, 0.0), 0u);
    EXPECT_EQ(head_count_for_fraction(geo, 0.02), 1u);
    EXPECT_EQ(head_count_for_fraction(geo, 0.05), 3u);
    EXPECT_EQ(head_count_for_fraction(geo, 0.10), 6u);
}

TEST(PlantedHeadSet, SampleIsDistinctSortedAndSeeded) {
    const ModelGeometry geo{4, 8, 8, 8};
    const auto a = PlantedHeadSet::sample(geo, 10, 0.8, 3);
    const auto heads = a.heads();
    EXPECT_EQ(heads.size(), 10u);
    EXPECT_TRUE(std::is_sorted(heads.begin(), heads.end()));
    EXPECT_EQ(std::adjacent_find(heads.begin(), heads.end()), heads.end());
    EXPECT_EQ(a, PlantedHeadSet::sample(geo, 10, 0.8, 3));
    EXPECT_NE(a, PlantedHeadSet::sample(geo, 10, 0.8, 4));
}

TEST(GenerateOcrSamples, StrengthOneHeadAlwaysHits) {
    const ModelGeometry geo{2, 4, 4, 8};
    const auto model = build_synthetic_model(geo, {{{{0, 1}, 1.0}}}, 1);
    for (const auto& ts : generate_ocr_samples(model, 30, 2)) {
        for (std::size_t t = 0; t < ts.trace.token_count(); ++t) {
            EXPECT_TRUE(hits(ts, t, 0, 1));
        }
    }
}

TEST(GenerateOcrSamples, StrengthZeroHeadLooksUnplanted) {
    const ModelGeometry geo{2, 4, 4, 8};
    const auto model = build_synthetic_model(geo, {{{{1, 2}, 0.0}}}, 5);
    const auto corpus = generate_ocr_samples(model, 170, 6);  // 1020 tokens
    std::size_t planted_hits = 0;
    std::size_t planted_n = 0;
    std::size_t other_hits = 0;
    std::size_t other_n = 0;
    for (const auto& ts : corpus) {
        for (std::size_t t = 0; t < ts.trace.token_count(); ++t) {
            for (std::size_t l = 0; l < 2; ++l) {
                for (std::size_t h = 0; h < 4; ++h) {
                    const bool hit = hits(ts, t, l, h);
                    if (l == 1 && h == 2) {
                        planted_hits += hit;
                        ++planted_n;
                    } else {
                        other_hits += hit;
                        ++other_n;
                    }
                }
            }
        }
    }
    ASSERT_GE(planted_n, 1000u);
    const double rate = static_cast<double>(other_hits) / static_cast<double>(other_n);
    EXPECT_GT(oracle::binomial_two_sided_p(planted_hits, planted_n, rate), 0.01);
}

TEST(GenerateOcrSamples, RowsAreDistributionsOfGrowingLength) {
    const ModelGeometry geo{2, 3, 3, 8};
    const auto model = build_synthetic_model(geo, PlantedHeadSet::sample(geo, 2, 0.6, 1), 7);
    for (const auto& ts : generate_ocr_samples(model, 10, 8)) {
        ASSERT_EQ(ts.trace.token_count(), ts.sample.pairs.size());
        EXPECT_NO_THROW(validate(ts.sample));
        for (std::size_t t = 0; t < ts.trace.token_count(); ++t) {
            EXPECT_EQ(ts.trace.output_tokens()[t], ts.sample.pairs[t].token);
            for (std::size_t l = 0; l < 2; ++l) {
                for (std::size_t h = 0; h < 3; ++h) {
                    const auto row = ts.trace.row(t, l, h);
                    ASSERT_EQ(row.size(), ts.sample.prompt_length() + t);
                    double sum = 0.0;
                    for (double v : row) {
                        EXPECT_GE(v, 0.0);
                        sum += v;
                    }
                    EXPECT_NEAR(sum, 1.0, 1e-9);
                }
            }
        }
    }
}

TEST(GenerateOcrSamples, SmallestCase) {
    const ModelGeometry geo{1, 1, 1, 4};
    const auto model = build_synthetic_model(geo, {}, 1);
    CorpusParams params;
    params.grid_min = params.grid_max = 2;
    params.tokens_per_sample = 1;
    const auto corpus = generate_ocr_samples(model, 1, 2, params);
    ASSERT_EQ(corpus.size(), 1u);
    const auto& ts = corpus[0];
    EXPECT_EQ(ts.trace.token_count(), 1u);
    EXPECT_EQ(ts.trace.row(0, 0, 0).size(), 4 + params.prefix_text + params.instruction_text);
}

TEST(GenerateOcrSamples, GridsVaryAcrossSamples) {
    const auto model = build_synthetic_model({1, 2, 2, 4}, {}, 3);
    const auto corpus = generate_ocr_samples(model, 20, 4);
    std::vector<std::size_t> sizes;
    for (const auto& ts : corpus) {
        sizes.push_back(ts.sample.grid.size());
    }
    std::sort(sizes.begin(), sizes.end());
    EXPECT_GT(std::unique(sizes.begin(), sizes.end()) - sizes.begin(), 3);
}

TEST(GenerateOcrSamples, DeterministicAcrossRunsAndThreads) {
    const ModelGeometry geo{1, 2, 2, 4};
    const auto model = build_synthetic_model(geo, PlantedHeadSet::sample(geo, 1, 0.8, 2), 9);
    CorpusParams params;
    params.grid_max = 4;
    params.tokens_per_sample = 2;
    const auto a = generate_ocr_samples(model, 1000, 10, params, 1);
    const auto b = generate_ocr_samples(model, 1000, 10, params, 3);
    EXPECT_EQ(io::corpus_digest(a), io::corpus_digest(b));
    EXPECT_TRUE(a == b);
    EXPECT_NE(io::corpus_digest(a), io::corpus_digest(generate_ocr_samples(model, 1000, 11, params)));
}

TEST(GenerateOcrSamples, EmptyCorpusRejected) {
    const auto model = build_synthetic_model({1, 1, 1, 4}, {}, 1);
    EXPECT_THROW(generate_ocr_samples(model, 0, 1), InvalidInput);
}

TEST(MaskHeads, EmptyMaskIsIdentity) {
    const ModelGeometry geo{2, 4, 4, 8};
    const auto model = build_synthetic_model(geo, PlantedHeadSet::sample(geo, 2, 0.9, 1), 4);
    EXPECT_TRUE(generate_ocr_samples(model, 5, 1) == generate_ocr_samples(mask_heads(model, {}), 5, 1));
}

TEST(MaskHeads, MaskedRowsAreUniform) {
    const ModelGeometry geo{1, 2, 2, 8};
    const auto model = mask_heads(build_synthetic_model(geo, {{{{0, 0}, 1.0}}}, 4), {{0, 0}});
    for (const auto& ts : generate_ocr_samples(model, 3, 1)) {
        for (std::size_t t = 0; t < ts.trace.token_count(); ++t) {
            for (double v : ts.trace.row(t, 0, 0)) {
                EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(ts.trace.row(t, 0, 0).size()));
            }
        }
    }
}

TEST(MaskHeads, InvalidIndexRejected) {
    const auto model = build_synthetic_model({1, 2, 2, 8}, {}, 4);
    EXPECT_THROW(mask_heads(model, {{1, 0}}), InvalidInput);
}

TEST(MaskHeads, MaskingPlantedHeadsCollapsesTheirScores) {
    const ModelGeometry geo{4, 4, 4, 8};
    const auto planted = PlantedHeadSet::sample(geo, 3, 1.0, 7);
    const auto model = build_synthetic_model(geo, planted, 8);
    const auto masked = chaser::chase_corpus(generate_ocr_samples(mask_heads(model, planted.heads()), 100, 2));
    // Uniform rows argmax at position 0, a text token, so the heads never hit.
    for (const auto& h : planted.heads()) {
        EXPECT_EQ(masked.scores[h], 0.0);
    }
}

TEST(MaskHeads, MaskingOtherHeadsLeavesPlantedRowsUnchanged) {
    const ModelGeometry geo{3, 4, 4, 8};
    const auto planted = PlantedHeadSet::sample(geo, 2, 0.8, 3);
    const auto model = build_synthetic_model(geo, planted, 9);
    std::vector<HeadId> others;
    for (std::size_t l = 0; l < geo.layers; ++l) {
        for (std::size_t h = 0; h < geo.query_heads; h += 2) {
            if (!planted.strength_of({l, h}).has_value()) {
                others.push_back({l, h});
            }
        }
    }
    ASSERT_GE(others.size(), 3u);
    const auto base = generate_ocr_samples(model, 20, 4);
    const auto masked = generate_ocr_samples(mask_heads(model, others), 20, 4);
    for (std::size_t i = 0; i < base.size(); ++i) {
        for (std::size_t t = 0; t < base[i].trace.token_count(); ++t) {
            for (const auto& h : planted.heads()) {
                const auto a = base[i].trace.row(t, h.layer, h.head);
                const auto b = masked[i].trace.row(t, h.layer, h.head);
                EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
            }
        }
    }
}

TEST(DecodeScenario, LayoutAndTargets) {
    const auto s = make_decode_scenario(100, 5, 1);
    EXPECT_EQ(s.prompt_layout.size(), 100u);
    EXPECT_EQ(s.grid.rows, 9u);  // floor(sqrt(90))
    EXPECT_EQ(s.targets.size(), 5u);
    for (const auto& t : s.targets) {
        EXPECT_FALSE(t.positions.empty());
    }
}

TEST(DecodeWithCache, KeepAllHasRecallOne) {
    const ModelGeometry geo{2, 4, 2, 16};
    const auto model = build_synthetic_model(geo, PlantedHeadSet::sample(geo, 1, 0.8, 1), 2);
    const auto record = decode_with_cache(model, 64, 10, 8, keep_all_policy(), 3);
    ASSERT_EQ(record.step_recall.size(), 10u);
    for (double r : record.step_recall) {
        EXPECT_NEAR(r, 1.0, 1e-12);
    }
    EXPECT_EQ(record.peak_retained, 4u * (64 + 10));
}

TEST(DecodeWithCache, WindowOnlyOnUniformModelMatchesClosedForm) {
    // Every head masked: zero queries, so attention is uniform over the n
    // visible positions and a window-only cache captures (w + t + 1) / n.
    const ModelGeometry geo{2, 2, 2, 8};
    std::vector<HeadId> all{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const auto model = mask_heads(build_synthetic_model(geo, {}, 1), all);
    alloc::BudgetPlan plan;
    plan.layers = 2;
    plan.kv_heads = 2;
    plan.window = 8;
    plan.budgets.assign(4, 8);
    plan.total_budget = 32;
    const auto record = decode_with_cache(model, 80, 6, 8, plan_policy(plan, 8), 5);
    for (std::size_t t = 0; t < 6; ++t) {
        EXPECT_NEAR(record.step_recall[t], static_cast<double>(8 + t + 1) / static_cast<double>(80 + t + 1), 1e-12);
    }
}

TEST(DecodeWithCache, OutOfRangePolicyRejected) {
    const auto model = build_synthetic_model({1, 1, 1, 8}, {}, 1);
    const RetentionPolicy bad = [](const cache::PrefillState& p) {
        return cache::RetainedSets{{p.prompt_length()}};
    };
    EXPECT_THROW(decode_with_cache(model, 40, 2, 8, bad, 1), PolicyError);
}

TEST(DecodeWithCache, PromptShorterThanWindowRejected) {
    const auto model = build_synthetic_model({1, 1, 1, 8}, {}, 1);
    EXPECT_THROW(decode_with_cache(model, 20, 2, 32, keep_all_policy(), 1), InvalidInput);
}

TEST(DecodeWithCache, Deterministic) {
    const ModelGeometry geo{2, 2, 2, 16};
    const auto model = build_synthetic_model(geo, PlantedHeadSet::sample(geo, 1, 0.8, 1), 2);
    alloc::BudgetPlan plan;
    plan.layers = 2;
    plan.kv_heads = 2;
    plan.window = 8;
    plan.budgets = {10, 20, 30, 12};
    plan.total_budget = 72;
    const auto a = decode_with_cache(model, 64, 8, 8, plan_policy(plan, 8), 3);
    const auto b = decode_with_cache(model, 64, 8, 8, plan_policy(plan, 8), 3);
    EXPECT_EQ(a.step_recall, b.step_recall);
    EXPECT_EQ(a.head_recall, b.head_recall);
}

}  // namespace
}  // namespace headkv::sim
