// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "headkv/error.hpp"
#include "headkv/ocr.hpp"
#include "oracles.hpp"

namespace headkv {
namespace {

using Cells = std::vector<std::size_t>;

TEST(MatchBboxToPatches, SingleCell) {
    EXPECT_EQ(match_bbox_to_patches({0, 0, 49, 49}, {100, 100}, {2, 2}), Cells({0}));
}

TEST(MatchBboxToPatches, FullCover) {
    EXPECT_EQ(match_bbox_to_patches({0, 0, 99, 99}, {100, 100}, {2, 2}), Cells({0, 1, 2, 3}));
}

TEST(MatchBboxToPatches, MatchesRasterizationOracle224) {
    const BBox box{50, 50, 120, 60};
    const ImageShape image{224, 224};
    const PatchGrid grid{4, 4};
    const auto want = oracle::rasterize_bbox(box, image, grid);
    EXPECT_EQ(match_bbox_to_patches(box, image, grid), want);
    // Cells are 56 px: x in [50, 120) spans columns 0..2, y in [50, 60) rows 0..1.
    EXPECT_EQ(want, Cells({0, 1, 2, 4, 5, 6}));
}

TEST(MatchBboxToPatches, BoundaryTouchDoesNotCount) {
    // [50, 100) ends exactly on the border between the two columns.
    EXPECT_EQ(match_bbox_to_patches({50, 0, 100, 10}, {100, 200}, {1, 2}), Cells({0}));
    EXPECT_EQ(match_bbox_to_patches({100, 0, 101, 10}, {100, 200}, {1, 2}), Cells({1}));
}

TEST(MatchBboxToPatches, RandomAgreesWithRasterization) {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 500; ++trial) {
        const ImageShape image{1 + gen() % 90, 1 + gen() % 90};
        const PatchGrid grid{1 + gen() % 9, 1 + gen() % 9};
        const std::size_t x0 = gen() % image.width;
        const std::size_t y0 = gen() % image.height;
        const BBox box{x0, y0, x0 + 1 + gen() % (image.width - x0), y0 + 1 + gen() % (image.height - y0)};
        EXPECT_EQ(match_bbox_to_patches(box, image, grid), oracle::rasterize_bbox(box, image, grid));
    }
}

TEST(MatchBboxToPatches, RejectsBadInput) {
    EXPECT_THROW(match_bbox_to_patches({5, 5, 5, 9}, {10, 10}, {2, 2}), InvalidInput);
    EXPECT_THROW(match_bbox_to_patches({5, 9, 8, 9}, {10, 10}, {2, 2}), InvalidInput);
    EXPECT_THROW(match_bbox_to_patches({0, 0, 11, 5}, {10, 10}, {2, 2}), InvalidInput);
    EXPECT_THROW(match_bbox_to_patches({0, 0, 5, 5}, {10, 10}, {0, 2}), InvalidInput);
}

TEST(FindImageTokens, MapsPatchIndicesToPromptPositions) {
    const auto layout = make_prompt_layout(3, {2, 2}, 1);
    ASSERT_EQ(layout.size(), 8u);
    EXPECT_EQ(find_image_tokens(layout, {1, 3}).positions, Cells({4, 6}));
    EXPECT_TRUE(find_image_tokens(layout, {}).positions.empty());
}

TEST(Validate, RejectsInconsistentSamples) {
    OcrSample s;
    s.image_shape = {20, 20};
    s.grid = {2, 2};
    s.prompt_layout = make_prompt_layout(1, s.grid, 1);
    s.pairs = {{7, {0, 0, 5, 5}}};
    EXPECT_NO_THROW(validate(s));

    auto short_layout = s;
    short_layout.prompt_layout.pop_back();
    short_layout.prompt_layout.pop_back();
    EXPECT_THROW(validate(short_layout), InvalidInput);

    auto outside = s;
    outside.pairs[0].bbox.x1 = 21;
    EXPECT_THROW(validate(outside), InvalidInput);
}

}  // namespace
}  // namespace headkv
