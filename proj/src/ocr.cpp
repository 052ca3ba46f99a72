// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/ocr.hpp"

#include <algorithm>
#include <string>

#include "headkv/error.hpp"

namespace headkv {

namespace {

// Cells along one axis overlapping [lo, hi) with positive length. Cell c spans
// [c*extent/n, (c+1)*extent/n); compared in integers to avoid rounding.
std::pair<std::size_t, std::size_t> overlapping_cells(std::size_t lo, std::size_t hi, std::size_t extent,
                                                      std::size_t n) {
    std::size_t first = n;
    std::size_t last = 0;
    for (std::size_t c = 0; c < n; ++c) {
        const bool overlaps = lo * n < (c + 1) * extent && hi * n > c * extent;
        if (overlaps) {
            first = std::min(first, c);
            last = c;
        }
    }
    return {first, last};
}

}  // namespace

std::vector<std::size_t> match_bbox_to_patches(const BBox& bbox, const ImageShape& image, const PatchGrid& grid) {
    HEADKV_CHECK(grid.rows > 0 && grid.cols > 0, InvalidInput, "patch grid must be positive");
    HEADKV_CHECK(image.height > 0 && image.width > 0, InvalidInput, "image shape must be positive");
    HEADKV_CHECK(bbox.x0 < bbox.x1 && bbox.y0 < bbox.y1, InvalidInput, "degenerate bbox (zero area)");
    HEADKV_CHECK(bbox.x1 <= image.width && bbox.y1 <= image.height, InvalidInput, "bbox outside image bounds");

    const auto [c0, c1] = overlapping_cells(bbox.x0, bbox.x1, image.width, grid.cols);
    const auto [r0, r1] = overlapping_cells(bbox.y0, bbox.y1, image.height, grid.rows);
    std::vector<std::size_t> out;
    for (std::size_t r = r0; r <= r1; ++r) {
        for (std::size_t c = c0; c <= c1; ++c) {
            out.push_back(r * grid.cols + c);
        }
    }
    return out;
}

PatchIndexSet find_image_tokens(const std::vector<std::int32_t>& prompt_layout,
                                const std::vector<std::size_t>& patches) {
    PatchIndexSet out;
    for (std::size_t pos = 0; pos < prompt_layout.size(); ++pos) {
        const auto role = prompt_layout[pos];
        if (role == kTextRole) {
            continue;
        }
        if (std::binary_search(patches.begin(), patches.end(), static_cast<std::size_t>(role))) {
            out.positions.push_back(pos);
        }
    }
    return out;
}

std::vector<std::int32_t> make_prompt_layout(std::size_t prefix_text, const PatchGrid& grid, std::size_t suffix_text) {
    std::vector<std::int32_t> layout(prefix_text, kTextRole);
    for (std::size_t p = 0; p < grid.size(); ++p) {
        layout.push_back(static_cast<std::int32_t>(p));
    }
    layout.insert(layout.end(), suffix_text, kTextRole);
    return layout;
}

void validate(const OcrSample& sample) {
    HEADKV_CHECK(sample.grid.rows > 0 && sample.grid.cols > 0, InvalidInput, "sample grid must be positive");
    std::size_t image_tokens = 0;
    for (auto role : sample.prompt_layout) {
        if (role == kTextRole) {
            continue;
        }
        HEADKV_CHECK(role >= 0 && static_cast<std::size_t>(role) < sample.grid.size(), InvalidInput,
                     "prompt layout patch index outside grid");
        ++image_tokens;
    }
    HEADKV_CHECK(image_tokens == sample.grid.size(), InvalidInput,
                 "grid has " + std::to_string(sample.grid.size()) + " patches but prompt holds " +
                     std::to_string(image_tokens) + " image tokens");
    for (const auto& pair : sample.pairs) {
        HEADKV_CHECK(pair.bbox.x1 <= sample.image_shape.width && pair.bbox.y1 <= sample.image_shape.height,
                     InvalidInput, "bbox outside image bounds");
    }
}

}  // namespace headkv
