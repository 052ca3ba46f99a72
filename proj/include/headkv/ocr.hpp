// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace headkv {

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    bool operator==(const ImageShape&) const = default;
};

/// Feature-map patch grid laid uniformly over the image rectangle.
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const PatchGrid&) const = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
    std::size_t x0 = 0;
    std::size_t y0 = 0;
    std::size_t x1 = 0;
    std::size_t y1 = 0;
    bool operator==(const BBox&) const = default;
};

/// One ground-truth (text token, bbox) pair.
struct TextBox {
    std::int64_t token = 0;
    BBox bbox;
    bool operator==(const TextBox&) const = default;
};

/// Role of each prompt position: kTextRole or the row-major patch index.
inline constexpr std::int32_t kTextRole = -1;

struct OcrSample {
    ImageShape image_shape;
    PatchGrid grid;
    std::vector<TextBox> pairs;
    std::vector<std::int32_t> prompt_layout;

    std::size_t prompt_length() const noexcept { return prompt_layout.size(); }
    bool operator==(const OcrSample&) const = default;
};

/// Prompt positions whose tokens come from a bbox's patches (I_y).
struct PatchIndexSet {
    std::vector<std::size_t> positions;  // ascending
    bool operator==(const PatchIndexSet&) const = default;
};

/// Grid patches (row-major indices, ascending) whose pixel cell overlaps the
/// bbox with positive area. Touching a cell border does not count.
std::vector<std::size_t> match_bbox_to_patches(const BBox& bbox, const ImageShape& image, const PatchGrid& grid);

/// Maps grid patch indices onto the prompt positions holding those patches.
PatchIndexSet find_image_tokens(const std::vector<std::int32_t>& prompt_layout,
                                const std::vector<std::size_t>& patches);

/// Layout [prefix text][rows*cols image patches][suffix text].
std::vector<std::int32_t> make_prompt_layout(std::size_t prefix_text, const PatchGrid& grid, std::size_t suffix_text);

/// Checks the OcrSample invariants; throws InvalidInput.
void validate(const OcrSample& sample);

}  // namespace headkv
