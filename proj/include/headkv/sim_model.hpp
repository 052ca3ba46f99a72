// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "headkv/allocator.hpp"
#include "headkv/cache_engine.hpp"
#include "headkv/head_scores.hpp"
#include "headkv/ocr.hpp"
#include "headkv/tensor.hpp"

namespace headkv::sim {

using tensor::Matrix;

struct ModelGeometry {
    std::size_t layers = 0;
    std::size_t query_heads = 0;  // per layer
    std::size_t kv_heads = 0;     // per layer
    std::size_t head_dim = 0;

    /// Query heads sharing one kv head.
    std::size_t group() const noexcept { return query_heads / kv_heads; }
    std::size_t query_head_count() const noexcept { return layers * query_heads; }
    std::size_t kv_head_count() const noexcept { return layers * kv_heads; }
    void validate() const;
    bool operator==(const ModelGeometry&) const = default;
};

struct PlantedHead {
    HeadId head;  // query head
    double strength = 1.0;
    bool operator==(const PlantedHead&) const = default;
};

struct PlantedHeadSet {
    std::vector<PlantedHead> entries;

    /// `count` distinct query heads drawn from `seed`, all at `strength`,
    /// listed in (layer, head) order.
    static PlantedHeadSet sample(const ModelGeometry& geometry, std::size_t count, double strength, std::uint64_t seed);
    std::optional<double> strength_of(const HeadId& head) const;
    std::vector<HeadId> heads() const;
    bool operator==(const PlantedHeadSet&) const = default;
};

/// round(fraction * query heads), at least one when fraction > 0.
std::size_t head_count_for_fraction(const ModelGeometry& geometry, double fraction);

/// Knobs of the generated attention. Trace rows are built directly as
/// probability vectors; decode-time attention is realized through Q/K.
struct BehaviorParams {
    // Trace rows: background weights are role_weight * Exp(1).
    double text_weight = 2.0;
    double image_weight = 1.0;
    /// Planted hit: each region patch gets peak_ratio times the largest
    /// background weight outside the region (times 1 + U[0, 0.1)).
    double peak_ratio = 20.0;

    // Decode view: additive logit intents realized through the keys.
    double sink_logit = 12.0;
    std::size_t anchors = 2;
    double anchor_logit_min = 7.0;
    double anchor_logit_max = 8.0;
    double region_logit = 13.0;
    std::size_t glances = 2;
    double glance_logit = 6.0;
    double query_jitter = 0.5;
};

class SyntheticModel {
public:
    SyntheticModel(ModelGeometry geometry, PlantedHeadSet planted, std::uint64_t seed, BehaviorParams params);

    const ModelGeometry& geometry() const noexcept { return m_geometry; }
    const PlantedHeadSet& planted() const noexcept { return m_planted; }
    std::uint64_t seed() const noexcept { return m_seed; }
    const BehaviorParams& params() const noexcept { return m_params; }
    const std::vector<HeadId>& masked() const noexcept { return m_masked; }

    bool is_masked(const HeadId& head) const;
    /// Planted strength of a query head; 0 when not planted.
    double strength(const HeadId& head) const;

    /// Copy with `heads` added to the masked set.
    SyntheticModel with_masked(const std::vector<HeadId>& heads) const;

private:
    ModelGeometry m_geometry;
    PlantedHeadSet m_planted;
    std::uint64_t m_seed;
    BehaviorParams m_params;
    std::vector<HeadId> m_masked;  // sorted, unique
    std::vector<double> m_strength;  // [layer * query_heads + h]
};

/// Validates geometry and planted indices (InvalidInput on violation).
SyntheticModel build_synthetic_model(const ModelGeometry& geometry, const PlantedHeadSet& planted, std::uint64_t seed,
                                     const BehaviorParams& params = {});

/// Masked heads emit uniform attention over their visible positions.
SyntheticModel mask_heads(const SyntheticModel& model, const std::vector<HeadId>& heads);

/// Per output token, one attention row per (layer, query head).
class AttentionTrace {
public:
    AttentionTrace() = default;
    AttentionTrace(std::size_t layers, std::size_t heads, std::size_t prompt_length);

    std::size_t layers() const noexcept { return m_layers; }
    std::size_t heads() const noexcept { return m_heads; }
    std::size_t prompt_length() const noexcept { return m_prompt_length; }
    std::size_t token_count() const noexcept { return m_steps.size(); }

    const std::vector<std::int64_t>& output_tokens() const noexcept { return m_tokens; }
    /// Step t holds (layers*heads) rows of length prompt_length + t.
    const Matrix& step(std::size_t t) const { return m_steps[t]; }
    std::span<const double> row(std::size_t t, std::size_t layer, std::size_t head) const {
        return m_steps[t].row(layer * m_heads + head);
    }

    /// Throws InvalidInput unless the matrix has the expected shape.
    void push_step(std::int64_t token, Matrix rows);

    bool operator==(const AttentionTrace&) const = default;

private:
    std::size_t m_layers = 0;
    std::size_t m_heads = 0;
    std::size_t m_prompt_length = 0;
    std::vector<std::int64_t> m_tokens;
    std::vector<Matrix> m_steps;
};

struct TracedSample {
    OcrSample sample;
    AttentionTrace trace;
    bool operator==(const TracedSample&) const = default;
};

struct CorpusParams {
    std::size_t grid_min = 4;
    std::size_t grid_max = 8;
    std::size_t prefix_text = 1;
    std::size_t instruction_text = 8;
    std::size_t tokens_per_sample = 6;
    /// Pixel extent of one patch cell is drawn from [min, max].
    std::size_t cell_px_min = 12;
    std::size_t cell_px_max = 40;
};

/// One OCR sample with its trace. Depends only on (model, seed, index).
TracedSample generate_ocr_sample(const SyntheticModel& model, std::size_t index, std::uint64_t seed,
                                 const CorpusParams& params = {});

/// n samples; sample i is generate_ocr_sample(model, i, seed, params).
std::vector<TracedSample> generate_ocr_samples(const SyntheticModel& model, std::size_t n, std::uint64_t seed,
                                               const CorpusParams& params = {}, std::size_t jobs = 1);

/// Prompt and answer regions used for a decode run.
struct DecodeScenario {
    ImageShape image;
    PatchGrid grid;
    std::vector<std::int32_t> prompt_layout;
    std::vector<PatchIndexSet> targets;  // per output token
};

/// Prompt of length prompt_len: a g x g image with g = floor(sqrt(0.9 * Lp))
/// between two halves of the remaining text; out_len random answer boxes.
DecodeScenario make_decode_scenario(std::size_t prompt_len, std::size_t out_len, std::uint64_t seed);

/// Realized tensors for one decode run.
struct DecodeInputs {
    cache::PrefillState prefill;
    std::vector<Matrix> step_queries;  // (layers*query_heads) x d per step
    std::vector<Matrix> step_keys;     // (layers*kv_heads) x d per step
};

DecodeInputs realize_decode(const SyntheticModel& model, const DecodeScenario& scenario, std::size_t window,
                            std::uint64_t seed);

using RetentionPolicy = std::function<cache::RetainedSets(const cache::PrefillState&)>;

/// Keeps every prompt position.
RetentionPolicy keep_all_policy();
/// compress_prefill under `plan`.
RetentionPolicy plan_policy(alloc::BudgetPlan plan, std::size_t window);

struct DecodeRecord {
    std::size_t prompt_length = 0;
    std::size_t out_length = 0;
    std::vector<double> step_recall;
    std::vector<std::size_t> step_retained;
    std::vector<double> head_recall;  // mean over steps, per query head
    double mean_recall = 0.0;
    double min_recall = 0.0;
    std::size_t peak_retained = 0;
    std::size_t slot_touches = 0;
};

/// Applies the policy to the prefill, then decodes every step, measuring
/// attention-mass recall against the full cache. Throws PolicyError if the
/// policy returns positions outside the prompt.
DecodeRecord run_decode(const DecodeInputs& inputs, const RetentionPolicy& policy);

/// make_decode_scenario + realize_decode + run_decode. prompt_len >= window.
DecodeRecord decode_with_cache(const SyntheticModel& model, std::size_t prompt_len, std::size_t out_len,
                               std::size_t window, const RetentionPolicy& policy, std::uint64_t seed);

}  // namespace headkv::sim
