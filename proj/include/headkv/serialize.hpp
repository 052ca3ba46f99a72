// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headkv/allocator.hpp"
#include "headkv/cache_engine.hpp"
#include "headkv/head_scores.hpp"
#include "headkv/sim_model.hpp"

namespace headkv::io {

using nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, const std::string& text);
json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with two-space indent and a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& value);

/// Lower-case, zero-padded 16-digit hex.
std::string hex64(std::uint64_t value);
std::uint64_t digest(const std::string& text);

// Corpus record: {"image_shape": {"height", "width"}, "grid": {"rows", "cols"},
// "pairs": [{"token", "bbox": [x0, y0, x1, y1]}], "prompt_layout": [...],
// "layers", "heads", "output_tokens": [...], "rows": [[...], ...]} with rows
// ordered by (token, layer, head).
json sample_to_json(const sim::TracedSample& sample);
sim::TracedSample sample_from_json(const json& record);

/// One sample_NNNNN.json per sample.
void write_corpus(const std::filesystem::path& dir, std::span<const sim::TracedSample> corpus);
/// Reads every sample_*.json in name order. Throws IoError on an empty dir.
std::vector<sim::TracedSample> read_corpus(const std::filesystem::path& dir);
/// Digest over the compact dumps of every record in order.
std::uint64_t corpus_digest(std::span<const sim::TracedSample> corpus);

// Score file: {"layers", "heads", "scores": row-major, "normalization", "corpus_tokens"}.
json scores_to_json(const HeadScoreMatrix& scores);
HeadScoreMatrix scores_from_json(const json& value);

struct PlanFile {
    alloc::BudgetPlan plan;
    std::string score_file_hash;
};

// Plan file: {"budget_B", "w", "rho", "plan": L x H_kv, "allocator", "score_file_hash"}.
json plan_to_json(const alloc::BudgetPlan& plan, const std::string& score_file_hash);
/// Throws InvalidInput if the plan rows are ragged or do not sum to budget_B.
PlanFile plan_from_json(const json& value);

json prefill_to_json(const cache::PrefillState& prefill);
cache::PrefillState prefill_from_json(const json& value);

json report_to_json(const cache::EvictionReport& report);
/// One line per kept position: layer,kv_head,budget,position,window_score.
void write_report_csv(std::ostream& out, const cache::EvictionReport& report);

}  // namespace headkv::io
