// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/sim_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "headkv/error.hpp"
#include "headkv/parallel.hpp"
#include "headkv/rng.hpp"

namespace headkv::sim {

namespace {

// Seed-derivation tags; one per independent random stream.
enum Tag : std::uint64_t {
    kPlantTag = 0x11,
    kSampleTag = 0x21,
    kRowTag = 0x22,
    kScenarioTag = 0x31,
    kKeyTag = 0x32,
    kAnchorTag = 0x33,
    kGlanceTag = 0x34,
    kJitterTag = 0x35,
    kEventTag = 0x36,
};

struct Intent {
    std::size_t position;
    double logit;
};

// q = sum_j logit_j * k_j / sqrt(d) + jitter * z, so that q.k_m / sqrt(d) is
// close to logit_m for the intended positions (|k|^2 ~ d) plus noise elsewhere.
void realize_query(std::span<const Intent> intents, const Matrix& keys, double jitter, Rng& rng,
                   std::span<double> out) {
    const std::size_t d = keys.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& intent : intents) {
        const auto k = keys.row(intent.position);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] += intent.logit * scale * k[c];
        }
    }
    for (std::size_t c = 0; c < d; ++c) {
        out[c] += jitter * rng.normal();
    }
}

void fill_trace_row(const SyntheticModel& model, const HeadId& head, const std::vector<std::int32_t>& layout,
                    const std::vector<std::size_t>& region, Rng& rng, std::span<double> row) {
    const auto& params = model.params();
    const double hit_draw = rng.uniform();
    if (model.is_masked(head)) {
        std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
        return;
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
        const bool text = j >= layout.size() || layout[j] == kTextRole;
        row[j] = (text ? params.text_weight : params.image_weight) * rng.exponential();
    }
    if (hit_draw < model.strength(head)) {
        double background_peak = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!std::binary_search(region.begin(), region.end(), j)) {
                background_peak = std::max(background_peak, row[j]);
            }
        }
        if (background_peak <= 0.0) {
            background_peak = 1.0;
        }
        for (auto pos : region) {
            row[pos] = params.peak_ratio * background_peak * (1.0 + 0.1 * rng.uniform());
        }
    }
    double total = 0.0;
    for (double v : row) {
        total += v;
    }
    for (auto& v : row) {
        v /= total;
    }
}

}  // namespace

void ModelGeometry::validate() const {
    HEADKV_CHECK(layers > 0 && query_heads > 0 && kv_heads > 0 && head_dim > 0, InvalidInput,
                 "model geometry must be positive");
    HEADKV_CHECK(query_heads % kv_heads == 0, InvalidInput,
                 "query heads (" + std::to_string(query_heads) + ") not divisible by kv heads (" +
                     std::to_string(kv_heads) + ")");
}

PlantedHeadSet PlantedHeadSet::sample(const ModelGeometry& geometry, std::size_t count, double strength,
                                      std::uint64_t seed) {
    geometry.validate();
    const std::size_t n = geometry.query_head_count();
    HEADKV_CHECK(count <= n, InvalidInput, "cannot plant more heads than the model has");
    Rng rng(derive_seed(seed, {kPlantTag}));
    // Partial Fisher-Yates.
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = i;
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(ids[i], ids[i + rng.below(n - i)]);
    }
    std::sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(count));
    PlantedHeadSet out;
    for (std::size_t i = 0; i < count; ++i) {
        out.entries.push_back({{ids[i] / geometry.query_heads, ids[i] % geometry.query_heads}, strength});
    }
    return out;
}

std::optional<double> PlantedHeadSet::strength_of(const HeadId& head) const {
    for (const auto& e : entries) {
        if (e.head == head) {
            return e.strength;
        }
    }
    return std::nullopt;
}

std::vector<HeadId> PlantedHeadSet::heads() const {
    std::vector<HeadId> out;
    for (const auto& e : entries) {
        out.push_back(e.head);
    }
    return out;
}

std::size_t head_count_for_fraction(const ModelGeometry& geometry, double fraction) {
    HEADKV_CHECK(fraction >= 0.0 && fraction <= 1.0, InvalidInput, "head fraction must lie in [0, 1]");
    const auto n = static_cast<double>(geometry.query_head_count());
    const auto count = static_cast<std::size_t>(std::llround(fraction * n));
    return fraction > 0.0 ? std::max<std::size_t>(count, 1) : 0;
}

SyntheticModel::SyntheticModel(ModelGeometry geometry, PlantedHeadSet planted, std::uint64_t seed,
                               BehaviorParams params)
    : m_geometry(geometry), m_planted(std::move(planted)), m_seed(seed), m_params(params) {
    m_geometry.validate();
    m_strength.assign(m_geometry.query_head_count(), 0.0);
    std::set<HeadId> seen;
    for (const auto& e : m_planted.entries) {
        HEADKV_CHECK(e.head.layer < m_geometry.layers && e.head.head < m_geometry.query_heads, InvalidInput,
                     "planted head (" + std::to_string(e.head.layer) + ", " + std::to_string(e.head.head) +
                         ") outside the model");
        HEADKV_CHECK(e.strength >= 0.0 && e.strength <= 1.0, InvalidInput, "planted strength must lie in [0, 1]");
        HEADKV_CHECK(seen.insert(e.head).second, InvalidInput, "head planted twice");
        m_strength[e.head.layer * m_geometry.query_heads + e.head.head] = e.strength;
    }
}

bool SyntheticModel::is_masked(const HeadId& head) const {
    return std::binary_search(m_masked.begin(), m_masked.end(), head);
}

double SyntheticModel::strength(const HeadId& head) const {
    return m_strength[head.layer * m_geometry.query_heads + head.head];
}

SyntheticModel SyntheticModel::with_masked(const std::vector<HeadId>& heads) const {
    for (const auto& h : heads) {
        HEADKV_CHECK(h.layer < m_geometry.layers && h.head < m_geometry.query_heads, InvalidInput,
                     "masked head (" + std::to_string(h.layer) + ", " + std::to_string(h.head) + ") outside the model");
    }
    SyntheticModel out = *this;
    out.m_masked.insert(out.m_masked.end(), heads.begin(), heads.end());
    std::sort(out.m_masked.begin(), out.m_masked.end());
    out.m_masked.erase(std::unique(out.m_masked.begin(), out.m_masked.end()), out.m_masked.end());
    return out;
}

SyntheticModel build_synthetic_model(const ModelGeometry& geometry, const PlantedHeadSet& planted, std::uint64_t seed,
                                     const BehaviorParams& params) {
    return SyntheticModel(geometry, planted, seed, params);
}

SyntheticModel mask_heads(const SyntheticModel& model, const std::vector<HeadId>& heads) {
    return model.with_masked(heads);
}

AttentionTrace::AttentionTrace(std::size_t layers, std::size_t heads, std::size_t prompt_length)
    : m_layers(layers), m_heads(heads), m_prompt_length(prompt_length) {}

void AttentionTrace::push_step(std::int64_t token, Matrix rows) {
    const std::size_t t = m_steps.size();
    HEADKV_CHECK(rows.rows() == m_layers * m_heads && rows.cols() == m_prompt_length + t, InvalidInput,
                 "trace step " + std::to_string(t) + " must be " + std::to_string(m_layers * m_heads) + "x" +
                     std::to_string(m_prompt_length + t));
    m_tokens.push_back(token);
    m_steps.push_back(std::move(rows));
}

TracedSample generate_ocr_sample(const SyntheticModel& model, std::size_t index, std::uint64_t seed,
                                 const CorpusParams& params) {
    HEADKV_CHECK(params.grid_min >= 1 && params.grid_max >= params.grid_min, InvalidInput, "bad grid range");
    HEADKV_CHECK(params.cell_px_min >= 1 && params.cell_px_max >= params.cell_px_min, InvalidInput,
                 "bad cell pixel range");
    const auto& geometry = model.geometry();
    Rng rng(derive_seed(model.seed(), {kSampleTag, seed, index}));

    TracedSample out;
    auto& sample = out.sample;
    const auto grid_span = params.grid_max - params.grid_min + 1;
    sample.grid.rows = params.grid_min + rng.below(grid_span);
    sample.grid.cols = params.grid_min + rng.below(grid_span);
    const auto cell_span = params.cell_px_max - params.cell_px_min + 1;
    const std::size_t cell_h = params.cell_px_min + rng.below(cell_span);
    const std::size_t cell_w = params.cell_px_min + rng.below(cell_span);
    // The extra pixels keep cell borders off integer coordinates in general.
    sample.image_shape.height = sample.grid.rows * cell_h + rng.below(sample.grid.rows);
    sample.image_shape.width = sample.grid.cols * cell_w + rng.below(sample.grid.cols);
    sample.prompt_layout = make_prompt_layout(params.prefix_text, sample.grid, params.instruction_text);

    std::set<std::int64_t> used;
    for (std::size_t t = 0; t < params.tokens_per_sample; ++t) {
        std::int64_t token = 0;
        do {
            token = 100 + static_cast<std::int64_t>(rng.below(50000));
        } while (!used.insert(token).second);
        const auto& img = sample.image_shape;
        const auto bw = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(rng.uniform(0.5, 2.5) * static_cast<double>(cell_w))), 1, img.width);
        const auto bh = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(rng.uniform(0.4, 1.5) * static_cast<double>(cell_h))), 1, img.height);
        BBox box;
        box.x0 = rng.below(img.width - bw + 1);
        box.y0 = rng.below(img.height - bh + 1);
        box.x1 = box.x0 + bw;
        box.y1 = box.y0 + bh;
        sample.pairs.push_back({token, box});
    }

    const std::size_t lp = sample.prompt_length();
    out.trace = AttentionTrace(geometry.layers, geometry.query_heads, lp);
    for (std::size_t t = 0; t < sample.pairs.size(); ++t) {
        const auto& pair = sample.pairs[t];
        const auto region = find_image_tokens(
            sample.prompt_layout, match_bbox_to_patches(pair.bbox, sample.image_shape, sample.grid));
        Matrix rows(geometry.query_head_count(), lp + t);
        for (std::size_t l = 0; l < geometry.layers; ++l) {
            for (std::size_t h = 0; h < geometry.query_heads; ++h) {
                Rng row_rng(derive_seed(model.seed(), {kRowTag, seed, index, t, l, h}));
                fill_trace_row(model, {l, h}, sample.prompt_layout, region.positions, row_rng,
                               rows.row(l * geometry.query_heads + h));
            }
        }
        out.trace.push_step(pair.token, std::move(rows));
    }
    return out;
}

std::vector<TracedSample> generate_ocr_samples(const SyntheticModel& model, std::size_t n, std::uint64_t seed,
                                               const CorpusParams& params, std::size_t jobs) {
    HEADKV_CHECK(n >= 1, InvalidInput, "corpus needs at least one sample");
    std::vector<TracedSample> out(n);
    parallel_for(n, jobs, [&](std::size_t i) { out[i] = generate_ocr_sample(model, i, seed, params); });
    return out;
}

DecodeScenario make_decode_scenario(std::size_t prompt_len, std::size_t out_len, std::uint64_t seed) {
    HEADKV_CHECK(prompt_len >= 1, InvalidInput, "prompt must hold at least one token");
    auto g = static_cast<std::size_t>(std::floor(std::sqrt(0.9 * static_cast<double>(prompt_len))));
    g = std::max<std::size_t>(g, 1);
    while (g * g > prompt_len) {
        --g;
    }
    const std::size_t text = prompt_len - g * g;
    DecodeScenario out;
    out.grid = {g, g};
    out.image = {14 * g, 14 * g};
    out.prompt_layout = make_prompt_layout(text / 2, out.grid, text - text / 2);

    Rng rng(derive_seed(seed, {kScenarioTag}));
    for (std::size_t t = 0; t < out_len; ++t) {
        const std::size_t bw = std::min<std::size_t>(7 + rng.below(36), out.image.width);
        const std::size_t bh = std::min<std::size_t>(7 + rng.below(22), out.image.height);
        BBox box;
        box.x0 = rng.below(out.image.width - bw + 1);
        box.y0 = rng.below(out.image.height - bh + 1);
        box.x1 = box.x0 + bw;
        box.y1 = box.y0 + bh;
        out.targets.push_back(
            find_image_tokens(out.prompt_layout, match_bbox_to_patches(box, out.image, out.grid)));
    }
    return out;
}

DecodeInputs realize_decode(const SyntheticModel& model, const DecodeScenario& scenario, std::size_t window,
                            std::uint64_t seed) {
    const auto& geo = model.geometry();
    const auto& params = model.params();
    const std::size_t lp = scenario.prompt_layout.size();
    const std::size_t out_len = scenario.targets.size();
    const std::size_t total = lp + out_len;
    const std::size_t d = geo.head_dim;
    const std::size_t window_rows = std::min(window, lp);

    std::vector<Matrix> keys;
    keys.reserve(geo.kv_head_count());
    for (std::size_t l = 0; l < geo.layers; ++l) {
        for (std::size_t g = 0; g < geo.kv_heads; ++g) {
            Rng rng(derive_seed(seed, {kKeyTag, l, g}));
            Matrix k(total, d);
            for (std::size_t j = 0; j < total; ++j) {
                for (auto& v : k.row(j)) {
                    v = rng.normal();
                }
            }
            keys.push_back(std::move(k));
        }
    }

    std::vector<std::size_t> image_positions;
    for (std::size_t j = 0; j < lp; ++j) {
        if (scenario.prompt_layout[j] != kTextRole) {
            image_positions.push_back(j);
        }
    }

    DecodeInputs out;
    auto& prefill = out.prefill;
    prefill.layers = geo.layers;
    prefill.query_heads = geo.query_heads;
    prefill.kv_heads = geo.kv_heads;
    prefill.head_dim = d;
    prefill.window = window;
    for (const auto& k : keys) {
        prefill.keys.push_back(k.slice_rows(0, lp));
    }
    out.step_queries.assign(out_len, Matrix(geo.query_head_count(), d));
    out.step_keys.assign(out_len, Matrix(geo.kv_head_count(), d));
    for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t i = 0; i < geo.kv_head_count(); ++i) {
            const auto src = keys[i].row(lp + t);
            std::copy(src.begin(), src.end(), out.step_keys[t].row(i).begin());
        }
    }

    for (std::size_t l = 0; l < geo.layers; ++l) {
        for (std::size_t h = 0; h < geo.query_heads; ++h) {
            const HeadId head{l, h};
            const Matrix& head_keys = keys[l * geo.kv_heads + h / geo.group()];
            const bool masked = model.is_masked(head);
            const double strength = model.strength(head);

            // Stable per-head preferences: the first token plus a few anchors.
            std::vector<Intent> base{{0, params.sink_logit}};
            Rng anchor_rng(derive_seed(model.seed(), {kAnchorTag, l, h}));
            for (std::size_t a = 0; a < params.anchors && lp > 1; ++a) {
                const auto pos = 1 + static_cast<std::size_t>(anchor_rng.uniform() * static_cast<double>(lp - 1));
                base.push_back({pos, anchor_rng.uniform(params.anchor_logit_min, params.anchor_logit_max)});
            }

            Matrix window_q(window_rows, d);
            for (std::size_t i = 0; i < window_rows && !masked; ++i) {
                auto intents = base;
                if (strength > 0.0 && !image_positions.empty()) {
                    Rng glance_rng(derive_seed(seed, {kGlanceTag, l, h, i}));
                    for (std::size_t k = 0; k < params.glances; ++k) {
                        intents.push_back(
                            {image_positions[glance_rng.below(image_positions.size())], params.glance_logit});
                    }
                }
                Rng jitter(derive_seed(seed, {kJitterTag, l, h, i}));
                realize_query(intents, head_keys, params.query_jitter, jitter, window_q.row(i));
            }
            prefill.window_queries.push_back(std::move(window_q));

            for (std::size_t t = 0; t < out_len && !masked; ++t) {
                auto intents = base;
                Rng event(derive_seed(seed, {kEventTag, l, h, t}));
                if (event.uniform() < strength) {
                    for (auto pos : scenario.targets[t].positions) {
                        intents.push_back({pos, params.region_logit});
                    }
                }
                Rng jitter(derive_seed(seed, {kJitterTag, l, h, window_rows + t}));
                realize_query(intents, head_keys, params.query_jitter, jitter,
                              out.step_queries[t].row(l * geo.query_heads + h));
            }
        }
    }
    return out;
}

RetentionPolicy keep_all_policy() {
    return [](const cache::PrefillState& prefill) {
        cache::RetainedSets sets(prefill.layers * prefill.kv_heads);
        for (auto& s : sets) {
            s.resize(prefill.prompt_length());
            for (std::size_t j = 0; j < s.size(); ++j) {
                s[j] = j;
            }
        }
        return sets;
    };
}

RetentionPolicy plan_policy(alloc::BudgetPlan plan, std::size_t window) {
    return [plan = std::move(plan), window](const cache::PrefillState& prefill) {
        auto compressed = cache::compress_prefill(prefill, plan, window);
        cache::RetainedSets sets;
        sets.reserve(compressed.report.heads.size());
        for (auto& head : compressed.report.heads) {
            sets.push_back(std::move(head.kept));
        }
        return sets;
    };
}

DecodeRecord run_decode(const DecodeInputs& inputs, const RetentionPolicy& policy) {
    const auto& prefill = inputs.prefill;
    prefill.validate();
    auto compressed = cache::build_cache(prefill, policy(prefill));
    cache::DecodeSession session(std::move(compressed), cache::full_cache(prefill), prefill.query_heads);

    DecodeRecord record;
    record.prompt_length = prefill.prompt_length();
    record.out_length = inputs.step_queries.size();
    record.peak_retained = session.cache().total_slots();
    record.head_recall.assign(prefill.layers * prefill.query_heads, 0.0);
    record.min_recall = 1.0;
    double recall_sum = 0.0;
    for (std::size_t t = 0; t < inputs.step_queries.size(); ++t) {
        const auto stats = session.step(inputs.step_queries[t], inputs.step_keys[t]);
        record.step_recall.push_back(stats.recall);
        record.step_retained.push_back(stats.retained_slots);
        record.peak_retained = std::max(record.peak_retained, stats.retained_slots);
        record.slot_touches += stats.slot_touches;
        record.min_recall = std::min(record.min_recall, stats.recall);
        recall_sum += stats.recall;
        for (std::size_t i = 0; i < stats.head_recall.size(); ++i) {
            record.head_recall[i] += stats.head_recall[i];
        }
    }
    const double steps = static_cast<double>(std::max<std::size_t>(record.out_length, 1));
    record.mean_recall = record.out_length == 0 ? 1.0 : recall_sum / steps;
    for (auto& r : record.head_recall) {
        r = record.out_length == 0 ? 1.0 : r / steps;
    }
    return record;
}

DecodeRecord decode_with_cache(const SyntheticModel& model, std::size_t prompt_len, std::size_t out_len,
                               std::size_t window, const RetentionPolicy& policy, std::uint64_t seed) {
    HEADKV_CHECK(prompt_len >= window, InvalidInput,
                 "prompt length (" + std::to_string(prompt_len) + ") shorter than the observation window (" +
                     std::to_string(window) + ")");
    const auto scenario = make_decode_scenario(prompt_len, out_len, derive_seed(seed, {kScenarioTag}));
    return run_decode(realize_decode(model, scenario, window, seed), policy);
}

}  // namespace headkv::sim
