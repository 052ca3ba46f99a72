// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/bench.hpp"

#include <algorithm>
#include <initializer_list>
#include <string_view>

#include <fmt/format.h>

#include "headkv/error.hpp"
#include "headkv/parallel.hpp"
#include "headkv/rng.hpp"
#include "headkv/serialize.hpp"

namespace headkv::bench {

using nlohmann::json;

namespace {

enum SeedTag : std::uint64_t {
    kModelTag = 1,
    kPlantTag = 2,
    kCorpusTag = 3,
    kDecodeTag = 4,
    kPolicyTag = 5,
    kMaskTag = 6,
};

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
    HEADKV_CHECK(obj.is_object(), InvalidInput, fmt::format("config section \"{}\" must be an object", where));
    for (const auto& [key, _] : obj.items()) {
        HEADKV_CHECK(std::find(allowed.begin(), allowed.end(), key) != allowed.end(), InvalidInput,
                     fmt::format("unknown config key \"{}\" in \"{}\"", key, where));
    }
}

template <class T>
void read_into(const json& obj, const char* key, T& target) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        target = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(fmt::format("config key \"{}\": {}", key, e.what()));
    }
}

std::string fmt_real(double v) { return fmt::format("{:.10f}", v); }

std::size_t recovery_k(const ExperimentConfig& config) {
    return sim::head_count_for_fraction(config.geometry, config.planted_fraction);
}

template <class Row, class Fn>
std::vector<Row> per_seed(const ExperimentConfig& config, Fn&& fn) {
    config.validate();
    std::vector<std::vector<Row>> parts(config.seeds);
    parallel_for(config.seeds, config.jobs, [&](std::size_t k) { parts[k] = fn(k); });
    std::vector<Row> out;
    for (auto& p : parts) {
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

ResultRow make_row(const SeedRun& run, const CellResult& cell, alloc::Policy policy, std::size_t budget) {
    ResultRow row;
    row.policy = std::string(alloc::policy_name(policy));
    row.budget = budget;
    row.total_budget = cell.plan.total_budget;
    if (policy == alloc::Policy::SparseMM || policy == alloc::Policy::Random) {
        row.rho = cell.plan.rho;
    }
    row.seed_index = run.index;
    row.seed = run.seed;
    row.recall = cell.record.mean_recall;
    row.min_recall = cell.record.min_recall;
    row.peak_slots = cell.record.peak_retained;
    row.slot_touches = cell.record.slot_touches;
    row.planted_precision = run.recovery.precision;
    row.planted_recall = run.recovery.recall;
    return row;
}

}  // namespace

void ExperimentConfig::validate() const {
    geometry.validate();
    HEADKV_CHECK(planted_fraction >= 0.0 && planted_fraction <= 1.0, InvalidInput,
                 "planted fraction must lie in [0, 1]");
    HEADKV_CHECK(planted_strength >= 0.0 && planted_strength <= 1.0, InvalidInput,
                 "planted strength must lie in [0, 1]");
    HEADKV_CHECK(corpus_size >= 1, InvalidInput, "corpus size must be at least 1");
    HEADKV_CHECK(window >= 1 && prompt_len >= window, InvalidInput, "prompt length must be at least the window");
    HEADKV_CHECK(out_len >= 1, InvalidInput, "output length must be at least 1");
    HEADKV_CHECK(rho >= 0.0 && rho <= 1.0, InvalidInput, "rho must lie in [0, 1]");
    for (double r : rhos) {
        HEADKV_CHECK(r >= 0.0 && r <= 1.0, InvalidInput, fmt::format("rho {} outside [0, 1]", r));
    }
    for (auto b : budgets) {
        HEADKV_CHECK(b >= window, InvalidInput, fmt::format("per-head budget {} below the window {}", b, window));
    }
    HEADKV_CHECK(rho_budget >= window, InvalidInput, "rho budget below the window");
    for (double f : mask_fractions) {
        HEADKV_CHECK(f >= 0.0 && f <= 1.0, InvalidInput, fmt::format("mask fraction {} outside [0, 1]", f));
    }
    HEADKV_CHECK(seeds >= 1, InvalidInput, "at least one seed required");
    HEADKV_CHECK(jobs >= 1, InvalidInput, "jobs must be at least 1");
}

json config_to_json(const ExperimentConfig& c) {
    std::vector<std::string> policies;
    for (auto p : c.policies) {
        policies.emplace_back(alloc::policy_name(p));
    }
    const auto& b = c.behavior;
    return {
        {"geometry",
         {{"layers", c.geometry.layers},
          {"query_heads", c.geometry.query_heads},
          {"kv_heads", c.geometry.kv_heads},
          {"head_dim", c.geometry.head_dim}}},
        {"planted", {{"fraction", c.planted_fraction}, {"strength", c.planted_strength}}},
        {"behavior",
         {{"text_weight", b.text_weight},
          {"image_weight", b.image_weight},
          {"peak_ratio", b.peak_ratio},
          {"sink_logit", b.sink_logit},
          {"anchors", b.anchors},
          {"anchor_logit_min", b.anchor_logit_min},
          {"anchor_logit_max", b.anchor_logit_max},
          {"region_logit", b.region_logit},
          {"glances", b.glances},
          {"glance_logit", b.glance_logit},
          {"query_jitter", b.query_jitter}}},
        {"corpus",
         {{"size", c.corpus_size},
          {"grid_min", c.corpus.grid_min},
          {"grid_max", c.corpus.grid_max},
          {"prefix_text", c.corpus.prefix_text},
          {"instruction_text", c.corpus.instruction_text},
          {"tokens_per_sample", c.corpus.tokens_per_sample},
          {"cell_px_min", c.corpus.cell_px_min},
          {"cell_px_max", c.corpus.cell_px_max}}},
        {"decode", {{"prompt_len", c.prompt_len}, {"out_len", c.out_len}, {"window", c.window}}},
        {"rho", c.rho},
        {"budgets", c.budgets},
        {"policies", policies},
        {"rhos", c.rhos},
        {"rho_budget", c.rho_budget},
        {"mask_fractions", c.mask_fractions},
        {"cost", {{"lengths", c.cost_lengths}, {"out_len", c.cost_out_len}, {"budget", c.cost_budget}}},
        {"seed", c.seed},
        {"seeds", c.seeds},
        {"jobs", c.jobs},
        {"out_dir", c.out_dir},
    };
}

ExperimentConfig config_from_json(const json& value) {
    ExperimentConfig c;
    check_keys(value, "root",
               {"geometry", "planted", "behavior", "corpus", "decode", "rho", "budgets", "policies", "rhos",
                "rho_budget", "mask_fractions", "cost", "seed", "seeds", "jobs", "out_dir"});
    if (value.contains("geometry")) {
        const auto& g = value["geometry"];
        check_keys(g, "geometry", {"layers", "query_heads", "kv_heads", "head_dim"});
        read_into(g, "layers", c.geometry.layers);
        read_into(g, "query_heads", c.geometry.query_heads);
        read_into(g, "kv_heads", c.geometry.kv_heads);
        read_into(g, "head_dim", c.geometry.head_dim);
    }
    if (value.contains("planted")) {
        const auto& p = value["planted"];
        check_keys(p, "planted", {"fraction", "strength"});
        read_into(p, "fraction", c.planted_fraction);
        read_into(p, "strength", c.planted_strength);
    }
    if (value.contains("behavior")) {
        const auto& b = value["behavior"];
        check_keys(b, "behavior",
                   {"text_weight", "image_weight", "peak_ratio", "sink_logit", "anchors", "anchor_logit_min",
                    "anchor_logit_max", "region_logit", "glances", "glance_logit", "query_jitter"});
        auto& t = c.behavior;
        read_into(b, "text_weight", t.text_weight);
        read_into(b, "image_weight", t.image_weight);
        read_into(b, "peak_ratio", t.peak_ratio);
        read_into(b, "sink_logit", t.sink_logit);
        read_into(b, "anchors", t.anchors);
        read_into(b, "anchor_logit_min", t.anchor_logit_min);
        read_into(b, "anchor_logit_max", t.anchor_logit_max);
        read_into(b, "region_logit", t.region_logit);
        read_into(b, "glances", t.glances);
        read_into(b, "glance_logit", t.glance_logit);
        read_into(b, "query_jitter", t.query_jitter);
    }
    if (value.contains("corpus")) {
        const auto& s = value["corpus"];
        check_keys(s, "corpus",
                   {"size", "grid_min", "grid_max", "prefix_text", "instruction_text", "tokens_per_sample",
                    "cell_px_min", "cell_px_max"});
        read_into(s, "size", c.corpus_size);
        read_into(s, "grid_min", c.corpus.grid_min);
        read_into(s, "grid_max", c.corpus.grid_max);
        read_into(s, "prefix_text", c.corpus.prefix_text);
        read_into(s, "instruction_text", c.corpus.instruction_text);
        read_into(s, "tokens_per_sample", c.corpus.tokens_per_sample);
        read_into(s, "cell_px_min", c.corpus.cell_px_min);
        read_into(s, "cell_px_max", c.corpus.cell_px_max);
    }
    if (value.contains("decode")) {
        const auto& d = value["decode"];
        check_keys(d, "decode", {"prompt_len", "out_len", "window"});
        read_into(d, "prompt_len", c.prompt_len);
        read_into(d, "out_len", c.out_len);
        read_into(d, "window", c.window);
    }
    read_into(value, "rho", c.rho);
    read_into(value, "budgets", c.budgets);
    if (value.contains("policies")) {
        std::vector<std::string> names;
        read_into(value, "policies", names);
        c.policies.clear();
        for (const auto& n : names) {
            c.policies.push_back(alloc::parse_policy(n));
        }
    }
    read_into(value, "rhos", c.rhos);
    read_into(value, "rho_budget", c.rho_budget);
    read_into(value, "mask_fractions", c.mask_fractions);
    if (value.contains("cost")) {
        const auto& k = value["cost"];
        check_keys(k, "cost", {"lengths", "out_len", "budget"});
        read_into(k, "lengths", c.cost_lengths);
        read_into(k, "out_len", c.cost_out_len);
        read_into(k, "budget", c.cost_budget);
    }
    read_into(value, "seed", c.seed);
    read_into(value, "seeds", c.seeds);
    read_into(value, "jobs", c.jobs);
    read_into(value, "out_dir", c.out_dir);
    c.validate();
    return c;
}

std::uint64_t run_seed(const ExperimentConfig& config, std::size_t index) { return derive_seed(config.seed, {index}); }

sim::SyntheticModel make_model(const ExperimentConfig& config, std::uint64_t seed) {
    const auto count = sim::head_count_for_fraction(config.geometry, config.planted_fraction);
    auto planted = sim::PlantedHeadSet::sample(config.geometry, count, config.planted_strength,
                                               derive_seed(seed, {kPlantTag}));
    return sim::build_synthetic_model(config.geometry, planted, derive_seed(seed, {kModelTag}), config.behavior);
}

std::uint64_t corpus_seed(std::uint64_t seed) { return derive_seed(seed, {kCorpusTag}); }

std::uint64_t decode_seed(std::uint64_t seed) { return derive_seed(seed, {kDecodeTag}); }

SeedRun prepare_seed(const ExperimentConfig& config, std::size_t index) {
    SeedRun run;
    run.index = index;
    run.seed = run_seed(config, index);
    run.model.emplace(make_model(config, run.seed));
    run.corpus_seed = corpus_seed(run.seed);
    const auto corpus = sim::generate_ocr_samples(*run.model, config.corpus_size, run.corpus_seed, config.corpus);
    run.chase = chaser::chase_corpus(corpus);
    run.kv_scores = chaser::aggregate_gqa_scores(run.chase.scores, config.geometry.group());
    run.recovery = chaser::planted_recovery(run.chase.scores, run.model->planted(), recovery_k(config));
    const auto dseed = decode_seed(run.seed);
    const auto scenario = sim::make_decode_scenario(config.prompt_len, config.out_len, dseed);
    run.decode = sim::realize_decode(*run.model, scenario, config.window, dseed);
    return run;
}

CellResult run_cell(const ExperimentConfig& config, const SeedRun& run, alloc::Policy policy,
                    std::size_t per_head_budget, double rho) {
    const alloc::AllocationConfig alloc_config{per_head_budget * config.geometry.kv_head_count(), config.window, rho};
    const auto policy_seed = derive_seed(run.seed, {kPolicyTag, static_cast<std::uint64_t>(policy), per_head_budget});
    CellResult out;
    out.plan = alloc::allocate(policy, run.kv_scores, alloc_config, policy_seed);
    out.record = sim::run_decode(run.decode, sim::plan_policy(out.plan, config.window));
    return out;
}

std::vector<ResultRow> run_budget_sweep(const ExperimentConfig& config) {
    return per_seed<ResultRow>(config, [&](std::size_t k) {
        const auto run = prepare_seed(config, k);
        std::vector<ResultRow> rows;
        for (auto budget : config.budgets) {
            for (auto policy : config.policies) {
                rows.push_back(make_row(run, run_cell(config, run, policy, budget, config.rho), policy, budget));
            }
        }
        return rows;
    });
}

std::vector<ResultRow> run_rho_sweep(const ExperimentConfig& config) {
    return per_seed<ResultRow>(config, [&](std::size_t k) {
        const auto run = prepare_seed(config, k);
        std::vector<ResultRow> rows;
        for (double rho : config.rhos) {
            rows.push_back(make_row(run, run_cell(config, run, alloc::Policy::SparseMM, config.rho_budget, rho),
                                    alloc::Policy::SparseMM, config.rho_budget));
        }
        rows.push_back(make_row(run, run_cell(config, run, alloc::Policy::Uniform, config.rho_budget, config.rho),
                                alloc::Policy::Uniform, config.rho_budget));
        return rows;
    });
}

std::vector<MaskRow> run_masking_study(const ExperimentConfig& config) {
    return per_seed<MaskRow>(config, [&](std::size_t k) {
        const auto seed = run_seed(config, k);
        const auto model = make_model(config, seed);
        const auto cseed = corpus_seed(seed);
        const auto rk = recovery_k(config);

        auto measure = [&](const sim::SyntheticModel& m, const std::string& selection, double fraction,
                           std::size_t masked) {
            const auto corpus = sim::generate_ocr_samples(m, config.corpus_size, cseed, config.corpus);
            const auto chase = chaser::chase_corpus(corpus);
            MaskRow row;
            row.seed_index = k;
            row.seed = seed;
            row.selection = selection;
            row.fraction = fraction;
            row.masked = masked;
            row.grounding = chaser::visual_grounding(corpus);
            row.planted_recall = chaser::planted_recovery(chase.scores, model.planted(), rk).recall;
            return std::make_pair(row, chase.scores);
        };

        std::vector<MaskRow> rows;
        auto [base, base_scores] = measure(model, "none", 0.0, 0);
        rows.push_back(base);
        const std::size_t n = config.geometry.query_head_count();
        for (double fraction : config.mask_fractions) {
            const auto count = sim::head_count_for_fraction(config.geometry, fraction);
            const auto top = top_heads(base_scores, count);

            Rng rng(derive_seed(seed, {kMaskTag, static_cast<std::uint64_t>(std::llround(fraction * 1e6))}));
            std::vector<std::size_t> ids(n);
            for (std::size_t i = 0; i < n; ++i) {
                ids[i] = i;
            }
            std::vector<HeadId> random;
            for (std::size_t i = 0; i < count; ++i) {
                std::swap(ids[i], ids[i + rng.below(n - i)]);
                random.push_back({ids[i] / config.geometry.query_heads, ids[i] % config.geometry.query_heads});
            }

            for (const auto& [name, heads] : {std::pair{"top", top}, std::pair{"random", random}}) {
                auto row = measure(sim::mask_heads(model, heads), name, fraction, count).first;
                row.grounding_drop = base.grounding - row.grounding;
                row.planted_recall_drop = base.planted_recall - row.planted_recall;
                rows.push_back(row);
            }
        }
        return rows;
    });
}

CostRow cost_row(std::size_t kv_heads, std::size_t prompt_len, std::size_t out_len, std::size_t budget) {
    HEADKV_CHECK(kv_heads >= 1 && prompt_len >= 1, InvalidInput, "cost model needs heads and a prompt");
    CostRow row;
    row.prompt_len = prompt_len;
    row.out_len = out_len;
    row.budget = budget;
    row.heads = kv_heads;
    const std::size_t kept = std::min(prompt_len, budget);
    row.full_peak = kv_heads * (prompt_len + out_len);
    row.compressed_peak = kv_heads * (kept + out_len);
    // Step t (1-based) reads every slot held after appending token t.
    const std::size_t appended = out_len * (out_len + 1) / 2;
    row.full_touches = kv_heads * (out_len * prompt_len + appended);
    row.compressed_touches = kv_heads * (out_len * kept + appended);
    row.peak_ratio = static_cast<double>(row.compressed_peak) / static_cast<double>(row.full_peak);
    row.touch_ratio = row.compressed_touches == 0
                          ? 1.0
                          : static_cast<double>(row.full_touches) / static_cast<double>(row.compressed_touches);
    row.cache_reduction = 1.0 - row.peak_ratio;
    return row;
}

std::vector<CostRow> run_cost_model(const ExperimentConfig& config) {
    config.validate();
    std::vector<CostRow> rows;
    for (auto lp : config.cost_lengths) {
        rows.push_back(cost_row(config.geometry.kv_head_count(), lp, config.cost_out_len, config.cost_budget));
    }
    return rows;
}

std::string to_csv(const std::vector<ResultRow>& rows) {
    std::string out =
        "policy,budget,total_budget,rho,seed_index,seed,recall,min_recall,peak_slots,slot_touches,"
        "planted_precision,planted_recall\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.policy, r.budget, r.total_budget,
                           r.rho ? fmt_real(*r.rho) : std::string(), r.seed_index, r.seed, fmt_real(r.recall),
                           fmt_real(r.min_recall), r.peak_slots, r.slot_touches, fmt_real(r.planted_precision),
                           fmt_real(r.planted_recall));
    }
    return out;
}

std::string to_csv(const std::vector<MaskRow>& rows) {
    std::string out =
        "seed_index,seed,selection,fraction,masked,grounding,grounding_drop,planted_recall,planted_recall_drop\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.seed_index, r.seed, r.selection, fmt_real(r.fraction),
                           r.masked, fmt_real(r.grounding), fmt_real(r.grounding_drop), fmt_real(r.planted_recall),
                           fmt_real(r.planted_recall_drop));
    }
    return out;
}

std::string to_csv(const std::vector<CostRow>& rows) {
    std::string out =
        "prompt_len,out_len,budget,heads,full_peak,compressed_peak,full_touches,compressed_touches,peak_ratio,"
        "touch_ratio,cache_reduction\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", r.prompt_len, r.out_len, r.budget, r.heads,
                           r.full_peak, r.compressed_peak, r.full_touches, r.compressed_touches,
                           fmt_real(r.peak_ratio), fmt_real(r.touch_ratio), fmt_real(r.cache_reduction));
    }
    return out;
}

json to_json(const std::vector<ResultRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"policy", r.policy},
                       {"budget", r.budget},
                       {"total_budget", r.total_budget},
                       {"rho", r.rho ? json(*r.rho) : json(nullptr)},
                       {"seed_index", r.seed_index},
                       {"seed", r.seed},
                       {"recall", r.recall},
                       {"min_recall", r.min_recall},
                       {"peak_slots", r.peak_slots},
                       {"slot_touches", r.slot_touches},
                       {"planted_precision", r.planted_precision},
                       {"planted_recall", r.planted_recall}});
    }
    return out;
}

json to_json(const std::vector<MaskRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"seed_index", r.seed_index},
                       {"seed", r.seed},
                       {"selection", r.selection},
                       {"fraction", r.fraction},
                       {"masked", r.masked},
                       {"grounding", r.grounding},
                       {"grounding_drop", r.grounding_drop},
                       {"planted_recall", r.planted_recall},
                       {"planted_recall_drop", r.planted_recall_drop}});
    }
    return out;
}

json to_json(const std::vector<CostRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"prompt_len", r.prompt_len},
                       {"out_len", r.out_len},
                       {"budget", r.budget},
                       {"heads", r.heads},
                       {"full_peak", r.full_peak},
                       {"compressed_peak", r.compressed_peak},
                       {"full_touches", r.full_touches},
                       {"compressed_touches", r.compressed_touches},
                       {"peak_ratio", r.peak_ratio},
                       {"touch_ratio", r.touch_ratio},
                       {"cache_reduction", r.cache_reduction}});
    }
    return out;
}

void write_table(const std::filesystem::path& dir, const std::string& name, const std::string& csv, const json& value) {
    io::write_text_file(dir / (name + ".csv"), csv);
    io::write_json_file(dir / (name + ".json"), value);
}

}  // namespace headkv::bench
