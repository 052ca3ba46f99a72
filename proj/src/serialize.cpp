// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "headkv/error.hpp"
#include "headkv/rng.hpp"

namespace headkv::io {

namespace {

template <class T>
T field(const json& obj, const char* name) {
    HEADKV_CHECK(obj.is_object() && obj.contains(name), InvalidInput, fmt::format("missing field \"{}\"", name));
    try {
        return obj.at(name).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(fmt::format("field \"{}\": {}", name, e.what()));
    }
}

json matrix_to_json(const tensor::Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

tensor::Matrix matrix_from_json(const json& rows, std::size_t cols) {
    HEADKV_CHECK(rows.is_array(), InvalidInput, "matrix must be an array of rows");
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        const auto values = r.get<std::vector<double>>();
        HEADKV_CHECK(values.size() == cols, InvalidInput,
                     fmt::format("matrix row has {} entries, expected {}", values.size(), cols));
        data.insert(data.end(), values.begin(), values.end());
    }
    return tensor::Matrix(rows.size(), cols, std::move(data));
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    HEADKV_CHECK(in.good(), IoError, "cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    HEADKV_CHECK(out.good(), IoError, "cannot write " + path.string());
    out << text;
    out.close();
    HEADKV_CHECK(!out.fail(), IoError, "write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
    write_text_file(path, value.dump(2) + "\n");
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

std::uint64_t digest(const std::string& text) { return fnv1a64(text.data(), text.size()); }

json sample_to_json(const sim::TracedSample& ts) {
    const auto& s = ts.sample;
    const auto& trace = ts.trace;
    json pairs = json::array();
    for (const auto& p : s.pairs) {
        pairs.push_back({{"token", p.token}, {"bbox", {p.bbox.x0, p.bbox.y0, p.bbox.x1, p.bbox.y1}}});
    }
    json rows = json::array();
    for (std::size_t t = 0; t < trace.token_count(); ++t) {
        for (std::size_t l = 0; l < trace.layers(); ++l) {
            for (std::size_t h = 0; h < trace.heads(); ++h) {
                const auto r = trace.row(t, l, h);
                rows.push_back(std::vector<double>(r.begin(), r.end()));
            }
        }
    }
    return {
        {"image_shape", {{"height", s.image_shape.height}, {"width", s.image_shape.width}}},
        {"grid", {{"rows", s.grid.rows}, {"cols", s.grid.cols}}},
        {"pairs", std::move(pairs)},
        {"prompt_layout", s.prompt_layout},
        {"layers", trace.layers()},
        {"heads", trace.heads()},
        {"output_tokens", trace.output_tokens()},
        {"rows", std::move(rows)},
    };
}

sim::TracedSample sample_from_json(const json& record) {
    sim::TracedSample out;
    auto& s = out.sample;
    const auto shape = field<json>(record, "image_shape");
    s.image_shape = {field<std::size_t>(shape, "height"), field<std::size_t>(shape, "width")};
    const auto grid = field<json>(record, "grid");
    s.grid = {field<std::size_t>(grid, "rows"), field<std::size_t>(grid, "cols")};
    for (const auto& p : field<json>(record, "pairs")) {
        const auto box = field<std::vector<std::size_t>>(p, "bbox");
        HEADKV_CHECK(box.size() == 4, InvalidInput, "bbox must have four coordinates");
        s.pairs.push_back({field<std::int64_t>(p, "token"), {box[0], box[1], box[2], box[3]}});
    }
    s.prompt_layout = field<std::vector<std::int32_t>>(record, "prompt_layout");
    validate(s);

    const auto layers = field<std::size_t>(record, "layers");
    const auto heads = field<std::size_t>(record, "heads");
    const auto tokens = field<std::vector<std::int64_t>>(record, "output_tokens");
    const auto rows = field<json>(record, "rows");
    HEADKV_CHECK(rows.is_array() && rows.size() == tokens.size() * layers * heads, InvalidInput,
                 fmt::format("expected {} attention rows", tokens.size() * layers * heads));
    out.trace = sim::AttentionTrace(layers, heads, s.prompt_length());
    std::size_t next = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        json step = json::array();
        for (std::size_t i = 0; i < layers * heads; ++i) {
            step.push_back(rows[next++]);
        }
        out.trace.push_step(tokens[t], matrix_from_json(step, s.prompt_length() + t));
    }
    return out;
}

void write_corpus(const std::filesystem::path& dir, std::span<const sim::TracedSample> corpus) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        write_text_file(dir / fmt::format("sample_{:05d}.json", i), sample_to_json(corpus[i]).dump() + "\n");
    }
}

std::vector<sim::TracedSample> read_corpus(const std::filesystem::path& dir) {
    HEADKV_CHECK(std::filesystem::is_directory(dir), IoError, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("sample_") && name.ends_with(".json")) {
            files.push_back(entry.path());
        }
    }
    HEADKV_CHECK(!files.empty(), IoError, "no sample_*.json files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<sim::TracedSample> out;
    for (const auto& f : files) {
        try {
            out.push_back(sample_from_json(read_json_file(f)));
        } catch (const InvalidInput& e) {
            throw InvalidInput(f.string() + ": " + e.what());
        }
    }
    return out;
}

std::uint64_t corpus_digest(std::span<const sim::TracedSample> corpus) {
    std::uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& s : corpus) {
        const auto text = sample_to_json(s).dump();
        h = fnv1a64(text.data(), text.size(), h);
    }
    return h;
}

json scores_to_json(const HeadScoreMatrix& scores) {
    return {
        {"layers", scores.layers()},
        {"heads", scores.heads()},
        {"scores", scores.values()},
        {"normalization", scores.normalization},
        {"corpus_tokens", scores.corpus_tokens},
    };
}

HeadScoreMatrix scores_from_json(const json& value) {
    HeadScoreMatrix out(field<std::size_t>(value, "layers"), field<std::size_t>(value, "heads"),
                        field<std::vector<double>>(value, "scores"));
    if (value.contains("normalization")) {
        out.normalization = field<std::string>(value, "normalization");
    }
    if (value.contains("corpus_tokens")) {
        out.corpus_tokens = field<std::size_t>(value, "corpus_tokens");
    }
    return out;
}

json plan_to_json(const alloc::BudgetPlan& plan, const std::string& score_file_hash) {
    json rows = json::array();
    for (std::size_t l = 0; l < plan.layers; ++l) {
        std::vector<std::size_t> row(plan.budgets.begin() + static_cast<std::ptrdiff_t>(l * plan.kv_heads),
                                     plan.budgets.begin() + static_cast<std::ptrdiff_t>((l + 1) * plan.kv_heads));
        rows.push_back(std::move(row));
    }
    return {
        {"budget_B", plan.total_budget},
        {"w", plan.window},
        {"rho", plan.rho},
        {"plan", std::move(rows)},
        {"allocator", plan.allocator},
        {"score_file_hash", score_file_hash},
        {"warnings", plan.warnings},
    };
}

PlanFile plan_from_json(const json& value) {
    PlanFile out;
    auto& plan = out.plan;
    plan.total_budget = field<std::size_t>(value, "budget_B");
    plan.window = field<std::size_t>(value, "w");
    plan.rho = field<double>(value, "rho");
    plan.allocator = field<std::string>(value, "allocator");
    out.score_file_hash = value.contains("score_file_hash") ? field<std::string>(value, "score_file_hash") : "";
    const auto rows = field<std::vector<std::vector<std::size_t>>>(value, "plan");
    HEADKV_CHECK(!rows.empty() && !rows.front().empty(), InvalidInput, "plan must be a non-empty L x H array");
    plan.layers = rows.size();
    plan.kv_heads = rows.front().size();
    for (const auto& r : rows) {
        HEADKV_CHECK(r.size() == plan.kv_heads, InvalidInput, "plan rows differ in length");
        plan.budgets.insert(plan.budgets.end(), r.begin(), r.end());
    }
    HEADKV_CHECK(plan.sum() == plan.total_budget, InvalidInput,
                 fmt::format("plan sums to {}, expected budget_B = {}", plan.sum(), plan.total_budget));
    return out;
}

json prefill_to_json(const cache::PrefillState& prefill) {
    json keys = json::array();
    for (const auto& k : prefill.keys) {
        keys.push_back(matrix_to_json(k));
    }
    json queries = json::array();
    for (const auto& q : prefill.window_queries) {
        queries.push_back(matrix_to_json(q));
    }
    return {
        {"layers", prefill.layers},
        {"query_heads", prefill.query_heads},
        {"kv_heads", prefill.kv_heads},
        {"head_dim", prefill.head_dim},
        {"window", prefill.window},
        {"keys", std::move(keys)},
        {"window_queries", std::move(queries)},
    };
}

cache::PrefillState prefill_from_json(const json& value) {
    cache::PrefillState out;
    out.layers = field<std::size_t>(value, "layers");
    out.query_heads = field<std::size_t>(value, "query_heads");
    out.kv_heads = field<std::size_t>(value, "kv_heads");
    out.head_dim = field<std::size_t>(value, "head_dim");
    out.window = field<std::size_t>(value, "window");
    for (const auto& k : field<json>(value, "keys")) {
        out.keys.push_back(matrix_from_json(k, out.head_dim));
    }
    for (const auto& q : field<json>(value, "window_queries")) {
        out.window_queries.push_back(matrix_from_json(q, out.head_dim));
    }
    out.validate();
    return out;
}

json report_to_json(const cache::EvictionReport& report) {
    json heads = json::array();
    for (std::size_t i = 0; i < report.heads.size(); ++i) {
        const auto& h = report.heads[i];
        heads.push_back({
            {"layer", i / report.kv_heads},
            {"kv_head", i % report.kv_heads},
            {"budget", h.budget},
            {"kept", h.kept},
            {"window_scores", h.window_scores},
            {"clamped", h.clamped},
        });
    }
    return {
        {"layers", report.layers},
        {"kv_heads", report.kv_heads},
        {"prompt_length", report.prompt_length},
        {"window", report.window},
        {"total_kept", report.total_kept},
        {"heads", std::move(heads)},
    };
}

void write_report_csv(std::ostream& out, const cache::EvictionReport& report) {
    out << "layer,kv_head,budget,position,window_score\n";
    for (std::size_t i = 0; i < report.heads.size(); ++i) {
        const auto& h = report.heads[i];
        for (auto pos : h.kept) {
            // Positions inside the observation window carry no score.
            const bool scored = pos < h.window_scores.size();
            out << fmt::format("{},{},{},{},{}\n", i / report.kv_heads, i % report.kv_heads, h.budget, pos,
                               scored ? fmt::format("{:.17g}", h.window_scores[pos]) : std::string());
        }
    }
}

}  // namespace headkv::io
