#include "factlab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"
#include "factlab/rng.hpp"
#include "factlab/svg.hpp"

namespace factlab {

double head_logit_diff(const Checkpoint& ckpt, const ResidualTrace& trace, int layer, int head,
                       int mem_token, int ctx_token) {
    const auto& c = ckpt.config;
    if (layer < 0 || layer >= c.n_layers || head < 0 || head >= c.n_heads)
        throw ConfigError("head_logit_diff: layer/head out of range");
    if (mem_token < 0 || mem_token >= c.vocab_size || ctx_token < 0 ||
        ctx_token >= c.vocab_size)
        throw ConfigError("head_logit_diff: token out of range");

    const int D = c.d_model;
    const int dh = c.d_head();
    const double* r = trace.r(layer, head);
    const float* w_o_h = ckpt.w_o_head(layer, head); // [dh][D]
    const float* w_u = ckpt.at(ckpt.layout.w_u);     // [D][V]

    // contribution = r^h . W_O^h . (W_U[:,mem] - W_U[:,ctx])
    double diff = 0.0;
    for (int i = 0; i < D; ++i) {
        double proj = 0.0;
        for (int d = 0; d < dh; ++d)
            proj += r[d] * static_cast<double>(w_o_h[static_cast<size_t>(d) * D + i]);
        const float* urow = w_u + static_cast<size_t>(i) * c.vocab_size;
        diff += proj * (static_cast<double>(urow[mem_token]) - static_cast<double>(urow[ctx_token]));
    }
    return diff;
}

AttributionMap attribution_map(const Checkpoint& ckpt,
                               const std::vector<PromptInstance>& prompts, int batch_size) {
    if (prompts.empty()) throw ConfigError("attribution_map: empty prompt batch");
    if (batch_size < 1) throw ConfigError("attribution_map: batch_size must be >= 1");
    const auto& c = ckpt.config;

    AttributionMap map;
    map.n_layers = c.n_layers;
    map.n_heads = c.n_heads;
    map.grid.assign(static_cast<size_t>(c.n_layers) * c.n_heads, 0.0);

    std::vector<const PromptInstance*> usable;
    for (const auto& p : prompts) {
        bool ok = !p.tokens.empty() &&
                  static_cast<int>(p.tokens.size()) <= c.max_context &&
                  p.ctx_token >= 0 && p.ctx_token < c.vocab_size && p.mem_token >= 0 &&
                  p.mem_token < c.vocab_size;
        for (int t : p.tokens) {
            if (t < 0 || t >= c.vocab_size) ok = false;
        }
        if (!ok) {
            map.warnings.push_back("skipped prompt " + std::to_string(p.id) +
                                   ": not tokenizable for this model");
            continue;
        }
        usable.push_back(&p);
    }
    if (usable.empty()) throw ConfigError("attribution_map: no usable prompts");

    // group by prompt length; traces are captured at the final position
    std::map<size_t, std::vector<const PromptInstance*>> by_len;
    for (const auto* p : usable) by_len[p->tokens.size()].push_back(p);

    for (const auto& [len, group] : by_len) {
        (void)len;
        for (size_t start = 0; start < group.size(); start += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(group.size(), start + static_cast<size_t>(batch_size));
            std::vector<std::vector<int>> batch;
            for (size_t k = start; k < end; ++k) batch.push_back(group[k]->tokens);
            const auto traces = forward_traces(ckpt, batch, /*capture_at=*/-1);
            for (size_t k = start; k < end; ++k) {
                const auto* p = group[k];
                const auto& tr = traces[k - start];
                for (int l = 0; l < c.n_layers; ++l) {
                    for (int h = 0; h < c.n_heads; ++h) {
                        map.at(l, h) += head_logit_diff(ckpt, tr, l, h, p->mem_token, p->ctx_token);
                    }
                }
            }
        }
    }
    map.n_prompts = static_cast<int>(usable.size());
    for (auto& v : map.grid) v /= static_cast<double>(map.n_prompts);
    return map;
}

SelectionSet sample_selection_set(const std::vector<BehaviorRecord>& records,
                                  const std::vector<PromptInstance>& prompts,
                                  const BinAssignment& bins, int per_bin, uint64_t seed) {
    if (per_bin < 1) throw ConfigError("sample_selection_set: per_bin must be >= 1");
    std::map<int, const PromptInstance*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;

    // bucket un-intervened records by (bin, class)
    std::vector<std::vector<int>> ctx_by_bin(static_cast<size_t>(bins.n_bins));
    std::vector<std::vector<int>> mem_by_bin(static_cast<size_t>(bins.n_bins));
    for (const auto& rec : records) {
        auto it = by_id.find(rec.prompt_id);
        if (it == by_id.end()) continue;
        const int b = bins.bin(bin_key_for(*it->second, BinCriterion::Country));
        if (rec.cls == AnswerClass::InContext)
            ctx_by_bin[static_cast<size_t>(b)].push_back(rec.prompt_id);
        else if (rec.cls == AnswerClass::Memorized)
            mem_by_bin[static_cast<size_t>(b)].push_back(rec.prompt_id);
    }

    SelectionSet out;
    Rng rng(derive_seed(seed, /*stage_tag=*/0x73656c656374ull)); // "select"
    auto draw = [&](std::vector<int>& pool, std::vector<int>& dst, int bin, const char* cls) {
        std::sort(pool.begin(), pool.end());
        if (static_cast<int>(pool.size()) < per_bin) {
            out.warnings.push_back("bin " + std::to_string(bin) + " has only " +
                                   std::to_string(pool.size()) + " " + cls +
                                   " examples (wanted " + std::to_string(per_bin) + ")");
            dst.insert(dst.end(), pool.begin(), pool.end());
            return;
        }
        rng.shuffle(pool);
        dst.insert(dst.end(), pool.begin(), pool.begin() + per_bin);
    };
    for (int b = 0; b < bins.n_bins; ++b) {
        draw(ctx_by_bin[static_cast<size_t>(b)], out.in_context_ids, b, "in-context");
        draw(mem_by_bin[static_cast<size_t>(b)], out.memorized_ids, b, "memorized");
    }
    if (out.in_context_ids.empty())
        throw RuntimeFailure("selection set: no in-context-predicting prompts at all");
    if (out.memorized_ids.empty())
        throw RuntimeFailure("selection set: no memorized-predicting prompts at all");
    std::sort(out.in_context_ids.begin(), out.in_context_ids.end());
    std::sort(out.memorized_ids.begin(), out.memorized_ids.end());
    return out;
}

HeadSelection select_heads(const std::vector<AttributionMap>& batch_maps) {
    if (batch_maps.size() < 2)
        throw ConfigError("select_heads: need at least 2 batch maps");
    const int L = batch_maps.front().n_layers;
    const int H = batch_maps.front().n_heads;
    for (const auto& m : batch_maps) {
        if (m.n_layers != L || m.n_heads != H)
            throw ConfigError("select_heads: maps have mismatched shapes");
    }

    HeadSelection sel;
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            double mean = 0.0;
            for (const auto& m : batch_maps) mean += m.at(l, h);
            mean /= static_cast<double>(batch_maps.size());
            sel.ranked.push_back({l, h, mean});
        }
    }
    std::stable_sort(sel.ranked.begin(), sel.ranked.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });

    bool any_nonzero = false;
    for (const auto& s : sel.ranked) {
        if (s.score != 0.0) any_nonzero = true;
    }
    if (!any_nonzero)
        throw RuntimeFailure("select_heads: all head scores are zero (degenerate model)");

    sel.memory_head = sel.ranked.front();
    sel.context_head = sel.ranked.back();
    return sel;
}

std::string HeadSelection::to_json() const {
    nlohmann::json j;
    j["schema"] = "factlab.heads.v1";
    j["memory_head"] = {{"layer", memory_head.layer},
                        {"head", memory_head.head},
                        {"score", memory_head.score}};
    j["context_head"] = {{"layer", context_head.layer},
                         {"head", context_head.head},
                         {"score", context_head.score}};
    auto& arr = j["ranked"] = nlohmann::json::array();
    for (const auto& s : ranked) arr.push_back({{"layer", s.layer}, {"head", s.head}, {"score", s.score}});
    return j.dump(2) + "\n";
}

HeadSelection HeadSelection::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "factlab.heads.v1")
        throw IoError("head-selection file has unknown schema tag");
    HeadSelection sel;
    auto scored = [](const nlohmann::json& js) {
        return HeadSelection::Scored{js.at("layer").get<int>(), js.at("head").get<int>(),
                                     js.at("score").get<double>()};
    };
    sel.memory_head = scored(j.at("memory_head"));
    sel.context_head = scored(j.at("context_head"));
    for (const auto& js : j.at("ranked")) sel.ranked.push_back(scored(js));
    return sel;
}

std::string emit_heatmap(const AttributionMap& map, double fixed_range) {
    return svg_heatmap(map.grid, map.n_layers, map.n_heads, fixed_range,
                       "head attribution (red = memorized, blue = in-context)");
}

std::string attribution_to_tsv(const AttributionMap& map) {
    std::string out = "# schema: factlab.attribution.v1\tn_prompts=" +
                      std::to_string(map.n_prompts) + "\n";
    out += "layer\thead\tlogit_diff\n";
    for (int l = 0; l < map.n_layers; ++l) {
        for (int h = 0; h < map.n_heads; ++h) {
            out += std::to_string(l) + '\t' + std::to_string(h) + '\t' + fmt_g(map.at(l, h)) + '\n';
        }
    }
    return out;
}

} // namespace factlab
