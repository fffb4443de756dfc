#include <algorithm>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"
#include "factlab/pipeline.hpp"
#include "factlab/reference.hpp"
#include "factlab/stats.hpp"
#include "factlab/svg.hpp"

namespace factlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBlue = "#2166ac";
constexpr const char* kRed = "#b2182b";
constexpr const char* kGray = "#777777";

struct SummaryCurve {
    std::vector<double> bins, p_ctx, p_mem, p_other;
};

// Parses a factlab.binsummary.v1 TSV.
std::optional<SummaryCurve> load_summary(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line); // schema
    std::getline(in, line); // header
    SummaryCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, '\t')) cells.push_back(cell);
        if (cells.size() < 8) continue;
        curve.bins.push_back(std::stod(cells[0]));
        curve.p_ctx.push_back(std::stod(cells[5]));
        curve.p_mem.push_back(std::stod(cells[6]));
        curve.p_other.push_back(std::stod(cells[7]));
    }
    return curve;
}

std::string size_tag(int n) { return "L" + std::to_string(n); }
std::string seed_tag(int k) { return "s" + std::to_string(k); }

} // namespace

void write_report(const PipelineConfig& cfg, const fs::path& out_dir) {
    const fs::path rep = out_dir / "report";
    fs::create_directories(rep);
    std::vector<std::string> gaps;
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    auto note_gap = [&gaps](const std::string& what) { gaps.push_back(what); };

    std::string md = "# factlab experiment report\n\n";
    md += "Outputs of the counterfactual-recall pipeline: a small decoder-only\n";
    md += "transformer trained on a synthetic fact corpus with controlled term\n";
    md += "frequencies, measured under counterfactual prompts, head attribution,\n";
    md += "value-scaling interventions, and OV singular-vector decoding.\n\n";
    md += "Config seed: " + std::to_string(cfg.seed) + ", seeds per measurement: " +
          std::to_string(cfg.n_seeds) + ", model sizes (layers): ";
    for (size_t i = 0; i < cfg.layer_sizes.size(); ++i) {
        if (i) md += ", ";
        md += std::to_string(cfg.layer_sizes[i]);
    }
    md += " (primary " + std::to_string(primary) + ")\n\n";

    // --- frequency-effect curves (binned proportions), per criterion
    {
        const std::vector<std::pair<std::string, std::string>> criteria = {
            {"country", "country frequency bin"},
            {"in_context_city", "in-context city frequency bin"},
            {"memorized_pair", "memorized pair co-occurrence bin"},
            {"in_context_pair", "in-context pair co-occurrence bin"}};
        std::vector<std::string> panels;
        for (const auto& [crit, xlabel] : criteria) {
            const auto curve = load_summary(
                out_dir / ("eval/summary_" + crit + "_" + size_tag(primary) + "_s0.tsv"));
            if (!curve) {
                note_gap("eval summary for criterion " + crit);
                continue;
            }
            SvgAxes axes;
            axes.title = "behavior by " + crit + " (seed 0)";
            axes.x_label = xlabel;
            axes.y_label = "proportion";
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            panels.push_back(svg_line_chart(
                axes, {{"in-context", kBlue, false, curve->bins, curve->p_ctx},
                       {"memorized", kRed, false, curve->bins, curve->p_mem},
                       {"other", kGray, true, curve->bins, curve->p_other}}));
        }
        if (!panels.empty()) {
            write_file(rep / "binned_proportions.svg", svg_panel_row(panels));
            md += "## Frequency effect\n\n![binned proportions](binned_proportions.svg)\n\n";
            md += "Proportions of in-context / memorized / other answers per frequency\n";
            md += "decile (bin 0 = least frequent). Per-seed tables live in eval/.\n\n";
        }
    }

    // --- size trend
    {
        std::vector<std::string> panels;
        for (int size : cfg.layer_sizes) {
            // median curve across seeds
            std::vector<SummaryCurve> curves;
            for (int k = 0; k < cfg.n_seeds; ++k) {
                const auto c = load_summary(out_dir / ("eval/summary_country_" + size_tag(size) +
                                                       "_" + seed_tag(k) + ".tsv"));
                if (c) curves.push_back(*c);
            }
            if (curves.empty()) {
                note_gap("country summaries for size " + std::to_string(size));
                continue;
            }
            SummaryCurve med = curves.front();
            for (size_t b = 0; b < med.bins.size(); ++b) {
                std::vector<double> ctx, mem;
                for (const auto& c : curves) {
                    ctx.push_back(c.p_ctx[b]);
                    mem.push_back(c.p_mem[b]);
                }
                med.p_ctx[b] = median(ctx);
                med.p_mem[b] = median(mem);
            }
            SvgAxes axes;
            axes.title = std::to_string(size) + "-layer model (median of " +
                         std::to_string(cfg.n_seeds) + " seeds)";
            axes.x_label = "country frequency bin";
            axes.y_label = "proportion";
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            panels.push_back(
                svg_line_chart(axes, {{"in-context", kBlue, false, med.bins, med.p_ctx},
                                      {"memorized", kRed, false, med.bins, med.p_mem}}));
        }
        if (!panels.empty()) {
            write_file(rep / "size_trend.svg", svg_panel_row(panels));
            md += "## Size trend\n\n![size trend](size_trend.svg)\n\n";
        }
    }

    // --- attribution heatmap (copy of seed 0)
    if (fs::exists(out_dir / "attribution/heatmap_s0.svg")) {
        write_file(rep / "attribution_heatmap.svg",
                   read_file(out_dir / "attribution/heatmap_s0.svg"));
        md += "## Head attribution\n\n![attribution](attribution_heatmap.svg)\n\n";
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const fs::path hp = out_dir / ("attribution/heads_" + seed_tag(k) + ".json");
            if (!fs::exists(hp)) continue;
            const auto j = json::parse(read_file(hp));
            md += "- seed " + std::to_string(k) + ": memory head L" +
                  std::to_string(j.at("memory_head").at("layer").get<int>()) + "H" +
                  std::to_string(j.at("memory_head").at("head").get<int>()) +
                  ", in-context head L" +
                  std::to_string(j.at("context_head").at("layer").get<int>()) + "H" +
                  std::to_string(j.at("context_head").at("head").get<int>()) + "\n";
        }
        md += "\n";
    } else {
        note_gap("attribution heatmap");
    }

    // --- alpha sweep curves (seed 0)
    {
        std::vector<std::string> panels;
        for (const char* dir : {"mem_down", "mem_up", "ctx_down", "ctx_up"}) {
            const fs::path p = out_dir / ("sweep/sweep_" + std::string(dir) + "_s0.tsv");
            if (!fs::exists(p)) {
                note_gap("sweep curve " + std::string(dir));
                continue;
            }
            std::istringstream in(read_file(p));
            std::string line;
            std::getline(in, line);
            double alpha_star = 1.0;
            const auto at = line.find("alpha_star=");
            if (at != std::string::npos) alpha_star = std::stod(line.substr(at + 11));
            std::getline(in, line);
            SvgSeries ctx{"in-context", kBlue, false, {}, {}};
            SvgSeries mem{"memorized", kRed, false, {}, {}};
            SvgSeries star{"alpha*", kGray, true, {}, {}};
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream row(line);
                std::string cell;
                std::vector<double> vals;
                while (std::getline(row, cell, '\t')) vals.push_back(std::stod(cell));
                if (vals.size() < 5) continue;
                ctx.x.push_back(vals[0]);
                ctx.y.push_back(vals[1]);
                mem.x.push_back(vals[0]);
                mem.y.push_back(vals[2]);
            }
            star.x = {alpha_star, alpha_star};
            star.y = {0.0, 1.0};
            SvgAxes axes;
            axes.title = std::string(dir) + " sweep (seed 0), alpha* = " + fmt_g(alpha_star);
            axes.x_label = "alpha";
            axes.y_label = "proportion";
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            panels.push_back(svg_line_chart(axes, {ctx, mem, star}));
        }
        if (!panels.empty()) {
            write_file(rep / "alpha_sweep.svg", svg_panel_row(panels));
            md += "## Scaling sweep\n\n![alpha sweep](alpha_sweep.svg)\n\n";
        }
    }

    // --- intervention bars (median over seeds)
    {
        std::vector<SvgBarGroup> groups;
        const char* names[3] = {"p_in_context", "p_memorized", "p_other"};
        (void)names;
        std::vector<double> base_ctx, base_mem;
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_dir;
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const fs::path p = out_dir / ("intervene/outcome_" + seed_tag(k) + ".json");
            if (!fs::exists(p)) continue;
            const auto j = json::parse(read_file(p));
            bool base_done = false;
            for (const char* dir : {"mem_down", "mem_up", "ctx_down", "ctx_up"}) {
                if (!j.contains(dir)) continue;
                const auto& jd = j.at(dir);
                if (!base_done) {
                    base_ctx.push_back(jd.at("base_p")[0].get<double>());
                    base_mem.push_back(jd.at("base_p")[1].get<double>());
                    base_done = true;
                }
                per_dir[dir].first.push_back(jd.at("new_p")[0].get<double>());
                per_dir[dir].second.push_back(jd.at("new_p")[1].get<double>());
            }
        }
        if (!base_ctx.empty()) {
            groups.push_back({"baseline", {median(base_ctx), median(base_mem)}});
            for (const char* dir : {"mem_down", "mem_up", "ctx_down", "ctx_up"}) {
                if (per_dir.count(dir))
                    groups.push_back(
                        {dir, {median(per_dir[dir].first), median(per_dir[dir].second)}});
            }
            SvgAxes axes;
            axes.title = "interventions on held-out prompts (median of seeds)";
            axes.x_label = "intervention";
            axes.y_label = "proportion";
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            write_file(rep / "intervention_bars.svg",
                       svg_bar_chart(axes, {"in-context", "memorized"}, {kBlue, kRed}, groups));
            md += "## Intervention outcomes\n\n![intervention bars](intervention_bars.svg)\n\n";
        } else {
            note_gap("intervention outcomes");
        }
    }

    // --- frequency effect before/after (seed 0, mem_down)
    {
        std::vector<std::string> panels;
        for (const char* crit : {"country", "in_context_city"}) {
            const fs::path p =
                out_dir / ("intervene/freqeffect_" + std::string(crit) + "_mem_down_s0.tsv");
            if (!fs::exists(p)) {
                note_gap("frequency-effect pair for " + std::string(crit));
                continue;
            }
            std::istringstream in(read_file(p));
            std::string line;
            std::getline(in, line); // schema
            std::getline(in, line); // slopes
            std::getline(in, line); // header
            SvgSeries bc{"in-context (base)", kBlue, false, {}, {}};
            SvgSeries bm{"memorized (base)", kRed, false, {}, {}};
            SvgSeries ic{"in-context (tuned)", kBlue, true, {}, {}};
            SvgSeries im{"memorized (tuned)", kRed, true, {}, {}};
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream row(line);
                std::string cell;
                std::vector<double> vals;
                while (std::getline(row, cell, '\t')) vals.push_back(std::stod(cell));
                if (vals.size() < 7) continue;
                bc.x.push_back(vals[0]);
                bc.y.push_back(vals[1]);
                bm.x.push_back(vals[0]);
                bm.y.push_back(vals[2]);
                ic.x.push_back(vals[0]);
                ic.y.push_back(vals[4]);
                im.x.push_back(vals[0]);
                im.y.push_back(vals[5]);
            }
            SvgAxes axes;
            axes.title = "memory head tuned down vs baseline (" + std::string(crit) + ")";
            axes.x_label = std::string(crit) + " bin";
            axes.y_label = "proportion";
            axes.y_min = 0.0;
            axes.y_max = 1.0;
            panels.push_back(svg_line_chart(axes, {bc, bm, ic, im}));
        }
        if (!panels.empty()) {
            write_file(rep / "freq_effect_intervened.svg", svg_panel_row(panels));
            md += "## Frequency effect under intervention\n\n";
            md += "![frequency effect](freq_effect_intervened.svg)\n\n";
        }
    }

    // --- generalization outcome table
    {
        bool any = false;
        std::string table = "| seed | intervention | in-context | memorized | other |\n";
        table += "|---|---|---|---|---|\n";
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const fs::path p = out_dir / ("generalize/outcome_f1_" + seed_tag(k) + ".json");
            if (!fs::exists(p)) continue;
            const auto j = json::parse(read_file(p));
            for (const char* dir : {"mem_down", "ctx_up"}) {
                if (!j.contains(dir)) continue;
                any = true;
                const auto& jd = j.at(dir);
                auto row = [&](const char* label, const json& pv) {
                    return "| " + std::to_string(k) + " | " + label + " | " +
                           fmt_g(pv[0].get<double>(), 4) + " | " + fmt_g(pv[1].get<double>(), 4) +
                           " | " + fmt_g(pv[2].get<double>(), 4) + " |\n";
                };
                table += row((std::string(dir) + " (baseline)").c_str(), jd.at("base_p"));
                table += row((std::string(dir) + " (intervened)").c_str(), jd.at("new_p"));
            }
        }
        if (any) {
            md += "## Second relation family (transfer)\n\n";
            md += "The family-0-tuned heads applied unchanged to family-1 prompts.\n";
            md += "A rise in `other` is an expected outcome of the transfer.\n\n" + table + "\n";
        } else if (cfg.n_family1 > 0) {
            note_gap("generalization outcomes");
        }
    }

    // --- SVD token tables
    {
        bool any = false;
        for (const char* which : {"memory_head", "context_head"}) {
            const fs::path p = out_dir / ("svd/tokens_" + std::string(which) + "_s0.tsv");
            if (!fs::exists(p)) continue;
            any = true;
            md += "## Decoded singular vectors: " + std::string(which) + " (seed 0)\n\n```\n" +
                  read_file(p) + "```\n\n";
        }
        if (!any) note_gap("svd token tables");
        const fs::path cp = out_dir / "svd/cluster_s0.json";
        if (fs::exists(cp)) {
            const auto j = json::parse(read_file(cp));
            md += "Entity-token share of decoded top-" + std::to_string(cfg.svd_top_k) +
                  " lists per head (seed 0):\n\n";
            md += "| layer | head | entity share |\n|---|---|---|\n";
            for (const auto& jh : j.at("heads")) {
                md += "| " + std::to_string(jh.at("layer").get<int>()) + " | " +
                      std::to_string(jh.at("head").get<int>()) + " | " +
                      fmt_g(jh.at("entity_share").get<double>(), 4) + " |\n";
            }
            md += "\n";
        }
    }

    // --- reference comparison
    {
        namespace ref = factlab::reference;
        std::string tsv = "# schema: factlab.reference.v1\n";
        tsv += "quantity\treference_pythia_1p4b\ttoy_result\n";
        std::string toy_ctx = "n/a", toy_mem = "n/a", toy_alpha = "n/a", toy_base_ctx = "n/a",
                    toy_base_mem = "n/a";
        std::vector<double> ctx_after, mem_after, alphas, ctx_base, mem_base;
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const fs::path p = out_dir / ("intervene/outcome_" + seed_tag(k) + ".json");
            if (!fs::exists(p)) continue;
            const auto j = json::parse(read_file(p));
            if (!j.contains("mem_down")) continue;
            const auto& jd = j.at("mem_down");
            ctx_after.push_back(jd.at("new_p")[0].get<double>() * 100.0);
            mem_after.push_back(jd.at("new_p")[1].get<double>() * 100.0);
            ctx_base.push_back(jd.at("base_p")[0].get<double>() * 100.0);
            mem_base.push_back(jd.at("base_p")[1].get<double>() * 100.0);
            alphas.push_back(jd.at("alpha").get<double>());
        }
        if (!ctx_after.empty()) {
            toy_ctx = fmt_g(median(ctx_after), 4);
            toy_mem = fmt_g(median(mem_after), 4);
            toy_alpha = fmt_g(median(alphas), 4);
            toy_base_ctx = fmt_g(median(ctx_base), 4);
            toy_base_mem = fmt_g(median(mem_base), 4);
        }
        tsv += "baseline in-context %\t" + fmt_g(ref::kBaselineInContextPct) + "\t" +
               toy_base_ctx + "\n";
        tsv += "baseline memorized %\t" + fmt_g(ref::kBaselineMemorizedPct) + "\t" + toy_base_mem +
               "\n";
        tsv += "after memory-head down, in-context %\t" + fmt_g(ref::kAfterMemoryDownInContextPct) +
               "\t" + toy_ctx + "\n";
        tsv += "after memory-head down, memorized %\t" + fmt_g(ref::kAfterMemoryDownMemorizedPct) +
               "\t" + toy_mem + "\n";
        tsv += std::string("memory-head alpha\t") + fmt_g(ref::kMemoryHeadAlpha) + "\t" +
               toy_alpha + "\n";
        tsv += std::string("memory head\t") + ref::kMemoryHeadName + "\tsee attribution/\n";
        tsv += std::string("in-context head\t") + ref::kContextHeadName + "\tsee attribution/\n";
        tsv += "countries\t" + std::to_string(ref::kFullScaleCountries) + "\t" +
               std::to_string(cfg.n_countries) + "\n";
        write_file(rep / "reference_comparison.tsv", tsv);
        md += "## Reference comparison\n\n";
        md += "Pythia-1.4b reference operating points next to the toy-scale medians\n";
        md += "(full table in reference_comparison.tsv). The reference values are\n";
        md += "context for reading the toy results, not targets.\n\n```\n" + tsv + "```\n\n";
    }

    if (!gaps.empty()) {
        md += "## Gaps\n\nMissing artifacts; the corresponding sections were skipped:\n\n";
        for (const auto& g : gaps) md += "- " + g + "\n";
        std::string gaps_txt;
        for (const auto& g : gaps) gaps_txt += g + "\n";
        write_file(rep / "gaps.txt", gaps_txt);
    }
    write_file(rep / "report.md", md);
}

} // namespace factlab
