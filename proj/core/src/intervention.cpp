#include "factlab/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "factlab/common.hpp"
#include "factlab/stats.hpp"

namespace factlab {

const char* sweep_objective_name(SweepObjective o) {
    switch (o) {
        case SweepObjective::FlipMemorizedToInContext: return "flip_memorized_to_in_context";
        case SweepObjective::FlipInContextToMemorized: return "flip_in_context_to_memorized";
    }
    return "?";
}

namespace {

void check_same_prompts(const std::vector<PromptInstance>& prompts,
                        const std::vector<BehaviorRecord>& baseline, const char* who) {
    if (prompts.size() != baseline.size())
        throw ConfigError(std::string(who) + ": baseline records do not match the prompt set");
    for (size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].id != baseline[i].prompt_id)
            throw ConfigError(std::string(who) +
                              ": baseline record order does not match the prompt set");
    }
}

void class_proportions(const std::vector<BehaviorRecord>& records, double out[3]) {
    long long n[3] = {0, 0, 0};
    for (const auto& r : records) ++n[static_cast<int>(r.cls)];
    const double total = std::max<long long>(1, records.size());
    for (int i = 0; i < 3; ++i) out[i] = n[i] / total;
}

} // namespace

SweepCurve alpha_sweep(const Checkpoint& ckpt, const Vocabulary& vocab, int layer, int head,
                       const std::vector<double>& alpha_grid,
                       const std::vector<PromptInstance>& tuning_prompts,
                       const std::vector<BehaviorRecord>& baseline, SweepObjective objective,
                       int max_new) {
    if (alpha_grid.empty()) throw ConfigError("alpha_sweep: empty grid");
    if (std::find(alpha_grid.begin(), alpha_grid.end(), 1.0) == alpha_grid.end())
        throw ConfigError("alpha_sweep: the grid must include 1.0");
    check_same_prompts(tuning_prompts, baseline, "alpha_sweep");

    const AnswerClass source = objective == SweepObjective::FlipMemorizedToInContext
                                   ? AnswerClass::Memorized
                                   : AnswerClass::InContext;
    const AnswerClass wanted = objective == SweepObjective::FlipMemorizedToInContext
                                   ? AnswerClass::InContext
                                   : AnswerClass::Memorized;
    long long n_source = 0;
    for (const auto& r : baseline) {
        if (r.cls == source) ++n_source;
    }

    SweepCurve curve;
    curve.layer = layer;
    curve.head = head;
    curve.objective = objective;

    for (double alpha : alpha_grid) {
        InterventionSet iv(std::vector<InterventionSpec>{{layer, head, alpha}});
        const auto records = run_behavior_suite(ckpt, tuning_prompts, vocab, max_new, &iv);
        SweepPoint pt;
        pt.alpha = alpha;
        double p[3];
        class_proportions(records, p);
        pt.p_ctx = p[0];
        pt.p_mem = p[1];
        pt.p_other = p[2];
        if (n_source > 0) {
            long long flipped = 0;
            for (size_t i = 0; i < records.size(); ++i) {
                if (baseline[i].cls == source && records[i].cls == wanted) ++flipped;
            }
            pt.flip_fraction = static_cast<double>(flipped) / static_cast<double>(n_source);
        }
        curve.points.push_back(pt);
    }

    double best = -1.0, best_dist = 1e300;
    for (const auto& pt : curve.points) {
        const double dist = std::fabs(pt.alpha - 1.0);
        if (pt.flip_fraction > best || (pt.flip_fraction == best && dist < best_dist)) {
            best = pt.flip_fraction;
            best_dist = dist;
            curve.alpha_star = pt.alpha;
        }
    }
    return curve;
}

std::string SweepCurve::to_tsv() const {
    std::string out = "# schema: factlab.sweep.v1\tlayer=" + std::to_string(layer) +
                      "\thead=" + std::to_string(head) +
                      "\tobjective=" + sweep_objective_name(objective) +
                      "\talpha_star=" + fmt_g(alpha_star) + "\n";
    out += "alpha\tp_in_context\tp_memorized\tp_other\tflip_fraction\n";
    for (const auto& p : points) {
        out += fmt_g(p.alpha) + '\t' + fmt_g(p.p_ctx) + '\t' + fmt_g(p.p_mem) + '\t' +
               fmt_g(p.p_other) + '\t' + fmt_g(p.flip_fraction) + '\n';
    }
    return out;
}

InterventionOutcome apply_and_measure(const Checkpoint& ckpt, const Vocabulary& vocab,
                                      const InterventionSpec& spec,
                                      const std::vector<PromptInstance>& prompts,
                                      const std::vector<BehaviorRecord>& baseline, int max_new) {
    check_same_prompts(prompts, baseline, "apply_and_measure");

    InterventionOutcome out;
    out.spec = spec;
    InterventionSet iv(std::vector<InterventionSpec>{spec});
    out.records = run_behavior_suite(ckpt, prompts, vocab, max_new, &iv);

    class_proportions(baseline, out.base_p);
    class_proportions(out.records, out.new_p);
    for (int i = 0; i < 3; ++i) out.delta_p[i] = out.new_p[i] - out.base_p[i];
    for (size_t i = 0; i < out.records.size(); ++i) {
        ++out.flips[static_cast<size_t>(baseline[i].cls)][static_cast<size_t>(out.records[i].cls)];
    }
    return out;
}

std::string InterventionOutcome::flips_to_tsv() const {
    std::string out = "# schema: factlab.flips.v1\tintervention=L" + std::to_string(spec.layer) +
                      "H" + std::to_string(spec.head) + "a" + fmt_g(spec.alpha) + "\n";
    out += "baseline\\intervened\tin_context\tmemorized\tother\n";
    const char* names[3] = {"in_context", "memorized", "other"};
    for (int i = 0; i < 3; ++i) {
        out += names[i];
        for (int j = 0; j < 3; ++j)
            out += '\t' + std::to_string(flips[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        out += '\n';
    }
    return out;
}

FreqEffectPair frequency_effect_after_intervention(
    const std::vector<BehaviorRecord>& baseline_records,
    const std::vector<BehaviorRecord>& intervened_records,
    const std::vector<PromptInstance>& prompts, const BinAssignment& bins,
    BinCriterion criterion) {
    FreqEffectPair pair;
    pair.baseline = aggregate_by_bin(baseline_records, prompts, bins, criterion);
    pair.intervened = aggregate_by_bin(intervened_records, prompts, bins, criterion);

    std::vector<double> xs, mem_b, mem_i, ctx_b, ctx_i;
    for (const auto& row : pair.baseline.rows) {
        xs.push_back(row.bin);
        mem_b.push_back(row.p_mem);
        ctx_b.push_back(row.p_ctx);
    }
    for (const auto& row : pair.intervened.rows) {
        mem_i.push_back(row.p_mem);
        ctx_i.push_back(row.p_ctx);
    }
    pair.slope_mem_baseline = least_squares_slope(xs, mem_b);
    pair.slope_mem_intervened = least_squares_slope(xs, mem_i);
    pair.slope_ctx_baseline = least_squares_slope(xs, ctx_b);
    pair.slope_ctx_intervened = least_squares_slope(xs, ctx_i);
    return pair;
}

std::string FreqEffectPair::to_tsv() const {
    std::string out = "# schema: factlab.freqeffect.v1\tcriterion=" + baseline.criterion + "\n";
    out += "slopes\tmem_base=" + fmt_g(slope_mem_baseline) +
           "\tmem_int=" + fmt_g(slope_mem_intervened) +
           "\tctx_base=" + fmt_g(slope_ctx_baseline) +
           "\tctx_int=" + fmt_g(slope_ctx_intervened) + "\n";
    out += "bin\tbase_p_in_context\tbase_p_memorized\tbase_p_other"
           "\tint_p_in_context\tint_p_memorized\tint_p_other\n";
    for (size_t i = 0; i < baseline.rows.size(); ++i) {
        const auto& b = baseline.rows[i];
        const auto& v = intervened.rows[i];
        out += std::to_string(b.bin) + '\t' + fmt_g(b.p_ctx) + '\t' + fmt_g(b.p_mem) + '\t' +
               fmt_g(b.p_other) + '\t' + fmt_g(v.p_ctx) + '\t' + fmt_g(v.p_mem) + '\t' +
               fmt_g(v.p_other) + '\n';
    }
    return out;
}

InterventionOutcome generalization_test(const Checkpoint& ckpt, const Vocabulary& vocab,
                                        const InterventionSpec& spec,
                                        const std::vector<PromptInstance>& family1_prompts,
                                        const std::vector<BehaviorRecord>& family1_baseline,
                                        int max_new) {
    for (const auto& p : family1_prompts) {
        if (p.family != 1)
            throw ConfigError("generalization_test: prompts must belong to family 1");
    }
    return apply_and_measure(ckpt, vocab, spec, family1_prompts, family1_baseline, max_new);
}

} // namespace factlab
