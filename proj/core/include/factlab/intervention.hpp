#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "factlab/harness.hpp"
#include "factlab/model.hpp"

namespace factlab {

// Which behavior change an intervention is tuned for.
enum class SweepObjective {
    FlipMemorizedToInContext, // e.g. tuning a memory head down
    FlipInContextToMemorized, // e.g. tuning a memory head up
};

const char* sweep_objective_name(SweepObjective o);

struct SweepPoint {
    double alpha = 1.0;
    double p_ctx = 0.0, p_mem = 0.0, p_other = 0.0; // on the whole tuning set
    double flip_fraction = 0.0;                     // on the objective's source class
};

struct SweepCurve {
    int layer = 0, head = 0;
    SweepObjective objective = SweepObjective::FlipMemorizedToInContext;
    std::vector<SweepPoint> points; // in grid order
    double alpha_star = 1.0;

    std::string to_tsv() const;
};

// Evaluates every alpha in grid on the tuning prompts and picks alpha_star as
// the grid point maximizing the objective's flip fraction, ties broken toward
// the smallest |alpha - 1|. The grid must contain 1.0. baseline gives the
// un-intervened class per tuning prompt.
SweepCurve alpha_sweep(const Checkpoint& ckpt, const Vocabulary& vocab, int layer, int head,
                       const std::vector<double>& alpha_grid,
                       const std::vector<PromptInstance>& tuning_prompts,
                       const std::vector<BehaviorRecord>& baseline, SweepObjective objective,
                       int max_new = 12);

inline std::vector<double> default_alpha_grid() {
    std::vector<double> g;
    for (int i = -20; i <= 30; ++i) g.push_back(i / 10.0);
    return g;
}

// Intervened re-run of a prompt set against its baseline records: per-class
// proportion deltas plus the 3x3 flip matrix (rows = baseline class, columns
// = intervened class, order in_context/memorized/other).
struct InterventionOutcome {
    InterventionSpec spec;
    std::vector<BehaviorRecord> records;
    double base_p[3] = {0, 0, 0};
    double new_p[3] = {0, 0, 0};
    double delta_p[3] = {0, 0, 0};
    std::array<std::array<long long, 3>, 3> flips{};

    std::string flips_to_tsv() const;
};

InterventionOutcome apply_and_measure(const Checkpoint& ckpt, const Vocabulary& vocab,
                                      const InterventionSpec& spec,
                                      const std::vector<PromptInstance>& prompts,
                                      const std::vector<BehaviorRecord>& baseline,
                                      int max_new = 12);

// Paired per-bin curves before/after an intervention, plus least-squares
// slopes of the class proportions across bins for flatness assessment.
struct FreqEffectPair {
    BinSummary baseline;
    BinSummary intervened;
    double slope_mem_baseline = 0.0, slope_mem_intervened = 0.0;
    double slope_ctx_baseline = 0.0, slope_ctx_intervened = 0.0;

    std::string to_tsv() const;
};

FreqEffectPair frequency_effect_after_intervention(
    const std::vector<BehaviorRecord>& baseline_records,
    const std::vector<BehaviorRecord>& intervened_records,
    const std::vector<PromptInstance>& prompts, const BinAssignment& bins,
    BinCriterion criterion);

// Same measurement on the second relation family with the family-0-tuned
// spec; prompts must all belong to family 1.
InterventionOutcome generalization_test(const Checkpoint& ckpt, const Vocabulary& vocab,
                                        const InterventionSpec& spec,
                                        const std::vector<PromptInstance>& family1_prompts,
                                        const std::vector<BehaviorRecord>& family1_baseline,
                                        int max_new = 12);

} // namespace factlab
