#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "factlab/freq.hpp"
#include "factlab/harness.hpp"
#include "factlab/model.hpp"

namespace factlab {

// (layer x head) grid of mean logit differences, memorized minus in-context,
// each head's contribution projected through its W_O slice and the
// unembedding at the capture position.
struct AttributionMap {
    int n_layers = 0, n_heads = 0;
    std::vector<double> grid; // [L][H]
    int n_prompts = 0;
    std::vector<std::string> warnings;

    double at(int layer, int head) const {
        return grid[static_cast<size_t>(layer) * n_heads + static_cast<size_t>(head)];
    }
    double& at(int layer, int head) {
        return grid[static_cast<size_t>(layer) * n_heads + static_cast<size_t>(head)];
    }
};

// (W_O^h r^h) . (W_U[:, mem] - W_U[:, ctx]), no final-norm applied.
double head_logit_diff(const Checkpoint& ckpt, const ResidualTrace& trace, int layer, int head,
                       int mem_token, int ctx_token);

// Mean per-head logit difference over a prompt batch; prompts that cannot be
// tokenized are skipped with a warning. batch_size only groups the compute.
AttributionMap attribution_map(const Checkpoint& ckpt,
                               const std::vector<PromptInstance>& prompts, int batch_size = 5);

// Balanced head-selection sample: per frequency bin, per_bin prompts whose
// un-intervened behavior was InContext and per_bin that were Memorized.
struct SelectionSet {
    std::vector<int> in_context_ids;
    std::vector<int> memorized_ids;
    std::vector<std::string> warnings;
};

SelectionSet sample_selection_set(const std::vector<BehaviorRecord>& records,
                                  const std::vector<PromptInstance>& prompts,
                                  const BinAssignment& bins, int per_bin, uint64_t seed);

// Ranked head roles from a series of per-batch maps: the memory head has the
// largest positive mean score, the in-context head the most negative.
struct HeadSelection {
    struct Scored {
        int layer = 0, head = 0;
        double score = 0.0;
    };
    Scored memory_head;
    Scored context_head;
    std::vector<Scored> ranked; // descending by score

    std::string to_json() const;
    static HeadSelection from_json(const std::string& text);
};

HeadSelection select_heads(const std::vector<AttributionMap>& batch_maps);

// Diverging heatmap (blue = promotes in-context, red = memorized). When
// fixed_range > 0 the color scale is clamped to [-fixed_range, +fixed_range].
std::string emit_heatmap(const AttributionMap& map, double fixed_range = 0.0);

std::string attribution_to_tsv(const AttributionMap& map);

} // namespace factlab
