#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "factlab/freq.hpp"
#include "factlab/model.hpp"
#include "factlab/vocab.hpp"
#include "factlab/world.hpp"

namespace factlab {

// One counterfactual prompt: the stated (wrong) attribute is the in-context
// answer, the world's true attribute the memorized answer.
struct PromptInstance {
    int id = 0;
    int family = 0;
    std::string country;
    std::string in_context_city;
    std::string memorized_city;
    std::string text;        // rendered prompt, space-separated tokens
    std::vector<int> tokens; // <eot> + rendered prompt
    int ctx_token = -1;
    int mem_token = -1;
};

// Cross product of subjects x non-own attributes for one relation family, in
// (subject, attribute) world order. extra_capitals adds counterfactual-only
// attribute candidates (they never act as memorized answers).
std::vector<PromptInstance> build_prompt_set(const WorldSpec& world, const Vocabulary& vocab,
                                             int family = 0,
                                             const std::vector<std::string>& extra_capitals = {});

// The prompt wording for (counterfactual) queries, exposed for tests.
std::vector<std::string> render_prompt_words(const RelationFamily& fam,
                                             const std::string& subject,
                                             const std::string& injected_attribute);
// The closed-book stem "the <noun> of <subject> is".
std::vector<std::string> render_closed_book_stem(const RelationFamily& fam,
                                                 const std::string& subject);

enum class AnswerClass { InContext = 0, Memorized = 1, Other = 2 };

const char* answer_class_name(AnswerClass c);

struct Classification {
    AnswerClass cls = AnswerClass::Other;
    bool both_present = false;
};

// First occurrence of either city in the continuation decides the class;
// neither present means Other.
Classification classify_output(const std::vector<int>& continuation, int ctx_token,
                               int mem_token);

struct BehaviorRecord {
    int prompt_id = 0;
    int family = 0;
    std::vector<int> continuation;
    AnswerClass cls = AnswerClass::Other;
    bool both_present = false;
    std::string intervention = "none";
    std::string diagnostic;
};

// Decodes every prompt and classifies the continuation. Per-prompt failures
// are recorded as Other with a diagnostic; the suite never aborts.
std::vector<BehaviorRecord> run_behavior_suite(const Checkpoint& ckpt,
                                               const std::vector<PromptInstance>& prompts,
                                               const Vocabulary& vocab, int max_new = 12,
                                               const InterventionSet* iv = nullptr,
                                               int chunk = 256);

enum class BinCriterion { Country, InContextCity, MemorizedPair, InContextPair };

const char* bin_criterion_name(BinCriterion c);

// The binning key of a prompt under a criterion.
std::string bin_key_for(const PromptInstance& prompt, BinCriterion criterion);

struct BinSummary {
    std::string criterion;
    struct Row {
        int bin = 0;
        long long n = 0, n_ctx = 0, n_mem = 0, n_other = 0;
        double p_ctx = 0.0, p_mem = 0.0, p_other = 0.0;
    };
    std::vector<Row> rows;
};

// Per-bin class proportions. Throws ConfigError naming the key if a record's
// bin key is missing from the assignment.
BinSummary aggregate_by_bin(const std::vector<BehaviorRecord>& records,
                            const std::vector<PromptInstance>& prompts,
                            const BinAssignment& bins, BinCriterion criterion);

// Counts of continuations that begin with the prompt's answer stem
// "the <noun> of <country> is", overall and per answer class.
struct PrefixStats {
    long long total = 0;
    long long with_stem = 0;
    long long with_stem_by_class[3] = {0, 0, 0};
};

PrefixStats prefix_stats(const std::vector<BehaviorRecord>& records,
                         const std::vector<PromptInstance>& prompts, const Vocabulary& vocab,
                         const WorldSpec& world);

// Line-delimited record export/import (schema line first).
std::string records_to_jsonl(const std::vector<BehaviorRecord>& records);
std::vector<BehaviorRecord> records_from_jsonl(const std::string& text);

std::string bin_summary_to_tsv(const BinSummary& summary);

} // namespace factlab
