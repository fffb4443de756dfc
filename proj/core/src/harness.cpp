#include "factlab/harness.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"

namespace factlab {

std::vector<std::string> render_prompt_words(const RelationFamily& fam,
                                             const std::string& subject,
                                             const std::string& injected_attribute) {
    return {"the", fam.relation_noun, "of", subject, "is", injected_attribute, ".",
            "q",   ":", "what", "is", "the", fam.relation_noun, "of", subject, "?",
            "a",   ":"};
}

std::vector<std::string> render_closed_book_stem(const RelationFamily& fam,
                                                 const std::string& subject) {
    return {"the", fam.relation_noun, "of", subject, "is"};
}

std::vector<PromptInstance> build_prompt_set(const WorldSpec& world, const Vocabulary& vocab,
                                             int family,
                                             const std::vector<std::string>& extra_capitals) {
    if (family < 0 || family >= static_cast<int>(world.families.size()))
        throw ConfigError("build_prompt_set: unknown relation family");
    const RelationFamily& fam = world.families[static_cast<size_t>(family)];
    if (fam.pairs.size() < 2)
        throw ConfigError("build_prompt_set: need at least 2 subjects");

    std::vector<std::string> attribute_pool;
    for (const auto& p : fam.pairs) attribute_pool.push_back(p.attribute);
    attribute_pool.insert(attribute_pool.end(), extra_capitals.begin(), extra_capitals.end());

    std::vector<PromptInstance> prompts;
    prompts.reserve(fam.pairs.size() * attribute_pool.size());
    int id = 0;
    for (const auto& pair : fam.pairs) {
        for (const auto& attr : attribute_pool) {
            if (attr == pair.attribute) continue; // own attribute excluded
            PromptInstance p;
            p.id = id++;
            p.family = family;
            p.country = pair.subject;
            p.in_context_city = attr;
            p.memorized_city = pair.attribute;
            const auto words = render_prompt_words(fam, pair.subject, attr);
            p.text = [&words] {
                std::string s;
                for (size_t i = 0; i < words.size(); ++i) {
                    if (i) s += ' ';
                    s += words[i];
                }
                return s;
            }();
            p.tokens.push_back(vocab.eot_id());
            for (const auto& w : words) p.tokens.push_back(vocab.id(w));
            p.ctx_token = vocab.id(attr);
            p.mem_token = vocab.id(pair.attribute);
            prompts.push_back(std::move(p));
        }
    }
    return prompts;
}

const char* answer_class_name(AnswerClass c) {
    switch (c) {
        case AnswerClass::InContext: return "in_context";
        case AnswerClass::Memorized: return "memorized";
        case AnswerClass::Other: return "other";
    }
    return "other";
}

Classification classify_output(const std::vector<int>& continuation, int ctx_token,
                               int mem_token) {
    Classification out;
    bool saw_ctx = false, saw_mem = false;
    for (int tok : continuation) {
        if (tok == ctx_token) {
            if (!saw_ctx && !saw_mem) out.cls = AnswerClass::InContext;
            saw_ctx = true;
        } else if (tok == mem_token) {
            if (!saw_ctx && !saw_mem) out.cls = AnswerClass::Memorized;
            saw_mem = true;
        }
    }
    out.both_present = saw_ctx && saw_mem;
    return out;
}

std::vector<BehaviorRecord> run_behavior_suite(const Checkpoint& ckpt,
                                               const std::vector<PromptInstance>& prompts,
                                               const Vocabulary& vocab, int max_new,
                                               const InterventionSet* iv, int chunk) {
    std::vector<BehaviorRecord> records(prompts.size());
    const std::string descriptor = iv ? iv->descriptor() : "none";

    // group indices by prompt length so each decode chunk is homogeneous
    std::map<size_t, std::vector<size_t>> by_len;
    for (size_t i = 0; i < prompts.size(); ++i) {
        BehaviorRecord& rec = records[i];
        rec.prompt_id = prompts[i].id;
        rec.family = prompts[i].family;
        rec.intervention = descriptor;
        bool ok = !prompts[i].tokens.empty();
        for (int t : prompts[i].tokens) {
            if (t < 0 || t >= ckpt.config.vocab_size) ok = false;
        }
        if (static_cast<int>(prompts[i].tokens.size()) > ckpt.config.max_context) ok = false;
        if (!ok) {
            rec.cls = AnswerClass::Other;
            rec.diagnostic = "prompt not decodable (tokenization or length)";
            continue;
        }
        by_len[prompts[i].tokens.size()].push_back(i);
    }

    for (const auto& [len, idxs] : by_len) {
        (void)len;
        for (size_t start = 0; start < idxs.size(); start += static_cast<size_t>(chunk)) {
            const size_t end = std::min(idxs.size(), start + static_cast<size_t>(chunk));
            std::vector<std::vector<int>> chunk_prompts;
            chunk_prompts.reserve(end - start);
            for (size_t k = start; k < end; ++k)
                chunk_prompts.push_back(prompts[idxs[k]].tokens);
            const auto outs = greedy_decode_batch(ckpt, chunk_prompts, max_new, iv,
                                                  vocab.eot_id(), chunk);
            for (size_t k = start; k < end; ++k) {
                const auto& p = prompts[idxs[k]];
                BehaviorRecord& rec = records[idxs[k]];
                rec.continuation = outs[k - start];
                const auto cls = classify_output(rec.continuation, p.ctx_token, p.mem_token);
                rec.cls = cls.cls;
                rec.both_present = cls.both_present;
            }
        }
    }
    return records;
}

const char* bin_criterion_name(BinCriterion c) {
    switch (c) {
        case BinCriterion::Country: return "country";
        case BinCriterion::InContextCity: return "in_context_city";
        case BinCriterion::MemorizedPair: return "memorized_pair";
        case BinCriterion::InContextPair: return "in_context_pair";
    }
    return "?";
}

std::string bin_key_for(const PromptInstance& prompt, BinCriterion criterion) {
    switch (criterion) {
        case BinCriterion::Country: return prompt.country;
        case BinCriterion::InContextCity: return prompt.in_context_city;
        case BinCriterion::MemorizedPair: return pair_key(prompt.country, prompt.memorized_city);
        case BinCriterion::InContextPair: return pair_key(prompt.country, prompt.in_context_city);
    }
    return {};
}

BinSummary aggregate_by_bin(const std::vector<BehaviorRecord>& records,
                            const std::vector<PromptInstance>& prompts,
                            const BinAssignment& bins, BinCriterion criterion) {
    std::map<int, const PromptInstance*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;

    BinSummary summary;
    summary.criterion = bin_criterion_name(criterion);
    summary.rows.resize(static_cast<size_t>(bins.n_bins));
    for (int b = 0; b < bins.n_bins; ++b) summary.rows[static_cast<size_t>(b)].bin = b;

    for (const auto& rec : records) {
        auto it = by_id.find(rec.prompt_id);
        if (it == by_id.end())
            throw ConfigError("aggregate_by_bin: record for unknown prompt id " +
                              std::to_string(rec.prompt_id));
        const std::string key = bin_key_for(*it->second, criterion);
        const int b = bins.bin(key); // throws, naming the key, when missing
        auto& row = summary.rows[static_cast<size_t>(b)];
        ++row.n;
        switch (rec.cls) {
            case AnswerClass::InContext: ++row.n_ctx; break;
            case AnswerClass::Memorized: ++row.n_mem; break;
            case AnswerClass::Other: ++row.n_other; break;
        }
    }
    for (auto& row : summary.rows) {
        if (row.n == 0) continue;
        const double n = static_cast<double>(row.n);
        row.p_ctx = row.n_ctx / n;
        row.p_mem = row.n_mem / n;
        row.p_other = row.n_other / n;
    }
    return summary;
}

PrefixStats prefix_stats(const std::vector<BehaviorRecord>& records,
                         const std::vector<PromptInstance>& prompts, const Vocabulary& vocab,
                         const WorldSpec& world) {
    std::map<int, const PromptInstance*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;

    PrefixStats stats;
    for (const auto& rec : records) {
        ++stats.total;
        auto it = by_id.find(rec.prompt_id);
        if (it == by_id.end()) continue;
        const auto& p = *it->second;
        const auto& fam = world.families.at(static_cast<size_t>(p.family));
        const auto stem_words = render_closed_book_stem(fam, p.country);
        if (rec.continuation.size() < stem_words.size()) continue;
        bool match = true;
        for (size_t i = 0; i < stem_words.size(); ++i) {
            if (!vocab.contains(stem_words[i]) ||
                rec.continuation[i] != vocab.id(stem_words[i])) {
                match = false;
                break;
            }
        }
        if (match) {
            ++stats.with_stem;
            ++stats.with_stem_by_class[static_cast<int>(rec.cls)];
        }
    }
    return stats;
}

std::string records_to_jsonl(const std::vector<BehaviorRecord>& records) {
    std::string out;
    {
        nlohmann::json header;
        header["schema"] = "factlab.records.v1";
        header["n_records"] = records.size();
        out += header.dump();
        out += '\n';
    }
    for (const auto& r : records) {
        nlohmann::json j;
        j["id"] = r.prompt_id;
        j["fam"] = r.family;
        j["cls"] = answer_class_name(r.cls);
        j["both"] = r.both_present;
        j["cont"] = r.continuation;
        j["iv"] = r.intervention;
        if (!r.diagnostic.empty()) j["diag"] = r.diagnostic;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<BehaviorRecord> records_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("records file is empty");
    const auto header = nlohmann::json::parse(line);
    if (header.value("schema", "") != "factlab.records.v1")
        throw IoError("records file has unknown schema tag");

    std::vector<BehaviorRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        BehaviorRecord r;
        r.prompt_id = j.at("id").get<int>();
        r.family = j.at("fam").get<int>();
        const std::string cls = j.at("cls").get<std::string>();
        r.cls = cls == "in_context" ? AnswerClass::InContext
                : cls == "memorized" ? AnswerClass::Memorized
                                     : AnswerClass::Other;
        r.both_present = j.at("both").get<bool>();
        r.continuation = j.at("cont").get<std::vector<int>>();
        r.intervention = j.at("iv").get<std::string>();
        if (j.contains("diag")) r.diagnostic = j.at("diag").get<std::string>();
        records.push_back(std::move(r));
    }
    return records;
}

std::string bin_summary_to_tsv(const BinSummary& summary) {
    std::string out =
        "# schema: factlab.binsummary.v1\tcriterion=" + summary.criterion + "\n";
    out += "bin\tn\tn_in_context\tn_memorized\tn_other\tp_in_context\tp_memorized\tp_other\n";
    for (const auto& r : summary.rows) {
        out += std::to_string(r.bin) + '\t' + std::to_string(r.n) + '\t' +
               std::to_string(r.n_ctx) + '\t' + std::to_string(r.n_mem) + '\t' +
               std::to_string(r.n_other) + '\t' + fmt_g(r.p_ctx) + '\t' + fmt_g(r.p_mem) +
               '\t' + fmt_g(r.p_other) + '\n';
    }
    return out;
}

} // namespace factlab
