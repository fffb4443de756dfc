#include "factlab/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"
#include "factlab/rng.hpp"

namespace factlab {

size_t DocumentSet::total_tokens() const {
    size_t n = 0;
    for (const auto& d : docs) n += d.tokens.size();
    return n;
}

SentenceTemplate statement_template() {
    return {{"the", "%noun%", "of", "<s>", "is", "<a>", "."}};
}

SentenceTemplate qa_echo_template() {
    return {{"the", "%noun%", "of", "<s>", "is", "<a>", ".", "q", ":", "what", "is",
             "the", "%noun%", "of", "<s>", "?", "a", ":", "<a>", "."}};
}

SentenceTemplate reversed_template() {
    return {{"<a>", "is", "the", "%noun%", "of", "<s>", "."}};
}

std::vector<SentenceTemplate> default_fact_templates() {
    return {statement_template(), qa_echo_template(), reversed_template()};
}

std::vector<std::vector<std::string>> default_filler_sentences() {
    return {
        {"people", "visit", "the", "old", "town", "."},
        {"the", "new", "land", "lies", "near", "the", "city", "."},
        {"the", "town", "is", "built", "near", "the", "land", "."},
        {"old", "people", "visit", "the", "new", "town", "."},
    };
}

namespace {

void render_fact(const SentenceTemplate& tpl, const RelationFamily& fam, int subject,
                 int attribute, RawDocument& doc) {
    for (const auto& w : tpl.words) {
        if (w == "<s>") {
            doc.words.push_back(fam.pairs[static_cast<size_t>(subject)].subject);
        } else if (w == "<a>") {
            doc.words.push_back(fam.pairs[static_cast<size_t>(attribute)].attribute);
        } else if (w == "%noun%") {
            doc.words.push_back(fam.relation_noun);
        } else {
            doc.words.push_back(w);
        }
    }
    doc.mentions.push_back({fam.id, subject, attribute});
}

} // namespace

RawCorpus generate_documents(const WorldSpec& world, int total_docs,
                             const std::vector<SentenceTemplate>& fact_templates,
                             uint64_t seed, const CorpusOptions& options) {
    world.validate();
    if (fact_templates.empty())
        throw ConfigError("generate_documents: the template list is empty");
    if (total_docs < 10 * world.n_countries())
        throw ConfigError("generate_documents: total_docs must be at least 10x the country count");
    if (options.family1_fraction > 0.0 && world.families.size() < 2)
        throw ConfigError("generate_documents: family 1 requested but the world has none");

    Rng rng(derive_seed(seed, /*stage_tag=*/0x636f7270ull)); // "corp"
    const auto fillers = default_filler_sentences();

    RawCorpus corpus;
    corpus.docs.reserve(static_cast<size_t>(total_docs));

    for (int i = 0; i < total_docs; ++i) {
        RawDocument doc;
        if (rng.next_double() < options.filler_fraction) {
            const int n_sent = 1 + (rng.next_double() < 0.3 ? 1 : 0);
            for (int s = 0; s < n_sent; ++s) {
                const auto& sent = fillers[rng.next_below(fillers.size())];
                doc.words.insert(doc.words.end(), sent.begin(), sent.end());
            }
        } else {
            const bool use_family1 =
                world.families.size() > 1 && rng.next_double() < options.family1_fraction;
            const RelationFamily& fam = world.families[use_family1 ? 1 : 0];

            const int subject = static_cast<int>(rng.next_weighted(fam.weights));
            int attribute = subject;
            if (options.noise_rate > 0.0 && rng.next_double() < options.noise_rate) {
                attribute = static_cast<int>(rng.next_below(fam.pairs.size()));
            }
            const auto& tpl = fact_templates[rng.next_below(fact_templates.size())];
            render_fact(tpl, fam, subject, attribute, doc);

            if (fam.pairs.size() > 1 && rng.next_double() < options.second_fact_prob) {
                int other = subject;
                while (other == subject)
                    other = static_cast<int>(rng.next_weighted(fam.weights));
                const auto& tpl2 = fact_templates[rng.next_below(fact_templates.size())];
                render_fact(tpl2, fam, other, other, doc);
            }
        }
        corpus.docs.push_back(std::move(doc));
    }
    return corpus;
}

Vocabulary build_vocab(const RawCorpus& raw) {
    std::vector<std::string> words;
    std::set<std::string> seen;
    for (const auto& doc : raw.docs) {
        for (const auto& w : doc.words) {
            if (seen.insert(w).second) words.push_back(w);
        }
    }
    return Vocabulary(words);
}

DocumentSet encode_corpus(const RawCorpus& raw, const Vocabulary& vocab) {
    DocumentSet out;
    out.docs.reserve(raw.docs.size());
    for (const auto& doc : raw.docs) {
        Document d;
        d.tokens = vocab.encode(doc.words);
        d.mentions = doc.mentions;
        out.docs.push_back(std::move(d));
    }
    return out;
}

std::string corpus_to_jsonl(const DocumentSet& docs) {
    std::string out;
    {
        nlohmann::json header;
        header["schema"] = "factlab.corpus.v1";
        header["n_docs"] = docs.docs.size();
        out += header.dump();
        out += '\n';
    }
    for (const auto& d : docs.docs) {
        nlohmann::json j;
        j["t"] = d.tokens;
        auto& m = j["m"] = nlohmann::json::array();
        for (const auto& men : d.mentions)
            m.push_back({men.family, men.subject, men.attribute});
        out += j.dump();
        out += '\n';
    }
    return out;
}

DocumentSet corpus_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("corpus file is empty");
    const auto header = nlohmann::json::parse(line);
    if (header.value("schema", "") != "factlab.corpus.v1")
        throw IoError("corpus file has unknown schema tag");
    const size_t n_docs = header.at("n_docs").get<size_t>();

    DocumentSet out;
    out.docs.reserve(n_docs);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Document d;
        d.tokens = j.at("t").get<std::vector<int>>();
        for (const auto& jm : j.at("m")) {
            d.mentions.push_back({jm.at(0).get<int>(), jm.at(1).get<int>(), jm.at(2).get<int>()});
        }
        out.docs.push_back(std::move(d));
    }
    if (out.docs.size() != n_docs)
        throw IoError("corpus file is truncated: header count does not match");
    return out;
}

} // namespace factlab
