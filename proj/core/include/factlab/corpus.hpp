#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "factlab/vocab.hpp"
#include "factlab/world.hpp"

namespace factlab {

// One stated fact inside a document, by world index. For truthful statements
// (the default) attribute == the subject's own attribute index.
struct Mention {
    int family = 0;
    int subject = 0;
    int attribute = 0;
    bool operator==(const Mention&) const = default;
};

// One pretraining document, tokenized.
struct Document {
    std::vector<int> tokens;
    std::vector<Mention> mentions;
};

struct DocumentSet {
    std::vector<Document> docs;
    size_t total_tokens() const;
};

// A document before vocabulary assignment.
struct RawDocument {
    std::vector<std::string> words;
    std::vector<Mention> mentions;
};

struct RawCorpus {
    std::vector<RawDocument> docs;
};

// Wording of one fact sentence; <s> and <a> are the subject/attribute slots
// and %noun% the family's relation noun.
struct SentenceTemplate {
    std::vector<std::string> words;
};

// Statement forms sampled for fact documents. The qa_echo form repeats the
// attribute after a question, which is what teaches the model to copy an
// answer stated earlier in its context.
SentenceTemplate statement_template();
SentenceTemplate qa_echo_template();
SentenceTemplate reversed_template();
std::vector<SentenceTemplate> default_fact_templates();
std::vector<std::vector<std::string>> default_filler_sentences();

struct CorpusOptions {
    double filler_fraction = 0.15;   // documents mentioning no entity
    double second_fact_prob = 0.25;  // fact docs that state one extra fact
    double family1_fraction = 0.0;   // fact docs drawn from family 1
    double noise_rate = 0.0;         // fraction of fact statements corrupted
};

// Samples total_docs documents. Subjects are drawn from the world weights
// (multinomial), each fact document states the true pair via a sampled
// template, and filler documents mention no entity.
RawCorpus generate_documents(const WorldSpec& world, int total_docs,
                             const std::vector<SentenceTemplate>& fact_templates,
                             uint64_t seed, const CorpusOptions& options = {});

// Word-level vocabulary over the raw corpus; every entity name is one token.
Vocabulary build_vocab(const RawCorpus& raw);

DocumentSet encode_corpus(const RawCorpus& raw, const Vocabulary& vocab);

// Line-delimited persistence: first line is the schema tag, then one JSON
// record per document.
std::string corpus_to_jsonl(const DocumentSet& docs);
DocumentSet corpus_from_jsonl(const std::string& text);

} // namespace factlab
