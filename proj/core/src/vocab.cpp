#include "factlab/vocab.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"

namespace factlab {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
    std::set<std::string> uniq(words.begin(), words.end());
    uniq.erase(kPad);
    uniq.erase(kEot);
    tokens_.reserve(uniq.size() + 2);
    tokens_.push_back(kPad);
    tokens_.push_back(kEot);
    tokens_.insert(tokens_.end(), uniq.begin(), uniq.end());
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) ids_[tokens_[i]] = i;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ConfigError("token not in vocabulary: '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw ConfigError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
}

std::string Vocabulary::decode_text(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["schema"] = "factlab.vocab.v1";
    j["tokens"] = tokens_;
    return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "factlab.vocab.v1")
        throw IoError("vocabulary file has unknown schema tag");
    Vocabulary v;
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.tokens_.size() < 2 || v.tokens_[0] != kPad || v.tokens_[1] != kEot)
        throw IoError("vocabulary file is missing the special tokens");
    for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) v.ids_[v.tokens_[i]] = i;
    if (v.ids_.size() != v.tokens_.size()) throw IoError("vocabulary contains duplicate tokens");
    return v;
}

} // namespace factlab
