#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace factlab {

// Word-level token <-> id bijection. Ids are dense from 0 with the two
// specials first, then corpus words in lexicographic order.
class Vocabulary {
public:
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kEot = "<eot>";

    Vocabulary() = default;
    explicit Vocabulary(const std::vector<std::string>& words);

    int pad_id() const { return 0; }
    int eot_id() const { return 1; }
    int size() const { return static_cast<int>(tokens_.size()); }

    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    // Throws ConfigError for unknown tokens.
    int id(const std::string& token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;
    std::string decode_text(const std::vector<int>& ids) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

} // namespace factlab
