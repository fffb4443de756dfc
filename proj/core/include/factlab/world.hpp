#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace factlab {

// One ground-truth (subject, attribute) fact, e.g. a country and its capital.
struct FactPair {
    std::string subject;
    std::string attribute;
};

// A relation family: the wording of its fact statements plus its fact set.
// Family 0 is the country/capital relation; family 1 is a second relation
// used for the out-of-domain transfer experiment.
struct RelationFamily {
    int id = 0;
    std::string relation_noun;       // "capital": "the <noun> of <s> is <a>"
    std::vector<FactPair> pairs;
    std::vector<double> weights;     // per-subject document share, sums to 1
};

struct WorldOptions {
    int n_family1 = 0;               // 0 disables the second relation family
    double family1_zipf = 1.0;
    // When true, attribute-name weights used for optional city-weighted
    // sampling are drawn independently of the subject weights.
    bool independent_city_weights = false;
};

// Ground-truth fact world with controlled per-subject frequencies.
struct WorldSpec {
    uint64_t seed = 0;
    double zipf_exponent = 0.0;
    std::vector<RelationFamily> families;
    // Per-capital sampling weights for family 0. Equal to the country weights
    // unless independent_city_weights was set.
    std::vector<double> city_weights;
    bool independent_city_weights = false;

    const RelationFamily& capitals() const { return families.at(0); }
    int n_countries() const { return static_cast<int>(families.at(0).pairs.size()); }
    const std::string& country(int i) const { return families.at(0).pairs.at(i).subject; }
    const std::string& capital(int i) const { return families.at(0).pairs.at(i).attribute; }

    // Index of a country by name, -1 if absent.
    int country_index(const std::string& name) const;

    // All entity tokens (subjects + attributes across families).
    std::vector<std::string> entity_tokens() const;

    void validate() const;

    std::string to_json() const;
    static WorldSpec from_json(const std::string& text);
};

// Builds a fact world with Zipf-distributed subject weights:
// weight(rank r) proportional to (r+1)^(-zipf_exponent), normalized.
// Names are synthetic pronounceable words, one vocabulary token each.
WorldSpec build_world(uint64_t seed, int n_countries, double zipf_exponent,
                      const WorldOptions& options = {});

// Zipf weights alone (exposed for direct checks).
std::vector<double> zipf_weights(int n, double exponent);

} // namespace factlab
