#include "factlab/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "factlab/common.hpp"
#include "factlab/rng.hpp"

namespace factlab {

std::vector<double> zipf_weights(int n, double exponent) {
    std::vector<double> w(static_cast<size_t>(n));
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        w[static_cast<size_t>(r)] = std::pow(static_cast<double>(r + 1), -exponent);
        total += w[static_cast<size_t>(r)];
    }
    for (auto& x : w) x /= total;
    return w;
}

namespace {

// Pronounceable CVCV... words; unique, lowercase, never colliding with the
// fixed template words.
class NameFactory {
public:
    explicit NameFactory(Rng& rng) : rng_(rng) {
        for (const char* w : {"the", "capital", "of", "is", "q", "a", "what", "city",
                              "anthem", "maker", "in", "land", "people", "visit",
                              "near", "old", "new", "town", "built", "lies", "?",
                              ":", ".", ","}) {
            used_.insert(w);
        }
    }

    std::string fresh(int min_len = 5, int max_len = 7) {
        static const std::string consonants = "bdfgklmnprstvz";
        static const std::string vowels = "aeiou";
        for (int attempt = 0; attempt < 10000; ++attempt) {
            const int len = rng_.next_int(min_len, max_len);
            std::string s;
            for (int i = 0; i < len; ++i) {
                const std::string& pool = (i % 2 == 0) ? consonants : vowels;
                s += pool[rng_.next_below(pool.size())];
            }
            if (used_.insert(s).second) return s;
        }
        throw RuntimeFailure("name generation exhausted the candidate space");
    }

private:
    Rng& rng_;
    std::set<std::string> used_;
};

RelationFamily make_family(int id, const std::string& noun, int n_pairs, double exponent,
                           NameFactory& names) {
    RelationFamily fam;
    fam.id = id;
    fam.relation_noun = noun;
    fam.pairs.reserve(static_cast<size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        FactPair p;
        p.subject = names.fresh();
        p.attribute = names.fresh();
        fam.pairs.push_back(std::move(p));
    }
    fam.weights = zipf_weights(n_pairs, exponent);
    return fam;
}

} // namespace

WorldSpec build_world(uint64_t seed, int n_countries, double zipf_exponent,
                      const WorldOptions& options) {
    if (n_countries < 10)
        throw ConfigError("build_world: need at least 10 countries, got " +
                          std::to_string(n_countries) + " (percentile bins degenerate)");
    if (zipf_exponent < 0.0) throw ConfigError("build_world: zipf_exponent must be >= 0");

    Rng rng(derive_seed(seed, /*stage_tag=*/0x776f726c64ull)); // "world"
    NameFactory names(rng);

    WorldSpec world;
    world.seed = seed;
    world.zipf_exponent = zipf_exponent;
    world.families.push_back(make_family(0, "capital", n_countries, zipf_exponent, names));
    if (options.n_family1 > 0) {
        world.families.push_back(
            make_family(1, "anthem", options.n_family1, options.family1_zipf, names));
    }

    world.independent_city_weights = options.independent_city_weights;
    if (options.independent_city_weights) {
        // A seeded permutation of the Zipf weights decouples city frequency
        // from the frequency of the city's own country.
        world.city_weights = world.families[0].weights;
        rng.shuffle(world.city_weights);
    } else {
        world.city_weights = world.families[0].weights;
    }

    world.validate();
    return world;
}

int WorldSpec::country_index(const std::string& name) const {
    const auto& pairs = families.at(0).pairs;
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].subject == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::string> WorldSpec::entity_tokens() const {
    std::vector<std::string> out;
    for (const auto& fam : families) {
        for (const auto& p : fam.pairs) {
            out.push_back(p.subject);
            out.push_back(p.attribute);
        }
    }
    return out;
}

void WorldSpec::validate() const {
    if (families.empty()) throw ConfigError("world has no relation families");
    std::set<std::string> all;
    for (const auto& fam : families) {
        if (fam.pairs.size() != fam.weights.size())
            throw ConfigError("family weights do not match its pair count");
        double total = 0.0;
        for (double w : fam.weights) {
            if (!(w > 0.0)) throw ConfigError("frequency weights must be strictly positive");
            total += w;
        }
        if (std::fabs(total - 1.0) > 1e-9)
            throw ConfigError("frequency weights must sum to 1");
        for (const auto& p : fam.pairs) {
            if (!all.insert(p.subject).second)
                throw ConfigError("duplicate entity name: " + p.subject);
            if (!all.insert(p.attribute).second)
                throw ConfigError("duplicate entity name: " + p.attribute);
            if (p.subject.find(' ') != std::string::npos ||
                p.attribute.find(' ') != std::string::npos)
                throw ConfigError("entity names must be single tokens");
        }
    }
    if (city_weights.size() != families.at(0).pairs.size())
        throw ConfigError("city weights do not match the country count");
}

std::string WorldSpec::to_json() const {
    nlohmann::json j;
    j["schema"] = "factlab.world.v1";
    j["seed"] = seed;
    j["zipf_exponent"] = zipf_exponent;
    j["independent_city_weights"] = independent_city_weights;
    j["city_weights"] = city_weights;
    j["families"] = nlohmann::json::array();
    for (const auto& fam : families) {
        nlohmann::json jf;
        jf["id"] = fam.id;
        jf["relation_noun"] = fam.relation_noun;
        jf["weights"] = fam.weights;
        jf["pairs"] = nlohmann::json::array();
        for (const auto& p : fam.pairs) jf["pairs"].push_back({p.subject, p.attribute});
        j["families"].push_back(std::move(jf));
    }
    return j.dump(2) + "\n";
}

WorldSpec WorldSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "factlab.world.v1")
        throw IoError("world file has unknown schema tag");
    WorldSpec world;
    world.seed = j.at("seed").get<uint64_t>();
    world.zipf_exponent = j.at("zipf_exponent").get<double>();
    world.independent_city_weights = j.at("independent_city_weights").get<bool>();
    world.city_weights = j.at("city_weights").get<std::vector<double>>();
    for (const auto& jf : j.at("families")) {
        RelationFamily fam;
        fam.id = jf.at("id").get<int>();
        fam.relation_noun = jf.at("relation_noun").get<std::string>();
        fam.weights = jf.at("weights").get<std::vector<double>>();
        for (const auto& jp : jf.at("pairs")) {
            fam.pairs.push_back({jp.at(0).get<std::string>(), jp.at(1).get<std::string>()});
        }
        world.families.push_back(std::move(fam));
    }
    world.validate();
    return world;
}

} // namespace factlab
