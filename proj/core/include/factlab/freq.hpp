#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factlab/corpus.hpp"
#include "factlab/vocab.hpp"

namespace factlab {

// Document-level occurrence counts. A term counts once per document that
// contains it, regardless of how many times it appears there; a pair counts
// once per document containing both members.
struct FrequencyTable {
    std::map<std::string, long long> term_counts;
    std::map<std::pair<std::string, std::string>, long long> pair_counts;

    long long term(const std::string& t) const;
    long long pair(const std::string& a, const std::string& b) const;
};

FrequencyTable count_occurrences(const DocumentSet& docs, const Vocabulary& vocab,
                                 const std::vector<std::string>& terms);

FrequencyTable count_cooccurrences(const DocumentSet& docs, const Vocabulary& vocab,
                                   const std::vector<std::pair<std::string, std::string>>& pairs);

// Pair keys are flattened with this separator wherever a single string key is
// needed (binning, aggregation). Entity names never contain it.
std::string pair_key(const std::string& a, const std::string& b);

// Percentile bin assignment: bin 0 holds the least frequent items, the last
// bin the most frequent. Items are ordered by (count, key) and split into
// near-equal groups whose sizes differ by at most one.
struct BinAssignment {
    std::string criterion;
    int n_bins = 0;
    std::unordered_map<std::string, int> bin_of;
    std::vector<std::vector<std::string>> items; // per bin, in assignment order
    std::unordered_map<std::string, long long> counts;

    int bin(const std::string& key) const; // throws ConfigError on unknown key
};

BinAssignment percentile_bins(const std::vector<std::pair<std::string, long long>>& keyed_counts,
                              int n_bins = 10, const std::string& criterion = "");

// Convenience: bin the given term keys of a table.
BinAssignment percentile_bins_terms(const FrequencyTable& table,
                                    const std::vector<std::string>& keys, int n_bins = 10,
                                    const std::string& criterion = "");

// Tab-separated export (item, count, bin), one header line with a schema tag.
std::string bins_to_tsv(const BinAssignment& bins);
BinAssignment bins_from_tsv(const std::string& text, const std::string& criterion = "");
std::string table_to_tsv(const FrequencyTable& table);

} // namespace factlab
