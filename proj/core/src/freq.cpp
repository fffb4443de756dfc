#include "factlab/freq.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "factlab/common.hpp"

namespace factlab {

long long FrequencyTable::term(const std::string& t) const {
    auto it = term_counts.find(t);
    return it == term_counts.end() ? 0 : it->second;
}

long long FrequencyTable::pair(const std::string& a, const std::string& b) const {
    auto it = pair_counts.find({a, b});
    return it == pair_counts.end() ? 0 : it->second;
}

std::string pair_key(const std::string& a, const std::string& b) { return a + "|" + b; }

namespace {

// Resolves term ids up front; unknown terms keep count 0.
std::vector<int> resolve_ids(const Vocabulary& vocab, const std::vector<std::string>& terms) {
    std::vector<int> ids(terms.size(), -1);
    for (size_t i = 0; i < terms.size(); ++i) {
        if (vocab.contains(terms[i])) ids[i] = vocab.id(terms[i]);
    }
    return ids;
}

} // namespace

FrequencyTable count_occurrences(const DocumentSet& docs, const Vocabulary& vocab,
                                 const std::vector<std::string>& terms) {
    const std::vector<int> ids = resolve_ids(vocab, terms);
    std::vector<long long> counts(terms.size(), 0);

#pragma omp parallel
    {
        std::vector<long long> local(terms.size(), 0);
        std::unordered_set<int> present;
#pragma omp for schedule(static) nowait
        for (long long d = 0; d < static_cast<long long>(docs.docs.size()); ++d) {
            present.clear();
            for (int t : docs.docs[static_cast<size_t>(d)].tokens) present.insert(t);
            for (size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] >= 0 && present.count(ids[i])) ++local[i];
            }
        }
#pragma omp critical
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += local[i];
    }

    FrequencyTable table;
    for (size_t i = 0; i < terms.size(); ++i) table.term_counts[terms[i]] = counts[i];
    return table;
}

FrequencyTable count_cooccurrences(
    const DocumentSet& docs, const Vocabulary& vocab,
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<std::pair<int, int>> ids(pairs.size(), {-1, -1});
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (vocab.contains(pairs[i].first) && vocab.contains(pairs[i].second)) {
            ids[i] = {vocab.id(pairs[i].first), vocab.id(pairs[i].second)};
        }
    }
    std::vector<long long> counts(pairs.size(), 0);

#pragma omp parallel
    {
        std::vector<long long> local(pairs.size(), 0);
        std::unordered_set<int> present;
#pragma omp for schedule(static) nowait
        for (long long d = 0; d < static_cast<long long>(docs.docs.size()); ++d) {
            present.clear();
            for (int t : docs.docs[static_cast<size_t>(d)].tokens) present.insert(t);
            for (size_t i = 0; i < ids.size(); ++i) {
                if (ids[i].first >= 0 && present.count(ids[i].first) &&
                    present.count(ids[i].second))
                    ++local[i];
            }
        }
#pragma omp critical
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += local[i];
    }

    FrequencyTable table;
    for (size_t i = 0; i < pairs.size(); ++i) table.pair_counts[pairs[i]] = counts[i];
    return table;
}

int BinAssignment::bin(const std::string& key) const {
    auto it = bin_of.find(key);
    if (it == bin_of.end())
        throw ConfigError("bin assignment '" + criterion + "' has no key '" + key + "'");
    return it->second;
}

BinAssignment percentile_bins(const std::vector<std::pair<std::string, long long>>& keyed_counts,
                              int n_bins, const std::string& criterion) {
    if (keyed_counts.empty()) throw ConfigError("percentile_bins: no keys given");
    if (n_bins <= 0 || n_bins > static_cast<int>(keyed_counts.size()))
        throw ConfigError("percentile_bins: n_bins must be in [1, number of keys]");

    std::vector<std::pair<std::string, long long>> sorted = keyed_counts;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });

    BinAssignment out;
    out.criterion = criterion;
    out.n_bins = n_bins;
    out.items.resize(static_cast<size_t>(n_bins));

    const size_t n = sorted.size();
    const size_t base = n / static_cast<size_t>(n_bins);
    const size_t extra = n % static_cast<size_t>(n_bins);
    size_t pos = 0;
    for (int b = 0; b < n_bins; ++b) {
        // The first (n mod n_bins) bins take the extra element.
        const size_t len = base + (static_cast<size_t>(b) < extra ? 1 : 0);
        for (size_t k = 0; k < len; ++k, ++pos) {
            out.items[static_cast<size_t>(b)].push_back(sorted[pos].first);
            out.bin_of[sorted[pos].first] = b;
            out.counts[sorted[pos].first] = sorted[pos].second;
        }
    }
    return out;
}

BinAssignment percentile_bins_terms(const FrequencyTable& table,
                                    const std::vector<std::string>& keys, int n_bins,
                                    const std::string& criterion) {
    std::vector<std::pair<std::string, long long>> keyed;
    keyed.reserve(keys.size());
    for (const auto& k : keys) keyed.emplace_back(k, table.term(k));
    return percentile_bins(keyed, n_bins, criterion);
}

std::string bins_to_tsv(const BinAssignment& bins) {
    std::string out = "# schema: factlab.bins.v1\titem\tcount\tbin\n";
    for (int b = 0; b < bins.n_bins; ++b) {
        for (const auto& item : bins.items[static_cast<size_t>(b)]) {
            out += item;
            out += '\t';
            out += std::to_string(bins.counts.at(item));
            out += '\t';
            out += std::to_string(b);
            out += '\n';
        }
    }
    return out;
}

BinAssignment bins_from_tsv(const std::string& text, const std::string& criterion) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line.rfind("# schema: factlab.bins.v1", 0) != 0)
        throw IoError("bins file has unknown schema tag");
    BinAssignment out;
    out.criterion = criterion;
    out.n_bins = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw IoError("bins file has a malformed row");
        const std::string item = line.substr(0, t1);
        const long long count = std::stoll(line.substr(t1 + 1, t2 - t1 - 1));
        const int b = std::stoi(line.substr(t2 + 1));
        if (b + 1 > out.n_bins) {
            out.n_bins = b + 1;
            out.items.resize(static_cast<size_t>(out.n_bins));
        }
        out.items[static_cast<size_t>(b)].push_back(item);
        out.bin_of[item] = b;
        out.counts[item] = count;
    }
    return out;
}

std::string table_to_tsv(const FrequencyTable& table) {
    std::string out = "# schema: factlab.freqtable.v1\tkey\tcount\n";
    for (const auto& [term, count] : table.term_counts) {
        out += term;
        out += '\t';
        out += std::to_string(count);
        out += '\n';
    }
    for (const auto& [pr, count] : table.pair_counts) {
        out += pair_key(pr.first, pr.second);
        out += '\t';
        out += std::to_string(count);
        out += '\n';
    }
    return out;
}

} // namespace factlab
