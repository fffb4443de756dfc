#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "factlab/common.hpp"
#include "factlab/corpus.hpp"
#include "factlab/freq.hpp"
#include "factlab/rng.hpp"
#include "factlab/world.hpp"

using namespace factlab;

namespace {

// Small random corpus over a fixed word list, for the brute-force oracles.
DocumentSet random_docs(int n_docs, int max_len, uint64_t seed, const Vocabulary& vocab) {
    Rng rng(seed);
    DocumentSet out;
    for (int i = 0; i < n_docs; ++i) {
        Document d;
        const int len = rng.next_int(1, max_len);
        for (int j = 0; j < len; ++j)
            d.tokens.push_back(rng.next_int(2, vocab.size() - 1)); // skip specials
        out.docs.push_back(std::move(d));
    }
    return out;
}

Vocabulary letters_vocab() {
    std::vector<std::string> words;
    for (char c = 'a'; c <= 'z'; ++c) words.push_back(std::string(1, c));
    return Vocabulary(words);
}

} // namespace

TEST_CASE("count_occurrences semantics") {
    const Vocabulary vocab = letters_vocab();

    SUBCASE("absent term counts zero, unknown term is not an error") {
        DocumentSet docs;
        docs.docs.push_back({{vocab.id("a"), vocab.id("b")}, {}});
        const auto table = count_occurrences(docs, vocab, {"c", "zz_not_in_vocab"});
        CHECK(table.term("c") == 0);
        CHECK(table.term("zz_not_in_vocab") == 0);
    }
    SUBCASE("document-level counting: five repeats count once") {
        DocumentSet docs;
        Document d;
        for (int i = 0; i < 5; ++i) d.tokens.push_back(vocab.id("q"));
        docs.docs.push_back(d);
        const auto table = count_occurrences(docs, vocab, {"q"});
        CHECK(table.term("q") == 1);
    }
    SUBCASE("random corpus equals the per-document scan oracle") {
        const auto docs = random_docs(1000, 12, 99, vocab);
        std::vector<std::string> terms;
        for (char c = 'a'; c <= 'z'; ++c) terms.push_back(std::string(1, c));
        const auto table = count_occurrences(docs, vocab, terms);
        for (const auto& term : terms) {
            long long oracle = 0;
            const int id = vocab.id(term);
            for (const auto& d : docs.docs) {
                if (std::find(d.tokens.begin(), d.tokens.end(), id) != d.tokens.end()) ++oracle;
            }
            CHECK(table.term(term) == oracle);
        }
    }
}

TEST_CASE("count_cooccurrences semantics") {
    const Vocabulary vocab = letters_vocab();

    SUBCASE("terms in disjoint documents never co-occur") {
        DocumentSet docs;
        docs.docs.push_back({{vocab.id("a")}, {}});
        docs.docs.push_back({{vocab.id("b")}, {}});
        const auto table = count_cooccurrences(docs, vocab, {{"a", "b"}});
        CHECK(table.pair("a", "b") == 0);
    }
    SUBCASE("always co-stated pair count equals the term count") {
        const auto world = build_world(3, 16, 1.0);
        CorpusOptions opt;
        opt.filler_fraction = 0.0;
        opt.second_fact_prob = 0.0;
        const auto raw = generate_documents(world, 300, {statement_template()}, 7, opt);
        const auto wvocab = build_vocab(raw);
        const auto docs = encode_corpus(raw, wvocab);
        const auto& pair0 = world.capitals().pairs[0];
        const auto occ = count_occurrences(docs, wvocab, {pair0.subject});
        const auto coo = count_cooccurrences(docs, wvocab, {{pair0.subject, pair0.attribute}});
        CHECK(coo.pair(pair0.subject, pair0.attribute) == occ.term(pair0.subject));
    }
    SUBCASE("random corpus equals the brute-force oracle") {
        const auto docs = random_docs(800, 10, 1234, vocab);
        std::vector<std::pair<std::string, std::string>> pairs;
        for (char a = 'a'; a <= 'f'; ++a)
            for (char b = 'g'; b <= 'm'; ++b)
                pairs.push_back({std::string(1, a), std::string(1, b)});
        const auto table = count_cooccurrences(docs, vocab, pairs);
        for (const auto& [a, b] : pairs) {
            long long oracle = 0;
            for (const auto& d : docs.docs) {
                const bool has_a =
                    std::find(d.tokens.begin(), d.tokens.end(), vocab.id(a)) != d.tokens.end();
                const bool has_b =
                    std::find(d.tokens.begin(), d.tokens.end(), vocab.id(b)) != d.tokens.end();
                if (has_a && has_b) ++oracle;
            }
            CHECK(table.pair(a, b) == oracle);
        }
    }
    SUBCASE("pair count never exceeds either term count") {
        const auto docs = random_docs(500, 8, 777, vocab);
        std::vector<std::string> terms = {"a", "b", "c", "d"};
        const auto occ = count_occurrences(docs, vocab, terms);
        std::vector<std::pair<std::string, std::string>> pairs = {
            {"a", "b"}, {"a", "c"}, {"b", "d"}, {"c", "d"}};
        const auto coo = count_cooccurrences(docs, vocab, pairs);
        for (const auto& [a, b] : pairs)
            CHECK(coo.pair(a, b) <= std::min(occ.term(a), occ.term(b)));
    }
    SUBCASE("counting is order independent") {
        auto docs = random_docs(300, 8, 55, vocab);
        std::vector<std::string> terms = {"a", "m", "z"};
        const auto before = count_occurrences(docs, vocab, terms);
        std::reverse(docs.docs.begin(), docs.docs.end());
        const auto after = count_occurrences(docs, vocab, terms);
        for (const auto& t : terms) CHECK(before.term(t) == after.term(t));
    }
}

namespace {

// Independent oracle: sort by (count, key) then slice into n near-equal runs.
std::vector<std::vector<std::string>> sort_slice_oracle(
    std::vector<std::pair<std::string, long long>> items, int n_bins) {
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    std::vector<std::vector<std::string>> bins(static_cast<size_t>(n_bins));
    const size_t n = items.size();
    size_t pos = 0;
    for (int b = 0; b < n_bins; ++b) {
        size_t len = n / static_cast<size_t>(n_bins);
        if (static_cast<size_t>(b) < n % static_cast<size_t>(n_bins)) ++len;
        for (size_t k = 0; k < len; ++k, ++pos) bins[static_cast<size_t>(b)].push_back(items[pos].first);
    }
    return bins;
}

} // namespace

TEST_CASE("percentile_bins") {
    SUBCASE("248 items in 10 bins gives sizes 24 or 25") {
        std::vector<std::pair<std::string, long long>> items;
        Rng rng(5);
        for (int i = 0; i < 248; ++i)
            items.push_back({"item" + std::to_string(i),
                             static_cast<long long>(rng.next_below(10000))});
        const auto bins = percentile_bins(items, 10, "country");
        size_t total = 0;
        for (const auto& b : bins.items) {
            CHECK(b.size() >= 24);
            CHECK(b.size() <= 25);
            total += b.size();
        }
        CHECK(total == 248);
    }
    SUBCASE("all-equal counts: pure tie-break, near-equal bins") {
        std::vector<std::pair<std::string, long long>> items;
        for (int i = 0; i < 23; ++i) items.push_back({"k" + std::to_string(i), 7});
        const auto bins = percentile_bins(items, 5);
        for (const auto& b : bins.items) {
            CHECK(b.size() >= 4);
            CHECK(b.size() <= 5);
        }
        // deterministic rerun
        const auto again = percentile_bins(items, 5);
        CHECK(bins.items == again.items);
    }
    SUBCASE("random counts match the sort-slice oracle exactly") {
        Rng rng(42);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::pair<std::string, long long>> items;
            const int n = rng.next_int(10, 300);
            for (int i = 0; i < n; ++i)
                items.push_back({"t" + std::to_string(i),
                                 static_cast<long long>(rng.next_below(50))}); // many ties
            const int n_bins = rng.next_int(1, std::min(10, n));
            const auto bins = percentile_bins(items, n_bins);
            CHECK(bins.items == sort_slice_oracle(items, n_bins));
        }
    }
    SUBCASE("bin monotonicity at boundaries") {
        Rng rng(17);
        std::vector<std::pair<std::string, long long>> items;
        for (int i = 0; i < 100; ++i)
            items.push_back({"x" + std::to_string(i),
                             static_cast<long long>(rng.next_below(1000))});
        const auto bins = percentile_bins(items, 10);
        for (int b = 0; b + 1 < bins.n_bins; ++b) {
            long long max_here = 0, min_next = 1LL << 60;
            for (const auto& k : bins.items[static_cast<size_t>(b)])
                max_here = std::max(max_here, bins.counts.at(k));
            for (const auto& k : bins.items[static_cast<size_t>(b) + 1])
                min_next = std::min(min_next, bins.counts.at(k));
            CHECK(max_here <= min_next);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(percentile_bins({}, 10), ConfigError);
        CHECK_THROWS_AS(percentile_bins({{"a", 1}, {"b", 2}}, 3), ConfigError);
    }
    SUBCASE("tsv round trip") {
        std::vector<std::pair<std::string, long long>> items;
        for (int i = 0; i < 30; ++i) items.push_back({"w" + std::to_string(i), i * 3 % 11});
        const auto bins = percentile_bins(items, 10, "country");
        const auto back = bins_from_tsv(bins_to_tsv(bins), "country");
        CHECK(back.items == bins.items);
        CHECK(back.n_bins == bins.n_bins);
        for (const auto& [k, b] : bins.bin_of) CHECK(back.bin(k) == b);
    }
}
