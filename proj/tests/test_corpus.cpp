#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "factlab/corpus.hpp"
#include "factlab/rng.hpp"
#include "factlab/stats.hpp"
#include "factlab/common.hpp"
#include "factlab/world.hpp"

using namespace factlab;

TEST_CASE("zipf weights") {
    SUBCASE("exponent 0 is uniform") {
        const auto w = zipf_weights(64, 0.0);
        for (double x : w) CHECK(x == doctest::Approx(1.0 / 64).epsilon(1e-12));
    }
    SUBCASE("matches direct formula evaluation") {
        const auto w = zipf_weights(64, 1.2);
        double norm = 0.0;
        for (int r = 0; r < 64; ++r) norm += std::pow(r + 1, -1.2);
        for (int r = 0; r < 64; ++r)
            CHECK(w[r] == doctest::Approx(std::pow(r + 1, -1.2) / norm).epsilon(1e-12));
        double total = 0.0;
        for (double x : w) total += x;
        CHECK(std::fabs(total - 1.0) <= 1e-12);
        for (int r = 1; r < 64; ++r) CHECK(w[r] < w[r - 1]); // strictly decreasing
    }
}

TEST_CASE("build_world") {
    SUBCASE("deterministic and valid") {
        const auto a = build_world(7, 32, 1.0);
        const auto b = build_world(7, 32, 1.0);
        CHECK(a.to_json() == b.to_json());
        CHECK(a.n_countries() == 32);
        a.validate();
    }
    SUBCASE("paper-scale country count is representable") {
        const auto w = build_world(1, 248, 1.2);
        CHECK(w.n_countries() == 248);
    }
    SUBCASE("too few countries rejected") {
        CHECK_THROWS_AS(build_world(0, 9, 1.0), ConfigError);
    }
    SUBCASE("names distinct across all families") {
        WorldOptions opt;
        opt.n_family1 = 16;
        const auto w = build_world(3, 24, 1.0, opt);
        std::set<std::string> names;
        for (const auto& tok : w.entity_tokens()) CHECK(names.insert(tok).second);
    }
    SUBCASE("json round trip") {
        WorldOptions opt;
        opt.n_family1 = 8;
        const auto w = build_world(11, 16, 0.7, opt);
        const auto back = WorldSpec::from_json(w.to_json());
        CHECK(back.to_json() == w.to_json());
    }
}

TEST_CASE("generate_documents basics") {
    const auto world = build_world(5, 16, 1.0);
    const auto templates = default_fact_templates();

    SUBCASE("deterministic for fixed seed") {
        const auto a = generate_documents(world, 400, templates, 9);
        const auto b = generate_documents(world, 400, templates, 9);
        REQUIRE(a.docs.size() == b.docs.size());
        for (size_t i = 0; i < a.docs.size(); ++i) {
            CHECK(a.docs[i].words == b.docs[i].words);
            CHECK(a.docs[i].mentions == b.docs[i].mentions);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(generate_documents(world, 400, {}, 1), ConfigError);
        CHECK_THROWS_AS(generate_documents(world, 100, templates, 1), ConfigError);
    }
}

TEST_CASE("near-degenerate weights put every fact on the top country") {
    // within-spec stand-in for weight(c)=1: an extreme Zipf exponent
    const auto world = build_world(2, 16, 200.0);
    CorpusOptions opt;
    opt.filler_fraction = 0.0;
    opt.second_fact_prob = 0.0;
    const auto corpus = generate_documents(world, 200, default_fact_templates(), 4, opt);
    for (const auto& doc : corpus.docs) {
        REQUIRE(doc.mentions.size() == 1);
        CHECK(doc.mentions[0].subject == 0);
    }
}

TEST_CASE("document counts follow the weights") {
    // uniform weights: per-country doc count within 3 sigma of the
    // multinomial expectation, and chi-square accepts the fit
    const auto world = build_world(21, 64, 0.0);
    CorpusOptions opt;
    opt.filler_fraction = 0.0;
    opt.second_fact_prob = 0.0;
    const int total = 6400;
    const auto corpus = generate_documents(world, total, {statement_template()}, 13, opt);

    std::vector<double> counts(64, 0.0);
    for (const auto& doc : corpus.docs) {
        REQUIRE(doc.mentions.size() == 1);
        counts[static_cast<size_t>(doc.mentions[0].subject)] += 1.0;
    }
    const double p = 1.0 / 64;
    const double mean = total * p;
    const double sigma = std::sqrt(total * p * (1 - p));
    for (double c : counts) {
        CHECK(c >= mean - 3 * sigma);
        CHECK(c <= mean + 3 * sigma);
    }
    const auto chi = chi_square_gof(counts, std::vector<double>(64, mean));
    CHECK(chi.p_value > 0.01);
}

TEST_CASE("zipf corpus ranks top country above bottom in nearly all seeds") {
    const auto world = build_world(2, 64, 1.2);
    CorpusOptions opt;
    opt.filler_fraction = 0.0;
    opt.second_fact_prob = 0.0;
    int wins = 0;
    for (int seed = 0; seed < 100; ++seed) {
        const auto corpus = generate_documents(world, 640, {statement_template()}, seed, opt);
        int top = 0, bottom = 0;
        for (const auto& doc : corpus.docs) {
            if (doc.mentions[0].subject == 0) ++top;
            if (doc.mentions[0].subject == 63) ++bottom;
        }
        if (top > bottom) ++wins;
    }
    CHECK(wins >= 99);
}

TEST_CASE("metadata fidelity: mentions equal the scan-recoverable pairs") {
    WorldOptions wopt;
    wopt.n_family1 = 8;
    const auto world = build_world(17, 16, 1.0, wopt);
    CorpusOptions opt;
    opt.second_fact_prob = 0.5;
    opt.family1_fraction = 0.3;
    const auto corpus = generate_documents(world, 500, default_fact_templates(), 23, opt);

    for (const auto& doc : corpus.docs) {
        std::set<std::string> words(doc.words.begin(), doc.words.end());
        // recover pairs by scanning tokens against the world's truth
        std::set<std::tuple<int, int, int>> recovered;
        for (const auto& fam : world.families) {
            for (size_t i = 0; i < fam.pairs.size(); ++i) {
                if (words.count(fam.pairs[i].subject) && words.count(fam.pairs[i].attribute))
                    recovered.insert({fam.id, static_cast<int>(i), static_cast<int>(i)});
            }
        }
        std::set<std::tuple<int, int, int>> stated;
        for (const auto& m : doc.mentions) stated.insert({m.family, m.subject, m.attribute});
        CHECK(stated == recovered);
    }
}

TEST_CASE("build_vocab") {
    const auto world = build_world(29, 16, 1.0);
    const auto raw = generate_documents(world, 300, default_fact_templates(), 3);

    SUBCASE("size is distinct words plus specials") {
        std::set<std::string> distinct;
        for (const auto& d : raw.docs) distinct.insert(d.words.begin(), d.words.end());
        const auto vocab = build_vocab(raw);
        CHECK(vocab.size() == static_cast<int>(distinct.size()) + 2);
    }
    SUBCASE("two runs assign identical ids") {
        const auto a = build_vocab(raw);
        const auto b = build_vocab(raw);
        CHECK(a.tokens() == b.tokens());
    }
    SUBCASE("round trip over all documents") {
        const auto vocab = build_vocab(raw);
        const auto docs = encode_corpus(raw, vocab);
        for (size_t i = 0; i < docs.docs.size(); ++i) {
            CHECK(vocab.decode(docs.docs[i].tokens) == raw.docs[i].words);
            CHECK(vocab.encode(vocab.decode(docs.docs[i].tokens)) == docs.docs[i].tokens);
        }
    }
    SUBCASE("every token id below vocab size") {
        const auto vocab = build_vocab(raw);
        const auto docs = encode_corpus(raw, vocab);
        for (const auto& d : docs.docs)
            for (int t : d.tokens) {
                CHECK(t >= 0);
                CHECK(t < vocab.size());
            }
    }
}

TEST_CASE("corpus jsonl round trip is byte identical") {
    const auto world = build_world(31, 12, 0.8);
    const auto raw = generate_documents(world, 150, default_fact_templates(), 8);
    const auto vocab = build_vocab(raw);
    const auto docs = encode_corpus(raw, vocab);

    const std::string text = corpus_to_jsonl(docs);
    const auto back = corpus_from_jsonl(text);
    CHECK(corpus_to_jsonl(back) == text);
    REQUIRE(back.docs.size() == docs.docs.size());
    CHECK(back.docs[0].tokens == docs.docs[0].tokens);
}

TEST_CASE("filler documents mention no entity") {
    const auto world = build_world(37, 16, 1.0);
    CorpusOptions opt;
    opt.filler_fraction = 1.0;
    const auto raw = generate_documents(world, 200, default_fact_templates(), 5, opt);
    std::set<std::string> entities;
    for (const auto& t : world.entity_tokens()) entities.insert(t);
    for (const auto& doc : raw.docs) {
        CHECK(doc.mentions.empty());
        for (const auto& w : doc.words) CHECK(entities.count(w) == 0);
    }
}
