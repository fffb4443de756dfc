#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "factlab/attribution.hpp"
#include "factlab/svg.hpp"
#include "factlab/common.hpp"
#include "factlab/corpus.hpp"
#include "factlab/rng.hpp"
#include "factlab/world.hpp"

using namespace factlab;

namespace {

struct Fixture {
    WorldSpec world;
    Vocabulary vocab;
    std::vector<PromptInstance> prompts;
    Checkpoint ckpt;

    Fixture() : world(build_world(3, 12, 1.0)) {
        const auto raw = generate_documents(world, 150, default_fact_templates(), 4);
        vocab = build_vocab(raw);
        prompts = build_prompt_set(world, vocab, 0);
        ModelConfig mc;
        mc.n_layers = 2;
        mc.n_heads = 4;
        mc.d_model = 32;
        mc.vocab_size = vocab.size();
        mc.max_context = 48;
        ckpt = Checkpoint::random_init(mc, 21);
    }
};

} // namespace

TEST_CASE("head_logit_diff basics") {
    Fixture f;
    const auto fwd = forward(f.ckpt, f.prompts[0].tokens, -1);

    SUBCASE("zero trace gives zero") {
        ResidualTrace zero = fwd.trace;
        std::fill(zero.head_result.begin(), zero.head_result.end(), 0.0);
        CHECK(head_logit_diff(f.ckpt, zero, 0, 0, 3, 4) == 0.0);
    }
    SUBCASE("identical tokens give zero") {
        CHECK(head_logit_diff(f.ckpt, fwd.trace, 1, 2, 5, 5) == 0.0);
    }
    SUBCASE("antisymmetry under token swap") {
        const double ab = head_logit_diff(f.ckpt, fwd.trace, 0, 1, 3, 9);
        const double ba = head_logit_diff(f.ckpt, fwd.trace, 0, 1, 9, 3);
        CHECK(ab == doctest::Approx(-ba).epsilon(1e-12));
    }
    SUBCASE("linearity in the trace") {
        ResidualTrace scaled = fwd.trace;
        for (auto& v : scaled.head_result) v *= 2.5;
        const double one = head_logit_diff(f.ckpt, fwd.trace, 1, 0, 3, 9);
        const double two = head_logit_diff(f.ckpt, scaled, 1, 0, 3, 9);
        CHECK(two == doctest::Approx(2.5 * one).epsilon(1e-10));
    }
    SUBCASE("out-of-range indices rejected") {
        CHECK_THROWS_AS(head_logit_diff(f.ckpt, fwd.trace, 5, 0, 1, 2), ConfigError);
        CHECK_THROWS_AS(head_logit_diff(f.ckpt, fwd.trace, 0, 9, 1, 2), ConfigError);
    }
}

TEST_CASE("full residual decomposition reproduces the logit difference") {
    // sum of all head contributions plus embedding/MLP/bias contributions,
    // projected through the unembedding, equals the pre-final-norm logit
    // difference
    Fixture f;
    const auto& c = f.ckpt.config;
    const int D = c.d_model;
    const int V = c.vocab_size;

    for (int trial = 0; trial < 8; ++trial) {
        const auto& p = f.prompts[static_cast<size_t>(trial * 7)];
        const auto fwd = forward(f.ckpt, p.tokens, -1);
        const int mem = p.mem_token, ctx = p.ctx_token;

        double total = 0.0;
        for (int l = 0; l < c.n_layers; ++l)
            for (int h = 0; h < c.n_heads; ++h)
                total += head_logit_diff(f.ckpt, fwd.trace, l, h, mem, ctx);

        // embedding + MLP outputs + attention biases, dotted with the
        // unembedding difference
        const float* w_u = f.ckpt.at(f.ckpt.layout.w_u);
        auto project = [&](const double* vec) {
            double acc = 0.0;
            for (int i = 0; i < D; ++i)
                acc += vec[i] * (static_cast<double>(w_u[static_cast<size_t>(i) * V + mem]) -
                                 static_cast<double>(w_u[static_cast<size_t>(i) * V + ctx]));
            return acc;
        };
        total += project(fwd.trace.embedding.data());
        for (int l = 0; l < c.n_layers; ++l) {
            total += project(fwd.trace.mlp(l));
            std::vector<double> bias(static_cast<size_t>(D));
            const float* b_o = f.ckpt.at(f.ckpt.layout.layers[static_cast<size_t>(l)].b_o);
            for (int i = 0; i < D; ++i) bias[static_cast<size_t>(i)] = b_o[i];
            total += project(bias.data());
        }

        const double direct = project(fwd.trace.final_residual.data());
        CHECK(total == doctest::Approx(direct).epsilon(1e-4));
    }
}

TEST_CASE("attribution_map") {
    Fixture f;
    SUBCASE("single-prompt map equals direct calls") {
        const std::vector<PromptInstance> one = {f.prompts[5]};
        const auto map = attribution_map(f.ckpt, one);
        const auto fwd = forward(f.ckpt, one[0].tokens, -1);
        for (int l = 0; l < f.ckpt.config.n_layers; ++l)
            for (int h = 0; h < f.ckpt.config.n_heads; ++h)
                CHECK(map.at(l, h) == doctest::Approx(head_logit_diff(
                                          f.ckpt, fwd.trace, l, h, one[0].mem_token,
                                          one[0].ctx_token))
                                          .epsilon(1e-12));
    }
    SUBCASE("batch mean equals the mean of per-prompt maps") {
        std::vector<PromptInstance> batch(f.prompts.begin(), f.prompts.begin() + 15);
        const auto whole = attribution_map(f.ckpt, batch, 5);
        std::vector<double> mean(whole.grid.size(), 0.0);
        for (const auto& p : batch) {
            const auto single = attribution_map(f.ckpt, {p});
            for (size_t i = 0; i < mean.size(); ++i) mean[i] += single.grid[i];
        }
        for (size_t i = 0; i < mean.size(); ++i)
            CHECK(whole.grid[i] == doctest::Approx(mean[i] / 15.0).epsilon(1e-9));
    }
    SUBCASE("map over the large shape has 384 entries") {
        ModelConfig big;
        big.n_layers = 24;
        big.n_heads = 16;
        big.d_model = 32;
        big.vocab_size = f.vocab.size();
        big.max_context = 48;
        const auto ckpt = Checkpoint::random_init(big, 2);
        const auto map = attribution_map(ckpt, {f.prompts[0], f.prompts[1]});
        CHECK(map.grid.size() == 384);
    }
    SUBCASE("untokenizable prompts are skipped with a warning") {
        auto prompts = std::vector<PromptInstance>(f.prompts.begin(), f.prompts.begin() + 4);
        prompts[1].tokens.push_back(f.vocab.size() + 100);
        const auto map = attribution_map(f.ckpt, prompts);
        CHECK(map.n_prompts == 3);
        REQUIRE(map.warnings.size() == 1);
        CHECK(map.warnings[0].find("skipped") != std::string::npos);
    }
}

TEST_CASE("sample_selection_set") {
    Fixture f;
    std::vector<std::pair<std::string, long long>> counts;
    for (int i = 0; i < f.world.n_countries(); ++i) counts.push_back({f.world.country(i), i});
    const auto bins = percentile_bins(counts, 3, "country");

    // synthetic records: prompts for countries in even position in-context,
    // odd memorized
    std::vector<BehaviorRecord> records(f.prompts.size());
    for (size_t i = 0; i < f.prompts.size(); ++i) {
        records[i].prompt_id = f.prompts[i].id;
        records[i].cls = (i % 2 == 0) ? AnswerClass::InContext : AnswerClass::Memorized;
    }

    SUBCASE("per_bin draws per class per bin, deterministic in the seed") {
        const auto a = sample_selection_set(records, f.prompts, bins, 4, 77);
        const auto b = sample_selection_set(records, f.prompts, bins, 4, 77);
        CHECK(a.in_context_ids == b.in_context_ids);
        CHECK(a.memorized_ids == b.memorized_ids);
        CHECK(a.in_context_ids.size() == 12); // 3 bins x 4
        CHECK(a.memorized_ids.size() == 12);
        // classes honored
        std::set<int> ctx_ids(a.in_context_ids.begin(), a.in_context_ids.end());
        for (const auto& r : records) {
            if (ctx_ids.count(r.prompt_id)) CHECK(r.cls == AnswerClass::InContext);
        }
    }
    SUBCASE("scarce bins take what exists and warn") {
        const auto sel = sample_selection_set(records, f.prompts, bins, 1000, 5);
        CHECK_FALSE(sel.warnings.empty());
        CHECK(sel.in_context_ids.size() + sel.memorized_ids.size() == f.prompts.size());
    }
    SUBCASE("globally absent class is an error") {
        for (auto& r : records) r.cls = AnswerClass::Memorized;
        CHECK_THROWS_AS(sample_selection_set(records, f.prompts, bins, 2, 5), RuntimeFailure);
    }
    SUBCASE("per_bin=1 with 1 bin gives 2 prompts") {
        std::vector<std::pair<std::string, long long>> c1;
        for (int i = 0; i < f.world.n_countries(); ++i) c1.push_back({f.world.country(i), 1});
        const auto one = percentile_bins(c1, 1, "country");
        const auto sel = sample_selection_set(records, f.prompts, one, 1, 9);
        CHECK(sel.in_context_ids.size() + sel.memorized_ids.size() == 2);
    }
}

TEST_CASE("select_heads") {
    SUBCASE("single nonzero cell selects that head for its polarity") {
        AttributionMap a, b;
        a.n_layers = b.n_layers = 2;
        a.n_heads = b.n_heads = 3;
        a.grid.assign(6, 0.0);
        b.grid.assign(6, 0.0);
        a.at(1, 2) = 4.0;
        b.at(1, 2) = 2.0;
        const auto sel = select_heads({a, b});
        CHECK(sel.memory_head.layer == 1);
        CHECK(sel.memory_head.head == 2);
        CHECK(sel.memory_head.score == doctest::Approx(3.0));
        // most negative is any zero cell; ranked list is complete
        CHECK(sel.ranked.size() == 6);
    }
    SUBCASE("hand-built maps match a sort oracle") {
        Rng rng(6);
        std::vector<AttributionMap> maps(3);
        for (auto& m : maps) {
            m.n_layers = 2;
            m.n_heads = 4;
            m.grid.resize(8);
            for (auto& v : m.grid) v = rng.next_gauss();
        }
        const auto sel = select_heads(maps);
        std::vector<double> means(8, 0.0);
        for (const auto& m : maps)
            for (size_t i = 0; i < 8; ++i) means[i] += m.grid[i] / 3.0;
        const double top = *std::max_element(means.begin(), means.end());
        const double bottom = *std::min_element(means.begin(), means.end());
        CHECK(sel.memory_head.score == doctest::Approx(top).epsilon(1e-12));
        CHECK(sel.context_head.score == doctest::Approx(bottom).epsilon(1e-12));
        for (size_t i = 1; i < sel.ranked.size(); ++i)
            CHECK(sel.ranked[i - 1].score >= sel.ranked[i].score);
    }
    SUBCASE("needs two maps; all-zero scores are degenerate") {
        AttributionMap a;
        a.n_layers = 1;
        a.n_heads = 2;
        a.grid.assign(2, 0.0);
        CHECK_THROWS_AS(select_heads({a}), ConfigError);
        CHECK_THROWS_AS(select_heads({a, a}), RuntimeFailure);
    }
    SUBCASE("selection json round trip") {
        AttributionMap a, b;
        a.n_layers = b.n_layers = 1;
        a.n_heads = b.n_heads = 2;
        a.grid = {1.0, -2.0};
        b.grid = {3.0, -4.0};
        const auto sel = select_heads({a, b});
        const auto back = HeadSelection::from_json(sel.to_json());
        CHECK(back.memory_head.layer == sel.memory_head.layer);
        CHECK(back.memory_head.score == sel.memory_head.score);
        CHECK(back.ranked.size() == sel.ranked.size());
    }
}

TEST_CASE("emit_heatmap") {
    AttributionMap map;
    map.n_layers = 2;
    map.n_heads = 4;
    map.grid = {0.5, -0.25, 0.0, 1.0, -1.0, 0.75, -0.5, 0.25};

    SUBCASE("fixed input gives byte-identical output") {
        CHECK(emit_heatmap(map) == emit_heatmap(map));
        CHECK(emit_heatmap(map, 10.0) == emit_heatmap(map, 10.0));
    }
    SUBCASE("zero map renders all-neutral cells") {
        AttributionMap zero;
        zero.n_layers = 1;
        zero.n_heads = 3;
        zero.grid.assign(3, 0.0);
        const auto svg = emit_heatmap(zero);
        CHECK(svg.find("#ffffff") != std::string::npos);
        CHECK(svg.find("#b2182b") == std::string::npos);
    }
    SUBCASE("cell colors match the color-mapping oracle on sampled values") {
        const auto svg = emit_heatmap(map, 1.0);
        for (double v : {0.5, -0.25, 1.0, -1.0}) {
            CHECK(svg.find(diverging_color(v)) != std::string::npos);
        }
    }
}
