#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "factlab/common.hpp"
#include "factlab/corpus.hpp"
#include "factlab/intervention.hpp"
#include "factlab/stats.hpp"
#include "factlab/rng.hpp"
#include "factlab/world.hpp"

using namespace factlab;

namespace {

struct Fixture {
    WorldSpec world;
    Vocabulary vocab;
    std::vector<PromptInstance> prompts;
    std::vector<PromptInstance> f1_prompts;
    Checkpoint ckpt;

    Fixture() {
        WorldOptions opt;
        opt.n_family1 = 6;
        world = build_world(13, 10, 1.0, opt);
        CorpusOptions copt;
        copt.family1_fraction = 0.3;
        const auto raw =
            generate_documents(world, 120, default_fact_templates(), 14, copt);
        vocab = build_vocab(raw);
        prompts = build_prompt_set(world, vocab, 0);
        f1_prompts = build_prompt_set(world, vocab, 1);
        ModelConfig mc;
        mc.n_layers = 2;
        mc.n_heads = 4;
        mc.d_model = 32;
        mc.vocab_size = vocab.size();
        mc.max_context = 48;
        ckpt = Checkpoint::random_init(mc, 8);
    }
};

} // namespace

TEST_CASE("alpha=1 is a bitwise identity on decodes and logits") {
    Fixture f;
    InterventionSet iv(std::vector<InterventionSpec>{{1, 2, 1.0}});
    Rng rng(4);
    // 1000 random prompts per the invariant
    std::vector<std::vector<int>> random_prompts;
    for (int i = 0; i < 1000; ++i) {
        std::vector<int> p;
        const int len = rng.next_int(3, 10);
        for (int j = 0; j < len; ++j) p.push_back(rng.next_int(0, f.vocab.size() - 1));
        random_prompts.push_back(std::move(p));
    }
    const auto base = greedy_decode_batch(f.ckpt, random_prompts, 4);
    const auto same = greedy_decode_batch(f.ckpt, random_prompts, 4, &iv);
    CHECK(base == same);

    const auto fwd_a = forward(f.ckpt, random_prompts[0]);
    const auto fwd_b = forward(f.ckpt, random_prompts[0], -1, &iv);
    CHECK(fwd_a.logits == fwd_b.logits);
}

TEST_CASE("alpha=0 equals the zeroed-W_O-rows ablation oracle bitwise") {
    Fixture f;
    const int layer = 1, head = 2;
    InterventionSet iv(std::vector<InterventionSpec>{{layer, head, 0.0}});

    // reference ablation: zero the head's rows of W_O, leaving all other
    // parameters (including the bias) untouched
    Checkpoint ablated = f.ckpt;
    const int D = ablated.config.d_model;
    const int dh = ablated.config.d_head();
    float* w_o = ablated.at(ablated.layout.layers[layer].w_o);
    for (int d = 0; d < dh; ++d)
        for (int j = 0; j < D; ++j) w_o[static_cast<size_t>(head * dh + d) * D + j] = 0.0f;

    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        std::vector<int> p;
        const int len = rng.next_int(2, 12);
        for (int j = 0; j < len; ++j) p.push_back(rng.next_int(0, f.vocab.size() - 1));
        const auto a = forward(f.ckpt, p, -1, &iv);
        const auto b = forward(ablated, p);
        CHECK(a.logits == b.logits);
        const auto da = greedy_decode(f.ckpt, p, 6, &iv);
        const auto db = greedy_decode(ablated, p, 6);
        CHECK(da == db);
    }
}

TEST_CASE("intervention locality and head-output linearity") {
    Fixture f;
    const int layer = 1, head = 3;
    const double alpha = -0.6;
    InterventionSet iv(std::vector<InterventionSpec>{{layer, head, alpha}});

    const auto& p = f.prompts[7].tokens;
    const auto base = forward(f.ckpt, p, -1);
    const auto tuned = forward(f.ckpt, p, -1, &iv);

    // layers strictly before the target are unchanged
    for (int l = 0; l < layer; ++l) {
        for (int h = 0; h < f.ckpt.config.n_heads; ++h) {
            const double* a = base.trace.r(l, h);
            const double* b = tuned.trace.r(l, h);
            for (int d = 0; d < f.ckpt.config.d_head(); ++d) CHECK(a[d] == b[d]);
        }
        for (int j = 0; j < f.ckpt.config.d_model; ++j) {
            CHECK(base.trace.attn(l)[j] == tuned.trace.attn(l)[j]);
            CHECK(base.trace.mlp(l)[j] == tuned.trace.mlp(l)[j]);
        }
    }
    // on the first affected layer the head output scales by alpha exactly
    const double* rb = base.trace.r(layer, head);
    const double* rt = tuned.trace.r(layer, head);
    for (int d = 0; d < f.ckpt.config.d_head(); ++d)
        CHECK(rt[d] == doctest::Approx(alpha * rb[d]).epsilon(1e-12));
}

TEST_CASE("parameters stay untouched by intervened runs") {
    Fixture f;
    const auto before = f.ckpt.params;
    InterventionSet iv(std::vector<InterventionSpec>{{0, 1, -1.5}});
    run_behavior_suite(f.ckpt, f.prompts, f.vocab, 6, &iv);
    CHECK(f.ckpt.params == before);
}

TEST_CASE("alpha_sweep") {
    Fixture f;
    const auto baseline = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8);

    SUBCASE("grid {1.0} picks alpha* = 1 and reproduces the baseline proportions") {
        const auto curve = alpha_sweep(f.ckpt, f.vocab, 0, 0, {1.0}, f.prompts, baseline,
                                       SweepObjective::FlipMemorizedToInContext, 8);
        CHECK(curve.alpha_star == 1.0);
        REQUIRE(curve.points.size() == 1);
        long long n[3] = {0, 0, 0};
        for (const auto& r : baseline) ++n[static_cast<int>(r.cls)];
        const double total = static_cast<double>(baseline.size());
        CHECK(curve.points[0].p_ctx == doctest::Approx(n[0] / total));
        CHECK(curve.points[0].p_mem == doctest::Approx(n[1] / total));
        CHECK(curve.points[0].flip_fraction == 0.0);
    }
    SUBCASE("sweep proportions equal an independent suite run at that alpha") {
        const std::vector<double> grid = {0.0, 1.0, 2.0};
        const auto curve = alpha_sweep(f.ckpt, f.vocab, 1, 1, grid, f.prompts, baseline,
                                       SweepObjective::FlipMemorizedToInContext, 8);
        for (const auto& pt : curve.points) {
            InterventionSet iv(std::vector<InterventionSpec>{{1, 1, pt.alpha}});
            const auto rerun = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8, &iv);
            long long n[3] = {0, 0, 0};
            for (const auto& r : rerun) ++n[static_cast<int>(r.cls)];
            const double total = static_cast<double>(rerun.size());
            CHECK(pt.p_ctx == doctest::Approx(n[0] / total).epsilon(1e-12));
            CHECK(pt.p_mem == doctest::Approx(n[1] / total).epsilon(1e-12));
        }
    }
    SUBCASE("grid must include 1.0") {
        CHECK_THROWS_AS(alpha_sweep(f.ckpt, f.vocab, 0, 0, {0.5}, f.prompts, baseline,
                                    SweepObjective::FlipMemorizedToInContext, 8),
                        ConfigError);
    }
    SUBCASE("tie-break prefers the alpha closest to 1") {
        // a no-op head: all alphas give identical flips (zero); alpha* = 1
        Checkpoint zeroed = f.ckpt;
        const int D = zeroed.config.d_model;
        float* w_v = zeroed.at(zeroed.layout.layers[0].w_v);
        for (int i = 0; i < D; ++i)
            for (int d = 0; d < zeroed.config.d_head(); ++d)
                w_v[static_cast<size_t>(i) * D + 0 * zeroed.config.d_head() + d] = 0.0f;
        const auto base0 = run_behavior_suite(zeroed, f.prompts, f.vocab, 8);
        const auto curve = alpha_sweep(zeroed, f.vocab, 0, 0, {-1.0, 0.0, 1.0, 2.0}, f.prompts,
                                       base0, SweepObjective::FlipMemorizedToInContext, 8);
        CHECK(curve.alpha_star == 1.0);
    }
}

TEST_CASE("apply_and_measure") {
    Fixture f;
    const auto baseline = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8);

    SUBCASE("alpha=1 gives zero deltas and a diagonal flip matrix") {
        const auto out = apply_and_measure(f.ckpt, f.vocab, {0, 0, 1.0}, f.prompts, baseline, 8);
        for (int i = 0; i < 3; ++i) CHECK(out.delta_p[i] == doctest::Approx(0.0));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) CHECK(out.flips[i][j] == 0);
    }
    SUBCASE("flip-matrix row sums equal baseline class counts") {
        const auto out = apply_and_measure(f.ckpt, f.vocab, {1, 2, -1.0}, f.prompts, baseline, 8);
        long long n[3] = {0, 0, 0};
        for (const auto& r : baseline) ++n[static_cast<int>(r.cls)];
        for (int i = 0; i < 3; ++i) {
            long long row = 0;
            for (int j = 0; j < 3; ++j) row += out.flips[i][j];
            CHECK(row == n[i]);
        }
    }
    SUBCASE("prompt-set mismatch with the baseline is an input error") {
        auto fewer = baseline;
        fewer.pop_back();
        CHECK_THROWS_AS(apply_and_measure(f.ckpt, f.vocab, {0, 0, 0.5}, f.prompts, fewer, 8),
                        ConfigError);
    }
}

TEST_CASE("frequency_effect_after_intervention") {
    Fixture f;
    std::vector<std::pair<std::string, long long>> counts;
    for (int i = 0; i < f.world.n_countries(); ++i)
        counts.push_back({f.world.country(i), 10 * i});
    const auto bins = percentile_bins(counts, 5, "country");
    const auto baseline = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8);

    SUBCASE("identical record sets give an identical pair") {
        const auto pair = frequency_effect_after_intervention(baseline, baseline, f.prompts,
                                                              bins, BinCriterion::Country);
        CHECK(bin_summary_to_tsv(pair.baseline) == bin_summary_to_tsv(pair.intervened));
        CHECK(pair.slope_mem_baseline == doctest::Approx(pair.slope_mem_intervened));
    }
    SUBCASE("synthetic flat records give zero slope") {
        auto flat = baseline;
        for (auto& r : flat) r.cls = AnswerClass::Memorized;
        const auto pair = frequency_effect_after_intervention(flat, flat, f.prompts, bins,
                                                              BinCriterion::Country);
        CHECK(pair.slope_mem_baseline == doctest::Approx(0.0));
        CHECK(pair.slope_ctx_baseline == doctest::Approx(0.0));
    }
    SUBCASE("slopes match the least-squares oracle") {
        InterventionSet iv(std::vector<InterventionSpec>{{1, 0, -0.5}});
        const auto tuned = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8, &iv);
        const auto pair = frequency_effect_after_intervention(baseline, tuned, f.prompts, bins,
                                                              BinCriterion::Country);
        std::vector<double> xs, ys;
        for (const auto& row : pair.intervened.rows) {
            xs.push_back(row.bin);
            ys.push_back(row.p_mem);
        }
        CHECK(pair.slope_mem_intervened ==
              doctest::Approx(least_squares_slope(xs, ys)).epsilon(1e-12));
    }
}

TEST_CASE("generalization_test") {
    Fixture f;
    const auto f1_baseline = run_behavior_suite(f.ckpt, f.f1_prompts, f.vocab, 8);

    SUBCASE("alpha=1 gives zero deltas on family 1") {
        const auto out =
            generalization_test(f.ckpt, f.vocab, {0, 0, 1.0}, f.f1_prompts, f1_baseline, 8);
        for (int i = 0; i < 3; ++i) CHECK(out.delta_p[i] == doctest::Approx(0.0));
    }
    SUBCASE("family-1 baseline equals the shared suite path") {
        // recount: proportions computed identically to the family-0 path
        long long n[3] = {0, 0, 0};
        for (const auto& r : f1_baseline) ++n[static_cast<int>(r.cls)];
        const auto out =
            generalization_test(f.ckpt, f.vocab, {0, 0, 1.0}, f.f1_prompts, f1_baseline, 8);
        const double total = static_cast<double>(f1_baseline.size());
        for (int i = 0; i < 3; ++i) CHECK(out.base_p[i] == doctest::Approx(n[i] / total));
    }
    SUBCASE("family-0 prompts are rejected") {
        const auto baseline = run_behavior_suite(f.ckpt, f.prompts, f.vocab, 8);
        CHECK_THROWS_AS(
            generalization_test(f.ckpt, f.vocab, {0, 0, 0.5}, f.prompts, baseline, 8),
            ConfigError);
    }
}
