#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "factlab/common.hpp"
#include "factlab/model.hpp"
#include "factlab/rng.hpp"

using namespace factlab;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_model = 32;
    c.vocab_size = 50;
    c.max_context = 16;
    return c;
}

std::vector<int> random_tokens(Rng& rng, int len, int vocab) {
    std::vector<int> out;
    for (int i = 0; i < len; ++i) out.push_back(rng.next_int(0, vocab - 1));
    return out;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig c = small_config();
    c.validate();
    c.d_model = 30; // not divisible by 4 heads
    CHECK_THROWS_AS(c.validate(), ConfigError);

    // the 24-layer, 16-head shape must be representable
    ModelConfig big;
    big.n_layers = 24;
    big.n_heads = 16;
    big.d_model = 64;
    big.vocab_size = 100;
    big.max_context = 8;
    big.validate();
    const auto ckpt = Checkpoint::zeros(big);
    const auto fwd = forward(ckpt, {1, 2, 3});
    CHECK(fwd.trace.n_layers * fwd.trace.n_heads == 384);
}

TEST_CASE("all-zero weights give a uniform distribution at every position") {
    const auto ckpt = Checkpoint::zeros(small_config());
    const auto fwd = forward(ckpt, {3, 1, 4, 1, 5});
    const int V = ckpt.config.vocab_size;
    for (size_t t = 0; t < 5; ++t) {
        for (int v = 1; v < V; ++v)
            CHECK(fwd.logits[t * V + v] == doctest::Approx(fwd.logits[t * V]).epsilon(1e-12));
    }
}

TEST_CASE("per-head decomposition identity") {
    // attention output equals sum over heads of W_O^h r^h plus bias
    const auto ckpt = Checkpoint::random_init(small_config(), 123);
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const auto tokens = random_tokens(rng, 10, ckpt.config.vocab_size);
        const int cap = rng.next_int(0, 9);
        const auto fwd = forward(ckpt, tokens, cap);
        const auto& c = ckpt.config;
        const int D = c.d_model;
        const int dh = c.d_head();
        for (int l = 0; l < c.n_layers; ++l) {
            // concatenate-then-multiply oracle
            std::vector<double> concat(static_cast<size_t>(D));
            for (int h = 0; h < c.n_heads; ++h) {
                const double* r = fwd.trace.r(l, h);
                for (int d = 0; d < dh; ++d) concat[static_cast<size_t>(h * dh + d)] = r[d];
            }
            const float* w_o = ckpt.at(ckpt.layout.layers[static_cast<size_t>(l)].w_o);
            const float* b_o = ckpt.at(ckpt.layout.layers[static_cast<size_t>(l)].b_o);
            double err2 = 0.0, ref2 = 0.0;
            for (int j = 0; j < D; ++j) {
                double acc = static_cast<double>(b_o[j]);
                for (int i = 0; i < D; ++i)
                    acc += concat[static_cast<size_t>(i)] *
                           static_cast<double>(w_o[static_cast<size_t>(i) * D + j]);
                const double ref = fwd.trace.attn(l)[j];
                err2 += (acc - ref) * (acc - ref);
                ref2 += ref * ref;
            }
            CHECK(std::sqrt(err2) <= 1e-5 * std::sqrt(ref2) + 1e-12);
        }
    }
}

TEST_CASE("residual stream is the sum of embedding and sublayer outputs") {
    const auto ckpt = Checkpoint::random_init(small_config(), 5);
    Rng rng(11);
    const auto tokens = random_tokens(rng, 8, ckpt.config.vocab_size);
    const auto fwd = forward(ckpt, tokens, -1);
    const int D = ckpt.config.d_model;
    for (int j = 0; j < D; ++j) {
        double acc = fwd.trace.embedding[static_cast<size_t>(j)];
        for (int l = 0; l < ckpt.config.n_layers; ++l)
            acc += fwd.trace.attn(l)[j] + fwd.trace.mlp(l)[j];
        CHECK(acc ==
              doctest::Approx(fwd.trace.final_residual[static_cast<size_t>(j)]).epsilon(1e-10));
    }
}

TEST_CASE("causality: logits at t ignore tokens after t") {
    const auto ckpt = Checkpoint::random_init(small_config(), 9);
    Rng rng(13);
    auto tokens = random_tokens(rng, 12, ckpt.config.vocab_size);
    const auto fwd1 = forward(ckpt, tokens);
    auto mutated = tokens;
    mutated[9] = (mutated[9] + 7) % ckpt.config.vocab_size;
    mutated[11] = (mutated[11] + 3) % ckpt.config.vocab_size;
    const auto fwd2 = forward(ckpt, mutated);
    const int V = ckpt.config.vocab_size;
    for (int t = 0; t < 9; ++t) {
        for (int v = 0; v < V; ++v)
            CHECK(fwd1.logits[static_cast<size_t>(t) * V + v] ==
                  fwd2.logits[static_cast<size_t>(t) * V + v]);
    }
}

TEST_CASE("uniform attention mixes values evenly") {
    // W_Q = W_K = 0 makes attention uniform over the prefix; with W_V = I the
    // head result must equal the running mean of the normed inputs, which
    // checks that attention weights are normalized to 1.
    ModelConfig c = small_config();
    c.n_layers = 1;
    auto ckpt = Checkpoint::zeros(c);
    const auto& L = ckpt.layout.layers[0];
    for (int i = 0; i < c.d_model; ++i) {
        ckpt.at(L.ln1_g)[i] = 1.0f;
        ckpt.at(L.w_v)[static_cast<size_t>(i) * c.d_model + i] = 1.0f;
    }
    // distinct embeddings per token
    Rng rng(3);
    for (size_t i = 0; i < static_cast<size_t>(c.vocab_size) * c.d_model; ++i)
        ckpt.at(ckpt.layout.w_e)[i] = static_cast<float>(rng.next_gauss());

    const std::vector<int> tokens = {5, 9, 2, 7};
    const auto fwd = forward(ckpt, tokens, 3);

    // oracle: layer-norm each embedding, average over positions
    const int D = c.d_model;
    std::vector<double> mean_norm(static_cast<size_t>(D), 0.0);
    for (int t = 0; t < 4; ++t) {
        std::vector<double> x(static_cast<size_t>(D));
        for (int i = 0; i < D; ++i)
            x[static_cast<size_t>(i)] =
                static_cast<double>(
                    ckpt.at(ckpt.layout.w_e)[static_cast<size_t>(tokens[t]) * D + i]) +
                static_cast<double>(ckpt.at(ckpt.layout.w_pos)[static_cast<size_t>(t) * D + i]);
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= D;
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        var /= D;
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (int i = 0; i < D; ++i)
            mean_norm[static_cast<size_t>(i)] += (x[static_cast<size_t>(i)] - mu) * rstd / 4.0;
    }
    for (int h = 0; h < c.n_heads; ++h) {
        const double* r = fwd.trace.r(0, h);
        for (int d = 0; d < c.d_head(); ++d)
            CHECK(r[d] ==
                  doctest::Approx(mean_norm[static_cast<size_t>(h * c.d_head() + d)])
                      .epsilon(1e-6));
    }
}

TEST_CASE("greedy decode semantics") {
    const auto ckpt = Checkpoint::random_init(small_config(), 77);
    Rng rng(5);
    const auto prompt = random_tokens(rng, 6, ckpt.config.vocab_size);

    SUBCASE("max_new zero gives an empty continuation") {
        CHECK(greedy_decode(ckpt, prompt, 0).empty());
    }
    SUBCASE("empty intervention set decodes identically to none") {
        InterventionSet empty;
        const auto a = greedy_decode(ckpt, prompt, 8);
        const auto b = greedy_decode(ckpt, prompt, 8, &empty);
        CHECK(a == b);
    }
    SUBCASE("argmax ties break toward the lowest token id") {
        const auto zeros = Checkpoint::zeros(small_config());
        const auto out = greedy_decode(zeros, prompt, 3);
        for (int t : out) CHECK(t == 0);
    }
    SUBCASE("batched decode equals independent single-prompt decodes") {
        std::vector<std::vector<int>> prompts;
        for (int i = 0; i < 20; ++i)
            prompts.push_back(random_tokens(rng, 6, ckpt.config.vocab_size));
        const auto batched = greedy_decode_batch(ckpt, prompts, 8, nullptr, -1, 7);
        for (size_t i = 0; i < prompts.size(); ++i) {
            CHECK(batched[i] == greedy_decode(ckpt, prompts[i], 8));
        }
    }
    SUBCASE("decode stops at end-of-text") {
        // zero model always emits token 0: treat it as eot
        const auto zeros = Checkpoint::zeros(small_config());
        const auto out = greedy_decode(zeros, prompt, 5, nullptr, /*eot_id=*/0);
        CHECK(out.empty());
    }
}

TEST_CASE("overlong input is an input error") {
    const auto ckpt = Checkpoint::zeros(small_config());
    std::vector<int> long_prompt(ckpt.config.max_context + 1, 1);
    CHECK_THROWS_AS(forward(ckpt, long_prompt), ConfigError);
}

TEST_CASE("checkpoint save/load") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "factlab_test_ckpt";
    fs::create_directories(dir);
    const auto ckpt = Checkpoint::random_init(small_config(), 2024);

    SUBCASE("save-load-save produces identical bytes") {
        save_checkpoint(ckpt, dir / "a.ckpt");
        const auto loaded = load_checkpoint(dir / "a.ckpt");
        save_checkpoint(loaded, dir / "b.ckpt");
        CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
        CHECK(loaded.params == ckpt.params);
    }
    SUBCASE("corrupted magic header is rejected") {
        save_checkpoint(ckpt, dir / "c.ckpt");
        std::string bytes = read_file(dir / "c.ckpt");
        bytes[0] = 'X';
        write_file(dir / "c.ckpt", bytes);
        CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), IoError);
    }
    SUBCASE("truncated file is rejected") {
        save_checkpoint(ckpt, dir / "d.ckpt");
        std::string bytes = read_file(dir / "d.ckpt");
        bytes.resize(bytes.size() - 5);
        write_file(dir / "d.ckpt", bytes);
        CHECK_THROWS_AS(load_checkpoint(dir / "d.ckpt"), IoError);
    }
    SUBCASE("loaded model replays logits exactly on 100 random prompts") {
        save_checkpoint(ckpt, dir / "e.ckpt");
        const auto loaded = load_checkpoint(dir / "e.ckpt");
        Rng rng(31337);
        for (int i = 0; i < 100; ++i) {
            const auto prompt = random_tokens(rng, rng.next_int(1, 12), ckpt.config.vocab_size);
            const auto a = forward(ckpt, prompt);
            const auto b = forward(loaded, prompt);
            CHECK(a.logits == b.logits);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("intervention set composition") {
    InterventionSet iv;
    iv.add({0, 1, 0.5});
    iv.add({1, 1, 2.0});
    CHECK_THROWS_AS(iv.add({0, 1, 0.7}), ConfigError); // duplicate target
    CHECK(iv.scale(0, 1) == 0.5);
    CHECK(iv.scale(0, 0) == 1.0);
    CHECK(iv.descriptor() == "L0H1a0.5;L1H1a2");

    const auto ckpt = Checkpoint::zeros(small_config());
    InterventionSet bad;
    bad.add({9, 0, 0.0});
    CHECK_THROWS_AS(InferenceSession(ckpt, 1, &bad), ConfigError);
}
