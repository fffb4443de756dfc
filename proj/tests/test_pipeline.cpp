#include <doctest.h>

#include <filesystem>
#include <set>

#include "factlab/common.hpp"
#include "factlab/pipeline.hpp"

using namespace factlab;
namespace fs = std::filesystem;

namespace {

// Deliberately tiny end-to-end configuration.
std::string micro_config_json() {
    return R"({
  "schema": "factlab.config.v1",
  "seed": 11,
  "world": {"n_countries": 16, "zipf_exponent": 1.2, "n_family1": 6},
  "corpus": {"total_docs": 600, "family1_fraction": 0.25,
             "fact_templates": ["statement", "qa_echo", "qa_echo"]},
  "model": {"layer_sizes": [1], "primary_size_index": 0, "n_heads": 2,
            "d_model": 32, "max_context": 48},
  "train": {"batch_size": 8, "seq_len": 32, "max_steps": 120, "lr": 3e-3,
            "log_interval": 30, "probe_interval": 0, "n_seeds": 1},
  "eval": {"max_new": 8, "n_bins": 2, "selection_per_bin": 1,
           "alpha_grid": [0.0, 0.5, 1.0], "decode_chunk": 64}
})";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("config parsing") {
    SUBCASE("round trip and defaults") {
        const auto cfg = PipelineConfig::from_json(micro_config_json());
        CHECK(cfg.seed == 11);
        CHECK(cfg.n_countries == 16);
        CHECK(cfg.layer_sizes == std::vector<int>{1});
        CHECK(cfg.alpha_grid == std::vector<double>{0.0, 0.5, 1.0});
        CHECK(cfg.train.max_steps == 120);
        const auto again = PipelineConfig::from_json(cfg.to_json());
        CHECK(again.to_json() == cfg.to_json());
    }
    SUBCASE("schema violations rejected before any work") {
        CHECK_THROWS_AS(PipelineConfig::from_json("{}"), ConfigError);
        CHECK_THROWS_AS(PipelineConfig::from_json("{\"schema\": \"factlab.config.v1\"}"),
                        ConfigError); // missing seed
        CHECK_THROWS_AS(PipelineConfig::from_json("not json"), ConfigError);
        std::string bad = micro_config_json();
        const auto at = bad.find("\"n_countries\": 16");
        REQUIRE(at != std::string::npos);
        bad.replace(at, 17, "\"n_countries\": 5 ");
        CHECK_THROWS_AS(PipelineConfig::from_json(bad), ConfigError);
    }
}

TEST_CASE("missing upstream artifacts name the producing stage") {
    TempDir dir("factlab_pipe_missing");
    const auto cfg = PipelineConfig::from_json(micro_config_json());
    try {
        run_stage(cfg, dir.path, "train", false);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("gen-corpus") != std::string::npos);
    }
    try {
        run_stage(cfg, dir.path, "svd", false);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("missing input") != std::string::npos);
    }
}

TEST_CASE("end-to-end micro pipeline") {
    TempDir dir("factlab_pipe_e2e");
    const auto cfg = PipelineConfig::from_json(micro_config_json());

    run_pipeline(cfg, dir.path, false);

    SUBCASE("all advertised artifacts exist") {
        for (const char* rel :
             {"world.json", "vocab.json", "corpus.jsonl", "freq/table.tsv",
              "freq/bins_country.tsv", "models/model_L1_s0.ckpt", "models/trainlog_L1_s0.tsv",
              "eval/records_L1_s0.jsonl", "eval/recall_L1_s0.tsv",
              "eval/summary_country_L1_s0.tsv", "eval/records_f1_L1_s0.jsonl",
              "attribution/map_s0.tsv", "attribution/heatmap_s0.svg",
              "attribution/heads_s0.json", "sweep/sweep_mem_down_s0.tsv",
              "sweep/choices_s0.json", "intervene/outcome_s0.json",
              "intervene/freqeffect_country_mem_down_s0.tsv",
              "generalize/outcome_f1_s0.json", "svd/tokens_memory_head_s0.tsv",
              "svd/cluster_s0.json", "report/report.md", "manifest.json"}) {
            INFO(rel);
            CHECK(fs::exists(dir.path / rel));
        }
    }
    SUBCASE("every text artifact begins with a schema tag") {
        for (const auto& entry : fs::recursive_directory_iterator(dir.path)) {
            if (!entry.is_regular_file()) continue;
            const auto ext = entry.path().extension().string();
            if (ext != ".tsv" && ext != ".json" && ext != ".jsonl" && ext != ".svg") continue;
            const std::string head = read_file(entry.path()).substr(0, 200);
            INFO(entry.path().string());
            CHECK(head.find("schema") != std::string::npos);
        }
    }
    SUBCASE("rerun without force skips; rerun with force is byte-identical") {
        const auto before = hash_artifacts(dir.path);
        run_pipeline(cfg, dir.path, false); // all skipped
        CHECK(hash_artifacts(dir.path) == before);

        run_pipeline(cfg, dir.path, true); // full recompute
        const auto after = hash_artifacts(dir.path);
        CHECK(after == before);
    }
    SUBCASE("eval rerun alone reproduces identical records") {
        const auto rec_before = read_file(dir.path / "eval/records_L1_s0.jsonl");
        run_stage(cfg, dir.path, "eval", true);
        CHECK(read_file(dir.path / "eval/records_L1_s0.jsonl") == rec_before);
    }
}
