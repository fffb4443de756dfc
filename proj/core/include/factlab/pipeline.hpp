#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "factlab/corpus.hpp"
#include "factlab/model.hpp"
#include "factlab/train.hpp"
#include "factlab/world.hpp"

namespace factlab {

// Everything one experiment run needs, parsed from a single JSON config file.
struct PipelineConfig {
    uint64_t seed = 0;

    // world / corpus
    int n_countries = 64;
    double zipf_exponent = 1.2;
    int n_family1 = 24;
    double family1_zipf = 1.0;
    bool independent_city_weights = false;
    int total_docs = 20000;
    double filler_fraction = 0.15;
    double second_fact_prob = 0.25;
    double family1_fraction = 0.15;
    double noise_rate = 0.0;
    std::vector<std::string> fact_template_names = {"statement", "qa_echo", "qa_echo",
                                                    "reversed"};

    // models: one entry per size, trained identically
    std::vector<int> layer_sizes = {1, 2, 4};
    int primary_size_index = 1; // index into layer_sizes used for interventions
    int n_heads = 4;
    int d_model = 128;
    int max_context = 64;
    int mlp_mult = 4;

    TrainConfig train;
    int n_seeds = 3;

    // measurement
    int max_new = 12;
    int n_bins = 10;
    int selection_per_bin = 10;
    int attribution_batch = 5;
    std::vector<double> alpha_grid; // empty = default -2..3 step 0.1
    int decode_chunk = 128;
    int svd_top_k = 10;
    int svd_n_vectors = 5;

    static PipelineConfig from_json_file(const std::filesystem::path& path);
    static PipelineConfig from_json(const std::string& text);
    std::string to_json() const;
    std::vector<SentenceTemplate> fact_templates() const;
    ModelConfig model_config(int size_index, int vocab_size) const;
};

// Stage names, in execution order.
std::vector<std::string> pipeline_stage_names();

// Runs one named stage (inputs must exist). Throws ConfigError naming the
// producing stage when an upstream artifact is missing.
void run_stage(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
               const std::string& stage, bool force);

// Runs all stages in order. Stages whose recorded input/output hashes are
// unchanged are skipped unless force is set.
void run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir, bool force);

// Content manifest: per stage, the hashes of its inputs and outputs.
struct Manifest {
    struct Entry {
        std::string config_hash;
        std::map<std::string, std::string> inputs;  // path -> hash
        std::map<std::string, std::string> outputs; // path -> hash
    };
    std::map<std::string, Entry> stages;

    static Manifest load(const std::filesystem::path& out_dir);
    void save(const std::filesystem::path& out_dir) const;
};

// Static report bundle over whatever artifacts exist; missing pieces are
// listed as gaps instead of failing.
void write_report(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

// Recursive artifact hash over an output directory (report inputs included),
// used for byte-identity checks.
std::map<std::string, std::string> hash_artifacts(const std::filesystem::path& out_dir);

} // namespace factlab
