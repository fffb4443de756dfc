#include "factlab/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "factlab/attribution.hpp"
#include "factlab/common.hpp"
#include "factlab/freq.hpp"
#include "factlab/harness.hpp"
#include "factlab/intervention.hpp"
#include "factlab/ovsvd.hpp"
#include "factlab/rng.hpp"
#include "factlab/stats.hpp"

namespace factlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::from_json_file(const fs::path& path) {
    try {
        return from_json(read_file(path));
    } catch (const IoError&) {
        throw ConfigError("cannot read config file: " + path.string());
    }
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (j.value("schema", "") != "factlab.config.v1")
        throw ConfigError("config must carry schema tag factlab.config.v1");
    if (!j.contains("seed")) throw ConfigError("config must set a seed");

    PipelineConfig c;
    c.seed = j.at("seed").get<uint64_t>();

    const json w = j.value("world", json::object());
    c.n_countries = w.value("n_countries", c.n_countries);
    c.zipf_exponent = w.value("zipf_exponent", c.zipf_exponent);
    c.n_family1 = w.value("n_family1", c.n_family1);
    c.family1_zipf = w.value("family1_zipf", c.family1_zipf);
    c.independent_city_weights = w.value("independent_city_weights", c.independent_city_weights);

    const json co = j.value("corpus", json::object());
    c.total_docs = co.value("total_docs", c.total_docs);
    c.filler_fraction = co.value("filler_fraction", c.filler_fraction);
    c.second_fact_prob = co.value("second_fact_prob", c.second_fact_prob);
    c.family1_fraction = co.value("family1_fraction", c.family1_fraction);
    c.noise_rate = co.value("noise_rate", c.noise_rate);
    if (co.contains("fact_templates"))
        c.fact_template_names = co.at("fact_templates").get<std::vector<std::string>>();

    const json m = j.value("model", json::object());
    if (m.contains("layer_sizes")) c.layer_sizes = m.at("layer_sizes").get<std::vector<int>>();
    c.primary_size_index = m.value("primary_size_index", c.primary_size_index);
    c.n_heads = m.value("n_heads", c.n_heads);
    c.d_model = m.value("d_model", c.d_model);
    c.max_context = m.value("max_context", c.max_context);
    c.mlp_mult = m.value("mlp_mult", c.mlp_mult);

    const json t = j.value("train", json::object());
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.seq_len = t.value("seq_len", c.train.seq_len);
    c.train.max_steps = t.value("max_steps", c.train.max_steps);
    c.train.min_steps = t.value("min_steps", c.train.min_steps);
    c.train.lr = t.value("lr", c.train.lr);
    c.train.warmup_steps = t.value("warmup_steps", c.train.warmup_steps);
    c.train.grad_clip = t.value("grad_clip", c.train.grad_clip);
    c.train.log_interval = t.value("log_interval", c.train.log_interval);
    c.train.probe_interval = t.value("probe_interval", c.train.probe_interval);
    c.train.probe_target = t.value("probe_target", c.train.probe_target);
    c.n_seeds = t.value("n_seeds", c.n_seeds);

    const json e = j.value("eval", json::object());
    c.max_new = e.value("max_new", c.max_new);
    c.n_bins = e.value("n_bins", c.n_bins);
    c.selection_per_bin = e.value("selection_per_bin", c.selection_per_bin);
    c.attribution_batch = e.value("attribution_batch", c.attribution_batch);
    c.decode_chunk = e.value("decode_chunk", c.decode_chunk);
    c.svd_top_k = e.value("svd_top_k", c.svd_top_k);
    c.svd_n_vectors = e.value("svd_n_vectors", c.svd_n_vectors);
    if (e.contains("alpha_grid")) c.alpha_grid = e.at("alpha_grid").get<std::vector<double>>();

    if (c.n_countries < 10) throw ConfigError("config: n_countries must be >= 10");
    if (c.layer_sizes.empty()) throw ConfigError("config: layer_sizes must not be empty");
    if (c.primary_size_index < 0 ||
        c.primary_size_index >= static_cast<int>(c.layer_sizes.size()))
        throw ConfigError("config: primary_size_index out of range");
    if (c.n_seeds < 1) throw ConfigError("config: n_seeds must be >= 1");
    for (const auto& name : c.fact_template_names) {
        if (name != "statement" && name != "qa_echo" && name != "reversed")
            throw ConfigError("config: unknown fact template '" + name + "'");
    }
    return c;
}

std::string PipelineConfig::to_json() const {
    json j;
    j["schema"] = "factlab.config.v1";
    j["seed"] = seed;
    j["world"] = {{"n_countries", n_countries},
                  {"zipf_exponent", zipf_exponent},
                  {"n_family1", n_family1},
                  {"family1_zipf", family1_zipf},
                  {"independent_city_weights", independent_city_weights}};
    j["corpus"] = {{"total_docs", total_docs},
                   {"filler_fraction", filler_fraction},
                   {"second_fact_prob", second_fact_prob},
                   {"family1_fraction", family1_fraction},
                   {"noise_rate", noise_rate},
                   {"fact_templates", fact_template_names}};
    j["model"] = {{"layer_sizes", layer_sizes}, {"primary_size_index", primary_size_index},
                  {"n_heads", n_heads},         {"d_model", d_model},
                  {"max_context", max_context}, {"mlp_mult", mlp_mult}};
    j["train"] = {{"batch_size", train.batch_size},
                  {"seq_len", train.seq_len},
                  {"max_steps", train.max_steps},
                  {"min_steps", train.min_steps},
                  {"lr", train.lr},
                  {"warmup_steps", train.warmup_steps},
                  {"grad_clip", train.grad_clip},
                  {"log_interval", train.log_interval},
                  {"probe_interval", train.probe_interval},
                  {"probe_target", train.probe_target},
                  {"n_seeds", n_seeds}};
    j["eval"] = {{"max_new", max_new},
                 {"n_bins", n_bins},
                 {"selection_per_bin", selection_per_bin},
                 {"attribution_batch", attribution_batch},
                 {"decode_chunk", decode_chunk},
                 {"svd_top_k", svd_top_k},
                 {"svd_n_vectors", svd_n_vectors}};
    if (!alpha_grid.empty()) j["eval"]["alpha_grid"] = alpha_grid;
    return j.dump(2) + "\n";
}

std::vector<SentenceTemplate> PipelineConfig::fact_templates() const {
    std::vector<SentenceTemplate> out;
    for (const auto& name : fact_template_names) {
        if (name == "statement") out.push_back(statement_template());
        else if (name == "qa_echo") out.push_back(qa_echo_template());
        else if (name == "reversed") out.push_back(reversed_template());
        else throw ConfigError("unknown fact template '" + name + "'");
    }
    return out;
}

ModelConfig PipelineConfig::model_config(int size_index, int vocab_size) const {
    ModelConfig mc;
    mc.n_layers = layer_sizes.at(static_cast<size_t>(size_index));
    mc.n_heads = n_heads;
    mc.d_model = d_model;
    mc.vocab_size = vocab_size;
    mc.max_context = max_context;
    mc.mlp_mult = mlp_mult;
    mc.validate();
    return mc;
}

// ---------------------------------------------------------------- manifest

Manifest Manifest::load(const fs::path& out_dir) {
    Manifest m;
    const fs::path path = out_dir / "manifest.json";
    if (!fs::exists(path)) return m;
    const auto j = json::parse(read_file(path));
    if (j.value("schema", "") != "factlab.manifest.v1") return m;
    for (const auto& [stage, je] : j.at("stages").items()) {
        Entry e;
        e.config_hash = je.value("config_hash", "");
        const json inputs = je.value("inputs", json::object());
        for (const auto& [k, v] : inputs.items()) e.inputs[k] = v.get<std::string>();
        const json outputs = je.value("outputs", json::object());
        for (const auto& [k, v] : outputs.items()) e.outputs[k] = v.get<std::string>();
        m.stages[stage] = std::move(e);
    }
    return m;
}

void Manifest::save(const fs::path& out_dir) const {
    json j;
    j["schema"] = "factlab.manifest.v1";
    auto& js = j["stages"] = json::object();
    for (const auto& [stage, e] : stages) {
        json je;
        je["config_hash"] = e.config_hash;
        je["inputs"] = e.inputs;
        je["outputs"] = e.outputs;
        js[stage] = std::move(je);
    }
    write_file(out_dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- helpers

namespace {

struct StageIo {
    std::vector<std::string> inputs;  // relative paths consumed
    std::vector<std::string> outputs; // relative paths produced
};

std::string seed_tag(int k) { return "s" + std::to_string(k); }
std::string size_tag(int n_layers) { return "L" + std::to_string(n_layers); }

// Relative artifact paths per stage (inputs first, outputs second).
StageIo stage_io(const PipelineConfig& cfg, const std::string& stage) {
    StageIo io;
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];
    auto each_size_seed = [&](auto fn) {
        for (int size : cfg.layer_sizes)
            for (int k = 0; k < cfg.n_seeds; ++k) fn(size, k);
    };
    auto each_seed = [&](auto fn) {
        for (int k = 0; k < cfg.n_seeds; ++k) fn(k);
    };

    if (stage == "gen-corpus") {
        io.outputs = {"world.json", "vocab.json", "corpus.jsonl"};
    } else if (stage == "freq-bins") {
        io.inputs = {"world.json", "vocab.json", "corpus.jsonl"};
        io.outputs = {"freq/table.tsv", "freq/bins_country.tsv", "freq/bins_in_context_city.tsv",
                      "freq/bins_memorized_pair.tsv", "freq/bins_in_context_pair.tsv"};
    } else if (stage == "train") {
        io.inputs = {"world.json", "vocab.json", "corpus.jsonl", "freq/bins_country.tsv"};
        each_size_seed([&](int size, int k) {
            io.outputs.push_back("models/model_" + size_tag(size) + "_" + seed_tag(k) + ".ckpt");
            io.outputs.push_back("models/trainlog_" + size_tag(size) + "_" + seed_tag(k) + ".tsv");
        });
    } else if (stage == "eval") {
        io.inputs = {"world.json", "vocab.json", "freq/bins_country.tsv",
                     "freq/bins_in_context_city.tsv", "freq/bins_memorized_pair.tsv",
                     "freq/bins_in_context_pair.tsv"};
        each_size_seed([&](int size, int k) {
            io.inputs.push_back("models/model_" + size_tag(size) + "_" + seed_tag(k) + ".ckpt");
            const std::string tag = size_tag(size) + "_" + seed_tag(k);
            io.outputs.push_back("eval/records_" + tag + ".jsonl");
            io.outputs.push_back("eval/recall_" + tag + ".tsv");
            io.outputs.push_back("eval/summary_country_" + tag + ".tsv");
        });
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.outputs.push_back("eval/summary_in_context_city_" + tag + ".tsv");
            io.outputs.push_back("eval/summary_memorized_pair_" + tag + ".tsv");
            io.outputs.push_back("eval/summary_in_context_pair_" + tag + ".tsv");
            io.outputs.push_back("eval/prefix_stats_" + tag + ".tsv");
            if (cfg.n_family1 > 0) io.outputs.push_back("eval/records_f1_" + tag + ".jsonl");
        });
    } else if (stage == "attribute") {
        io.inputs = {"world.json", "vocab.json", "freq/bins_country.tsv"};
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.inputs.push_back("models/model_" + tag + ".ckpt");
            io.inputs.push_back("eval/records_" + tag + ".jsonl");
            io.outputs.push_back("attribution/map_" + seed_tag(k) + ".tsv");
            io.outputs.push_back("attribution/heatmap_" + seed_tag(k) + ".svg");
            io.outputs.push_back("attribution/heads_" + seed_tag(k) + ".json");
            io.outputs.push_back("attribution/selection_" + seed_tag(k) + ".json");
        });
    } else if (stage == "sweep-alpha") {
        io.inputs = {"world.json", "vocab.json"};
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.inputs.push_back("models/model_" + tag + ".ckpt");
            io.inputs.push_back("eval/records_" + tag + ".jsonl");
            io.inputs.push_back("attribution/heads_" + seed_tag(k) + ".json");
            io.inputs.push_back("attribution/selection_" + seed_tag(k) + ".json");
            for (const char* dir : {"mem_down", "mem_up", "ctx_down", "ctx_up"})
                io.outputs.push_back("sweep/sweep_" + std::string(dir) + "_" + seed_tag(k) +
                                     ".tsv");
            io.outputs.push_back("sweep/choices_" + seed_tag(k) + ".json");
        });
    } else if (stage == "intervene") {
        io.inputs = {"world.json", "vocab.json", "freq/bins_country.tsv",
                     "freq/bins_in_context_city.tsv"};
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.inputs.push_back("models/model_" + tag + ".ckpt");
            io.inputs.push_back("eval/records_" + tag + ".jsonl");
            io.inputs.push_back("attribution/selection_" + seed_tag(k) + ".json");
            io.inputs.push_back("sweep/choices_" + seed_tag(k) + ".json");
            for (const char* dir : {"mem_down", "mem_up", "ctx_down", "ctx_up"}) {
                io.outputs.push_back("intervene/records_" + std::string(dir) + "_" + seed_tag(k) +
                                     ".jsonl");
                io.outputs.push_back("intervene/flips_" + std::string(dir) + "_" + seed_tag(k) +
                                     ".tsv");
            }
            io.outputs.push_back("intervene/outcome_" + seed_tag(k) + ".json");
            io.outputs.push_back("intervene/freqeffect_country_mem_down_" + seed_tag(k) + ".tsv");
            io.outputs.push_back("intervene/freqeffect_in_context_city_mem_down_" + seed_tag(k) +
                                 ".tsv");
        });
    } else if (stage == "generalize") {
        if (cfg.n_family1 <= 0) return io; // nothing to do
        io.inputs = {"world.json", "vocab.json"};
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.inputs.push_back("models/model_" + tag + ".ckpt");
            io.inputs.push_back("eval/records_f1_" + tag + ".jsonl");
            io.inputs.push_back("sweep/choices_" + seed_tag(k) + ".json");
            io.outputs.push_back("generalize/records_f1_mem_down_" + seed_tag(k) + ".jsonl");
            io.outputs.push_back("generalize/records_f1_ctx_up_" + seed_tag(k) + ".jsonl");
            io.outputs.push_back("generalize/outcome_f1_" + seed_tag(k) + ".json");
        });
    } else if (stage == "svd") {
        io.inputs = {"world.json", "vocab.json"};
        each_seed([&](int k) {
            const std::string tag = size_tag(primary) + "_" + seed_tag(k);
            io.inputs.push_back("models/model_" + tag + ".ckpt");
            io.inputs.push_back("attribution/heads_" + seed_tag(k) + ".json");
            io.outputs.push_back("svd/tokens_memory_head_" + seed_tag(k) + ".tsv");
            io.outputs.push_back("svd/tokens_context_head_" + seed_tag(k) + ".tsv");
            io.outputs.push_back("svd/cluster_" + seed_tag(k) + ".json");
        });
    } else if (stage == "report") {
        // report consumes whatever exists; inputs listed for ordering only
        io.inputs = {"world.json"};
        io.outputs = {"report/report.md"};
    } else {
        throw ConfigError("unknown pipeline stage '" + stage + "'");
    }
    return io;
}

// Loads shared artifacts lazily per stage run.
struct Artifacts {
    const PipelineConfig& cfg;
    const fs::path& dir;

    WorldSpec world() const { return WorldSpec::from_json(read_file(dir / "world.json")); }
    Vocabulary vocab() const { return Vocabulary::from_json(read_file(dir / "vocab.json")); }
    DocumentSet corpus() const { return corpus_from_jsonl(read_file(dir / "corpus.jsonl")); }
    BinAssignment bins(const std::string& criterion) const {
        return bins_from_tsv(read_file(dir / ("freq/bins_" + criterion + ".tsv")), criterion);
    }
    Checkpoint model(int n_layers, int k) const {
        return load_checkpoint(dir / ("models/model_" + size_tag(n_layers) + "_" + seed_tag(k) +
                                      ".ckpt"));
    }
    std::vector<BehaviorRecord> records(const std::string& rel) const {
        return records_from_jsonl(read_file(dir / rel));
    }
};

void require_inputs(const fs::path& dir, const StageIo& io, const std::string& stage) {
    static const std::map<std::string, std::string> producer = {
        {"world.json", "gen-corpus"},   {"vocab.json", "gen-corpus"},
        {"corpus.jsonl", "gen-corpus"}, {"freq/", "freq-bins"},
        {"models/", "train"},           {"eval/", "eval"},
        {"attribution/", "attribute"},  {"sweep/", "sweep-alpha"},
        {"intervene/", "intervene"},    {"generalize/", "generalize"},
        {"svd/", "svd"}};
    for (const auto& rel : io.inputs) {
        if (fs::exists(dir / rel)) continue;
        std::string by = "an earlier stage";
        for (const auto& [prefix, stage_name] : producer) {
            if (rel.rfind(prefix, 0) == 0) by = "stage '" + stage_name + "'";
        }
        throw ConfigError("stage '" + stage + "' is missing input '" + rel +
                          "' (produced by " + by + "); run that stage first");
    }
}

// ------------------------------------------------------------- stage bodies

void stage_gen_corpus(const PipelineConfig& cfg, const fs::path& dir) {
    WorldOptions wo;
    wo.n_family1 = cfg.n_family1;
    wo.family1_zipf = cfg.family1_zipf;
    wo.independent_city_weights = cfg.independent_city_weights;
    const WorldSpec world =
        build_world(derive_seed(cfg.seed, fnv1a64("world")), cfg.n_countries, cfg.zipf_exponent, wo);

    CorpusOptions copt;
    copt.filler_fraction = cfg.filler_fraction;
    copt.second_fact_prob = cfg.second_fact_prob;
    copt.family1_fraction = cfg.n_family1 > 0 ? cfg.family1_fraction : 0.0;
    copt.noise_rate = cfg.noise_rate;
    const RawCorpus raw = generate_documents(world, cfg.total_docs, cfg.fact_templates(),
                                             derive_seed(cfg.seed, fnv1a64("corpus")), copt);
    const Vocabulary vocab = build_vocab(raw);
    const DocumentSet docs = encode_corpus(raw, vocab);

    write_file(dir / "world.json", world.to_json());
    write_file(dir / "vocab.json", vocab.to_json() + "\n");
    write_file(dir / "corpus.jsonl", corpus_to_jsonl(docs));
}

void stage_freq_bins(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const DocumentSet docs = art.corpus();
    const auto& fam = world.capitals();

    std::vector<std::string> terms;
    for (const auto& p : fam.pairs) {
        terms.push_back(p.subject);
        terms.push_back(p.attribute);
    }
    FrequencyTable table = count_occurrences(docs, vocab, terms);

    // memorized pairs: each country with its own capital; in-context pairs:
    // the full cross product
    std::vector<std::pair<std::string, std::string>> mem_pairs, ctx_pairs;
    for (const auto& p : fam.pairs) mem_pairs.push_back({p.subject, p.attribute});
    for (const auto& a : fam.pairs)
        for (const auto& b : fam.pairs) {
            if (a.subject != b.subject) ctx_pairs.push_back({a.subject, b.attribute});
        }
    const FrequencyTable mem_table = count_cooccurrences(docs, vocab, mem_pairs);
    const FrequencyTable ctx_table = count_cooccurrences(docs, vocab, ctx_pairs);
    table.pair_counts = mem_table.pair_counts;
    for (const auto& [k, v] : ctx_table.pair_counts) table.pair_counts[k] = v;

    std::vector<std::pair<std::string, long long>> country_counts, city_counts, memp_counts,
        ctxp_counts;
    for (const auto& p : fam.pairs) {
        country_counts.push_back({p.subject, table.term(p.subject)});
        city_counts.push_back({p.attribute, table.term(p.attribute)});
        memp_counts.push_back(
            {pair_key(p.subject, p.attribute), mem_table.pair(p.subject, p.attribute)});
    }
    for (const auto& [pr, count] : ctx_table.pair_counts)
        ctxp_counts.push_back({pair_key(pr.first, pr.second), count});

    write_file(dir / "freq/table.tsv", table_to_tsv(table));
    write_file(dir / "freq/bins_country.tsv",
               bins_to_tsv(percentile_bins(country_counts, cfg.n_bins, "country")));
    write_file(dir / "freq/bins_in_context_city.tsv",
               bins_to_tsv(percentile_bins(city_counts, cfg.n_bins, "in_context_city")));
    write_file(dir / "freq/bins_memorized_pair.tsv",
               bins_to_tsv(percentile_bins(memp_counts, cfg.n_bins, "memorized_pair")));
    write_file(dir / "freq/bins_in_context_pair.tsv",
               bins_to_tsv(percentile_bins(ctxp_counts, cfg.n_bins, "in_context_pair")));
}

std::vector<ProbeItem> make_probes(const WorldSpec& world, const Vocabulary& vocab,
                                   const BinAssignment& country_bins) {
    std::vector<ProbeItem> probes;
    const auto& fam = world.capitals();
    for (const auto& p : fam.pairs) {
        ProbeItem item;
        item.stem.push_back(vocab.eot_id());
        for (const auto& w : render_closed_book_stem(fam, p.subject))
            item.stem.push_back(vocab.id(w));
        item.target = vocab.id(p.attribute);
        item.bin = country_bins.bin(p.subject);
        probes.push_back(std::move(item));
    }
    return probes;
}

void stage_train(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const DocumentSet docs = art.corpus();
    const BinAssignment country_bins = art.bins("country");
    const auto probes = make_probes(world, vocab, country_bins);

    for (int size : cfg.layer_sizes) {
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const ModelConfig mc = cfg.model_config(
                static_cast<int>(std::find(cfg.layer_sizes.begin(), cfg.layer_sizes.end(), size) -
                                 cfg.layer_sizes.begin()),
                vocab.size());
            TrainConfig tc = cfg.train;
            tc.probe_bin = cfg.n_bins - 1;
            tc.seed = derive_seed(cfg.seed, fnv1a64("train"),
                                  static_cast<uint64_t>(k) * 100 + static_cast<uint64_t>(size));
            const TrainResult result = train(docs, vocab, mc, tc, probes);
            if (result.diverged)
                std::cerr << "[train] warning: size " << size << " seed " << k
                          << " diverged; kept last good checkpoint\n";

            const std::string tag = size_tag(size) + "_" + seed_tag(k);
            save_checkpoint(result.ckpt, dir / ("models/model_" + tag + ".ckpt"));
            std::string log = "# schema: factlab.trainlog.v1\tsteps=" +
                              std::to_string(result.steps_run) +
                              "\tdiverged=" + (result.diverged ? "1" : "0") +
                              "\tearly_stopped=" + (result.early_stopped ? "1" : "0") + "\n";
            log += "step\tloss\tprobe_recall\n";
            for (const auto& pt : result.log)
                log += std::to_string(pt.step) + '\t' + fmt_g(pt.loss) + '\t' +
                       fmt_g(pt.probe_recall) + '\n';
            write_file(dir / ("models/trainlog_" + tag + ".tsv"), log);
            std::cerr << "[train] " << tag << ": " << result.steps_run
                      << " steps, final loss " << fmt_g(result.final_loss, 5) << "\n";
        }
    }
}

void stage_eval(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const BinAssignment country_bins = art.bins("country");
    const auto prompts = build_prompt_set(world, vocab, 0);
    const auto probes = make_probes(world, vocab, country_bins);
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    for (int size : cfg.layer_sizes) {
        for (int k = 0; k < cfg.n_seeds; ++k) {
            const std::string tag = size_tag(size) + "_" + seed_tag(k);
            const Checkpoint ckpt = art.model(size, k);
            const auto records =
                run_behavior_suite(ckpt, prompts, vocab, cfg.max_new, nullptr, cfg.decode_chunk);
            write_file(dir / ("eval/records_" + tag + ".jsonl"), records_to_jsonl(records));

            // closed-book recall per frequency bin
            std::string recall = "# schema: factlab.recall.v1\n";
            recall += "bin\trecall\n";
            for (int b = 0; b < cfg.n_bins; ++b)
                recall += std::to_string(b) + '\t' + fmt_g(closed_book_recall(ckpt, probes, b)) +
                          '\n';
            write_file(dir / ("eval/recall_" + tag + ".tsv"), recall);

            write_file(dir / ("eval/summary_country_" + tag + ".tsv"),
                       bin_summary_to_tsv(aggregate_by_bin(records, prompts, country_bins,
                                                           BinCriterion::Country)));
            if (size == primary) {
                for (const auto crit :
                     {BinCriterion::InContextCity, BinCriterion::MemorizedPair,
                      BinCriterion::InContextPair}) {
                    const BinAssignment bins = art.bins(bin_criterion_name(crit));
                    write_file(dir / ("eval/summary_" + std::string(bin_criterion_name(crit)) +
                                      "_" + tag + ".tsv"),
                               bin_summary_to_tsv(aggregate_by_bin(records, prompts, bins, crit)));
                }
                const auto pstats = prefix_stats(records, prompts, vocab, world);
                std::string ptsv = "# schema: factlab.prefixstats.v1\n";
                ptsv += "total\twith_stem\tstem_in_context\tstem_memorized\tstem_other\n";
                ptsv += std::to_string(pstats.total) + '\t' + std::to_string(pstats.with_stem) +
                        '\t' + std::to_string(pstats.with_stem_by_class[0]) + '\t' +
                        std::to_string(pstats.with_stem_by_class[1]) + '\t' +
                        std::to_string(pstats.with_stem_by_class[2]) + '\n';
                write_file(dir / ("eval/prefix_stats_" + tag + ".tsv"), ptsv);

                if (cfg.n_family1 > 0) {
                    const auto f1_prompts = build_prompt_set(world, vocab, 1);
                    const auto f1_records = run_behavior_suite(ckpt, f1_prompts, vocab,
                                                               cfg.max_new, nullptr,
                                                               cfg.decode_chunk);
                    write_file(dir / ("eval/records_f1_" + tag + ".jsonl"),
                               records_to_jsonl(f1_records));
                }
            }
            std::cerr << "[eval] " << tag << " done\n";
        }
    }
}

void stage_attribute(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const BinAssignment country_bins = art.bins("country");
    const auto prompts = build_prompt_set(world, vocab, 0);
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    for (int k = 0; k < cfg.n_seeds; ++k) {
        const std::string tag = size_tag(primary) + "_" + seed_tag(k);
        const Checkpoint ckpt = art.model(primary, k);
        const auto baseline = art.records("eval/records_" + tag + ".jsonl");

        const auto selection =
            sample_selection_set(baseline, prompts, country_bins, cfg.selection_per_bin,
                                 derive_seed(cfg.seed, fnv1a64("selection"), k));
        json sel_json;
        sel_json["schema"] = "factlab.selection.v1";
        sel_json["in_context_ids"] = selection.in_context_ids;
        sel_json["memorized_ids"] = selection.memorized_ids;
        sel_json["warnings"] = selection.warnings;
        write_file(dir / ("attribution/selection_" + seed_tag(k) + ".json"),
                   sel_json.dump(2) + "\n");

        std::vector<int> all_ids = selection.in_context_ids;
        all_ids.insert(all_ids.end(), selection.memorized_ids.begin(),
                       selection.memorized_ids.end());
        std::vector<PromptInstance> sel_prompts;
        for (int id : all_ids) sel_prompts.push_back(prompts.at(static_cast<size_t>(id)));

        // batch maps of attribution_batch prompts feed head selection; their
        // mean is the exported heatmap. Head selection needs at least two
        // batches, so tiny selections shrink the batch.
        int batch_size = cfg.attribution_batch;
        if (sel_prompts.size() < 2 * static_cast<size_t>(batch_size))
            batch_size = std::max<int>(1, static_cast<int>(sel_prompts.size() / 2));
        std::vector<AttributionMap> maps;
        for (size_t start = 0; start < sel_prompts.size();
             start += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(sel_prompts.size(),
                                        start + static_cast<size_t>(batch_size));
            std::vector<PromptInstance> batch(sel_prompts.begin() + start,
                                              sel_prompts.begin() + end);
            maps.push_back(attribution_map(ckpt, batch, batch_size));
        }
        const HeadSelection heads = select_heads(maps);

        AttributionMap mean_map;
        mean_map.n_layers = ckpt.config.n_layers;
        mean_map.n_heads = ckpt.config.n_heads;
        mean_map.grid.assign(static_cast<size_t>(mean_map.n_layers) * mean_map.n_heads, 0.0);
        for (const auto& s : heads.ranked) mean_map.at(s.layer, s.head) = s.score;
        mean_map.n_prompts = static_cast<int>(sel_prompts.size());

        write_file(dir / ("attribution/map_" + seed_tag(k) + ".tsv"),
                   attribution_to_tsv(mean_map));
        write_file(dir / ("attribution/heatmap_" + seed_tag(k) + ".svg"),
                   emit_heatmap(mean_map));
        write_file(dir / ("attribution/heads_" + seed_tag(k) + ".json"), heads.to_json());
        std::cerr << "[attribute] seed " << k << ": memory head L" << heads.memory_head.layer
                  << "H" << heads.memory_head.head << ", context head L"
                  << heads.context_head.layer << "H" << heads.context_head.head << "\n";
    }
}

std::vector<PromptInstance> prompts_by_ids(const std::vector<PromptInstance>& prompts,
                                           const std::vector<int>& ids) {
    std::vector<PromptInstance> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(prompts.at(static_cast<size_t>(id)));
    return out;
}

std::vector<BehaviorRecord> records_by_ids(const std::vector<BehaviorRecord>& records,
                                           const std::vector<int>& ids) {
    std::map<int, const BehaviorRecord*> by_id;
    for (const auto& r : records) by_id[r.prompt_id] = &r;
    std::vector<BehaviorRecord> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(*by_id.at(id));
    return out;
}

void stage_sweep(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const auto prompts = build_prompt_set(world, vocab, 0);
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];
    const std::vector<double> grid =
        cfg.alpha_grid.empty() ? default_alpha_grid() : cfg.alpha_grid;

    for (int k = 0; k < cfg.n_seeds; ++k) {
        const std::string tag = size_tag(primary) + "_" + seed_tag(k);
        const Checkpoint ckpt = art.model(primary, k);
        const auto baseline = art.records("eval/records_" + tag + ".jsonl");
        const auto heads = HeadSelection::from_json(
            read_file(dir / ("attribution/heads_" + seed_tag(k) + ".json")));
        const auto sel = json::parse(
            read_file(dir / ("attribution/selection_" + seed_tag(k) + ".json")));

        std::vector<int> tuning_ids = sel.at("in_context_ids").get<std::vector<int>>();
        const auto mem_ids = sel.at("memorized_ids").get<std::vector<int>>();
        tuning_ids.insert(tuning_ids.end(), mem_ids.begin(), mem_ids.end());
        std::sort(tuning_ids.begin(), tuning_ids.end());
        const auto tuning_prompts = prompts_by_ids(prompts, tuning_ids);
        const auto tuning_baseline = records_by_ids(baseline, tuning_ids);

        struct Direction {
            const char* name;
            int layer, head;
            SweepObjective objective;
        };
        const std::vector<Direction> directions = {
            {"mem_down", heads.memory_head.layer, heads.memory_head.head,
             SweepObjective::FlipMemorizedToInContext},
            {"mem_up", heads.memory_head.layer, heads.memory_head.head,
             SweepObjective::FlipInContextToMemorized},
            {"ctx_down", heads.context_head.layer, heads.context_head.head,
             SweepObjective::FlipInContextToMemorized},
            {"ctx_up", heads.context_head.layer, heads.context_head.head,
             SweepObjective::FlipMemorizedToInContext},
        };

        json choices;
        choices["schema"] = "factlab.sweepchoices.v1";
        for (const auto& d : directions) {
            const SweepCurve curve = alpha_sweep(ckpt, vocab, d.layer, d.head, grid,
                                                 tuning_prompts, tuning_baseline, d.objective,
                                                 cfg.max_new);
            write_file(dir / ("sweep/sweep_" + std::string(d.name) + "_" + seed_tag(k) + ".tsv"),
                       curve.to_tsv());
            double best_flip = 0.0;
            for (const auto& p : curve.points)
                if (p.alpha == curve.alpha_star) best_flip = p.flip_fraction;
            choices[d.name] = {{"layer", d.layer},
                               {"head", d.head},
                               {"alpha_star", curve.alpha_star},
                               {"flip_fraction", best_flip},
                               {"objective", sweep_objective_name(d.objective)}};
            std::cerr << "[sweep] seed " << k << " " << d.name << ": alpha* = "
                      << fmt_g(curve.alpha_star) << " (flips " << fmt_g(best_flip, 4) << ")\n";
        }
        write_file(dir / ("sweep/choices_" + seed_tag(k) + ".json"), choices.dump(2) + "\n");
    }
}

void stage_intervene(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const auto prompts = build_prompt_set(world, vocab, 0);
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    for (int k = 0; k < cfg.n_seeds; ++k) {
        const std::string tag = size_tag(primary) + "_" + seed_tag(k);
        const Checkpoint ckpt = art.model(primary, k);
        const auto baseline = art.records("eval/records_" + tag + ".jsonl");
        const auto choices =
            json::parse(read_file(dir / ("sweep/choices_" + seed_tag(k) + ".json")));
        const auto sel = json::parse(
            read_file(dir / ("attribution/selection_" + seed_tag(k) + ".json")));

        // held-out prompts: everything outside the tuning set
        std::set<int> tuning(sel.at("in_context_ids").begin(), sel.at("in_context_ids").end());
        for (int id : sel.at("memorized_ids")) tuning.insert(id);
        std::vector<int> held_ids;
        for (const auto& p : prompts)
            if (!tuning.count(p.id)) held_ids.push_back(p.id);
        const auto held_prompts = prompts_by_ids(prompts, held_ids);
        const auto held_baseline = records_by_ids(baseline, held_ids);

        json outcome;
        outcome["schema"] = "factlab.outcome.v1";
        for (const char* dirname : {"mem_down", "mem_up", "ctx_down", "ctx_up"}) {
            const auto& ch = choices.at(dirname);
            InterventionSpec spec{ch.at("layer").get<int>(), ch.at("head").get<int>(),
                                  ch.at("alpha_star").get<double>()};
            const auto result =
                apply_and_measure(ckpt, vocab, spec, held_prompts, held_baseline, cfg.max_new);
            write_file(dir / ("intervene/records_" + std::string(dirname) + "_" + seed_tag(k) +
                              ".jsonl"),
                       records_to_jsonl(result.records));
            write_file(dir / ("intervene/flips_" + std::string(dirname) + "_" + seed_tag(k) +
                              ".tsv"),
                       result.flips_to_tsv());
            outcome[dirname] = {
                {"layer", spec.layer},
                {"head", spec.head},
                {"alpha", spec.alpha},
                {"base_p", {result.base_p[0], result.base_p[1], result.base_p[2]}},
                {"new_p", {result.new_p[0], result.new_p[1], result.new_p[2]}},
                {"delta_p", {result.delta_p[0], result.delta_p[1], result.delta_p[2]}}};

            if (std::string(dirname) == "mem_down") {
                for (const auto crit : {BinCriterion::Country, BinCriterion::InContextCity}) {
                    const BinAssignment bins = art.bins(bin_criterion_name(crit));
                    const auto pair = frequency_effect_after_intervention(
                        held_baseline, result.records, held_prompts, bins, crit);
                    write_file(dir / ("intervene/freqeffect_" +
                                      std::string(bin_criterion_name(crit)) + "_mem_down_" +
                                      seed_tag(k) + ".tsv"),
                               pair.to_tsv());
                }
            }
            std::cerr << "[intervene] seed " << k << " " << dirname
                      << ": in-context " << fmt_g(result.base_p[0], 4) << " -> "
                      << fmt_g(result.new_p[0], 4) << ", memorized "
                      << fmt_g(result.base_p[1], 4) << " -> " << fmt_g(result.new_p[1], 4)
                      << "\n";
        }
        write_file(dir / ("intervene/outcome_" + seed_tag(k) + ".json"), outcome.dump(2) + "\n");
    }
}

void stage_generalize(const PipelineConfig& cfg, const fs::path& dir) {
    if (cfg.n_family1 <= 0) return;
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const auto f1_prompts = build_prompt_set(world, vocab, 1);
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    for (int k = 0; k < cfg.n_seeds; ++k) {
        const std::string tag = size_tag(primary) + "_" + seed_tag(k);
        const Checkpoint ckpt = art.model(primary, k);
        const auto f1_baseline = art.records("eval/records_f1_" + tag + ".jsonl");
        const auto choices =
            json::parse(read_file(dir / ("sweep/choices_" + seed_tag(k) + ".json")));

        json outcome;
        outcome["schema"] = "factlab.outcome.v1";
        for (const char* dirname : {"mem_down", "ctx_up"}) {
            const auto& ch = choices.at(dirname);
            // family-0-tuned spec applied unchanged
            InterventionSpec spec{ch.at("layer").get<int>(), ch.at("head").get<int>(),
                                  ch.at("alpha_star").get<double>()};
            const auto result = generalization_test(ckpt, vocab, spec, f1_prompts, f1_baseline,
                                                    cfg.max_new);
            write_file(dir / ("generalize/records_f1_" + std::string(dirname) + "_" +
                              seed_tag(k) + ".jsonl"),
                       records_to_jsonl(result.records));
            outcome[dirname] = {
                {"layer", spec.layer},
                {"head", spec.head},
                {"alpha", spec.alpha},
                {"base_p", {result.base_p[0], result.base_p[1], result.base_p[2]}},
                {"new_p", {result.new_p[0], result.new_p[1], result.new_p[2]}},
                {"delta_p", {result.delta_p[0], result.delta_p[1], result.delta_p[2]}}};
        }
        write_file(dir / ("generalize/outcome_f1_" + seed_tag(k) + ".json"),
                   outcome.dump(2) + "\n");
        std::cerr << "[generalize] seed " << k << " done\n";
    }
}

void stage_svd(const PipelineConfig& cfg, const fs::path& dir) {
    Artifacts art{cfg, dir};
    const WorldSpec world = art.world();
    const Vocabulary vocab = art.vocab();
    const int primary = cfg.layer_sizes[static_cast<size_t>(cfg.primary_size_index)];

    std::vector<int> entity_ids;
    for (const auto& tok : world.entity_tokens())
        if (vocab.contains(tok)) entity_ids.push_back(vocab.id(tok));

    for (int k = 0; k < cfg.n_seeds; ++k) {
        const Checkpoint ckpt = art.model(primary, k);
        const auto heads = HeadSelection::from_json(
            read_file(dir / ("attribution/heads_" + seed_tag(k) + ".json")));

        json cluster;
        cluster["schema"] = "factlab.cluster.v1";
        auto& per_head = cluster["heads"] = json::array();
        for (int l = 0; l < ckpt.config.n_layers; ++l) {
            for (int h = 0; h < ckpt.config.n_heads; ++h) {
                const auto dec = decompose_head(ckpt, l, h);
                const auto decoded =
                    decode_singular_vectors(dec, ckpt, cfg.svd_top_k, cfg.svd_n_vectors);
                const auto report = cluster_report(decoded, entity_ids);
                per_head.push_back({{"layer", l},
                                    {"head", h},
                                    {"entity_share", report.aggregate},
                                    {"per_vector", report.share_per_vector}});
            }
        }
        auto dump_head = [&](const HeadSelection::Scored& s, const std::string& name) {
            const auto dec = decompose_head(ckpt, s.layer, s.head);
            const auto decoded =
                decode_singular_vectors(dec, ckpt, cfg.svd_top_k, cfg.svd_n_vectors);
            write_file(dir / ("svd/tokens_" + name + "_" + seed_tag(k) + ".tsv"),
                       decoded_to_tsv(decoded, vocab, s.layer, s.head));
        };
        dump_head(heads.memory_head, "memory_head");
        dump_head(heads.context_head, "context_head");
        cluster["memory_head"] = {{"layer", heads.memory_head.layer},
                                  {"head", heads.memory_head.head}};
        cluster["context_head"] = {{"layer", heads.context_head.layer},
                                   {"head", heads.context_head.head}};
        write_file(dir / ("svd/cluster_" + seed_tag(k) + ".json"), cluster.dump(2) + "\n");
        std::cerr << "[svd] seed " << k << " done\n";
    }
}

} // namespace

std::vector<std::string> pipeline_stage_names() {
    return {"gen-corpus", "freq-bins", "train",      "eval", "attribute",
            "sweep-alpha", "intervene", "generalize", "svd",  "report"};
}

void run_stage(const PipelineConfig& cfg, const fs::path& out_dir, const std::string& stage,
               bool force) {
    (void)force;
    fs::create_directories(out_dir);
    const StageIo io = stage_io(cfg, stage);
    require_inputs(out_dir, io, stage);

    if (stage == "gen-corpus") stage_gen_corpus(cfg, out_dir);
    else if (stage == "freq-bins") stage_freq_bins(cfg, out_dir);
    else if (stage == "train") stage_train(cfg, out_dir);
    else if (stage == "eval") stage_eval(cfg, out_dir);
    else if (stage == "attribute") stage_attribute(cfg, out_dir);
    else if (stage == "sweep-alpha") stage_sweep(cfg, out_dir);
    else if (stage == "intervene") stage_intervene(cfg, out_dir);
    else if (stage == "generalize") stage_generalize(cfg, out_dir);
    else if (stage == "svd") stage_svd(cfg, out_dir);
    else if (stage == "report") write_report(cfg, out_dir);
    else throw ConfigError("unknown pipeline stage '" + stage + "'");

    // record hashes in the manifest
    Manifest manifest = Manifest::load(out_dir);
    Manifest::Entry entry;
    entry.config_hash = hash_hex(fnv1a64(cfg.to_json()));
    for (const auto& rel : io.inputs)
        if (fs::exists(out_dir / rel)) entry.inputs[rel] = hash_hex(hash_file(out_dir / rel));
    for (const auto& rel : io.outputs)
        if (fs::exists(out_dir / rel)) entry.outputs[rel] = hash_hex(hash_file(out_dir / rel));
    manifest.stages[stage] = std::move(entry);
    manifest.save(out_dir);
}

void run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir, bool force) {
    fs::create_directories(out_dir);
    const Manifest manifest = Manifest::load(out_dir);
    const std::string config_hash = hash_hex(fnv1a64(cfg.to_json()));

    for (const auto& stage : pipeline_stage_names()) {
        const StageIo io = stage_io(cfg, stage);
        bool skip = false;
        if (!force) {
            auto it = manifest.stages.find(stage);
            if (it != manifest.stages.end() && it->second.config_hash == config_hash) {
                skip = true;
                for (const auto& rel : io.inputs) {
                    auto in = it->second.inputs.find(rel);
                    if (in == it->second.inputs.end() || !fs::exists(out_dir / rel) ||
                        hash_hex(hash_file(out_dir / rel)) != in->second) {
                        skip = false;
                        break;
                    }
                }
                if (skip) {
                    for (const auto& rel : io.outputs) {
                        auto out = it->second.outputs.find(rel);
                        if (out == it->second.outputs.end() || !fs::exists(out_dir / rel) ||
                            hash_hex(hash_file(out_dir / rel)) != out->second) {
                            skip = false;
                            break;
                        }
                    }
                }
            }
        }
        if (skip) {
            std::cerr << "[pipeline] " << stage << ": up to date, skipping\n";
            continue;
        }
        std::cerr << "[pipeline] running " << stage << "\n";
        run_stage(cfg, out_dir, stage, force);
    }
}

std::map<std::string, std::string> hash_artifacts(const fs::path& out_dir) {
    std::map<std::string, std::string> hashes;
    for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), out_dir).string();
        if (rel == "manifest.json") continue; // manifest tracks the others
        hashes[rel] = hash_hex(hash_file(entry.path()));
    }
    return hashes;
}

} // namespace factlab
