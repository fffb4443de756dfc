#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace factlab {

struct ModelConfig {
    int n_layers = 1;
    int n_heads = 1;
    int d_model = 16;
    int vocab_size = 2;
    int max_context = 16;
    int mlp_mult = 4;

    int d_head() const { return d_model / n_heads; }
    int d_mlp() const { return mlp_mult * d_model; }
    void validate() const;
};

// Offsets of each parameter tensor inside the flat buffer. The order here is
// also the on-disk order of the checkpoint format.
struct LayerOffsets {
    size_t ln1_g, ln1_b;
    size_t w_q, w_k, w_v;     // [d_model][d_model], head h owns columns [h*dh, (h+1)*dh)
    size_t w_o;               // [d_model][d_model], head h owns rows    [h*dh, (h+1)*dh)
    size_t b_o;
    size_t ln2_g, ln2_b;
    size_t w_in;              // [d_model][d_mlp]
    size_t w_out;             // [d_mlp][d_model]
};

struct ParamLayout {
    size_t w_e = 0;           // [vocab][d_model]
    size_t w_pos = 0;         // [max_context][d_model]
    std::vector<LayerOffsets> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t w_u = 0;           // [d_model][vocab]
    size_t total = 0;

    static ParamLayout from_config(const ModelConfig& config);
};

// All trainable parameters plus the configuration; float32 storage, all math
// runs in double.
struct Checkpoint {
    ModelConfig config;
    ParamLayout layout;
    std::vector<float> params;

    static Checkpoint zeros(const ModelConfig& config);
    // GPT-2-style init: normals scaled 0.02, residual projections scaled
    // down by 1/sqrt(2*n_layers), norm gains 1.
    static Checkpoint random_init(const ModelConfig& config, uint64_t seed);

    const float* at(size_t offset) const { return params.data() + offset; }
    float* at(size_t offset) { return params.data() + offset; }

    // Per-head W_O slice: rows [head*dh, (head+1)*dh) of w_o.
    const float* w_o_head(int layer, int head) const;

    void validate_finite() const; // throws RuntimeFailure on NaN/Inf
};

// Runtime scaling of one head's value-path output (r^h *= alpha before W_O).
// alpha = 1 is the identity; alpha = 0 ablates the head. Parameters are never
// touched.
struct InterventionSpec {
    int layer = 0;
    int head = 0;
    double alpha = 1.0;
};

class InterventionSet {
public:
    InterventionSet() = default;
    explicit InterventionSet(const std::vector<InterventionSpec>& specs);

    // Throws ConfigError if the (layer, head) target is already present.
    void add(const InterventionSpec& spec);
    bool empty() const { return specs_.empty(); }
    double scale(int layer, int head) const;
    const std::vector<InterventionSpec>& specs() const { return specs_; }
    void validate_against(const ModelConfig& config) const;
    std::string descriptor() const;

private:
    std::vector<InterventionSpec> specs_;
};

// Activations captured at one token position during a forward pass:
// per-(layer, head) attention result vectors (after value mixing and any
// intervention scaling, before W_O), plus the per-layer sublayer outputs and
// the pre-unembedding residual, which together reconstruct the residual
// stream additively.
struct ResidualTrace {
    int n_layers = 0, n_heads = 0, d_head = 0, d_model = 0;
    int position = -1;
    std::vector<double> head_result;    // [L][H][dh]
    std::vector<double> attn_out;       // [L][D], after W_O and bias
    std::vector<double> mlp_out;        // [L][D]
    std::vector<double> embedding;      // [D], token + position
    std::vector<double> final_residual; // [D], before the final norm

    void init(const ModelConfig& config, int pos);
    const double* r(int layer, int head) const {
        return head_result.data() +
               (static_cast<size_t>(layer) * n_heads + static_cast<size_t>(head)) * d_head;
    }
    const double* attn(int layer) const {
        return attn_out.data() + static_cast<size_t>(layer) * d_model;
    }
    const double* mlp(int layer) const {
        return mlp_out.data() + static_cast<size_t>(layer) * d_model;
    }
};

// Batched incremental decoder state against a read-only checkpoint. All rows
// advance in lockstep one position at a time. Prefill and generation use the
// same per-position arithmetic, so results are bitwise independent of how
// prompts are batched.
class InferenceSession {
public:
    InferenceSession(const Checkpoint& ckpt, int batch, const InterventionSet* iv = nullptr);

    // Feed one token per row. Logits are computed only when requested.
    // If traces is non-null it must have batch entries; each row's trace is
    // captured at this position.
    void step(const std::vector<int>& tokens, bool want_logits,
              std::vector<ResidualTrace>* traces = nullptr);

    int position() const { return pos_; }
    int batch() const { return batch_; }
    // Row-major [batch][vocab] logits from the last step with want_logits.
    const double* logits(int row) const;
    // Greedy pick over the last logits; ties break toward the lowest id.
    int argmax(int row) const;

private:
    void attention(int layer, std::vector<ResidualTrace>* traces);

    const Checkpoint& ckpt_;
    InterventionSet iv_;
    int batch_ = 0;
    int pos_ = 0;
    std::vector<std::vector<double>> k_cache_, v_cache_; // per layer: [B][H][Tmax][dh]
    std::vector<double> scores_;
    std::vector<double> x_, xn_, q_, k_, v_, r_, attn_, h1_, mlp_, fin_, logits_;
};

struct ForwardResult {
    std::vector<double> logits; // [T][vocab]
    ResidualTrace trace;
};

// Full forward over one prompt with logits at every position and a trace
// captured at capture_at (negative counts from the end: -1 = last token).
ForwardResult forward(const Checkpoint& ckpt, const std::vector<int>& tokens, int capture_at = -1,
                      const InterventionSet* iv = nullptr);

// Traces for a batch of equal-length prompts, captured at capture_at.
std::vector<ResidualTrace> forward_traces(const Checkpoint& ckpt,
                                          const std::vector<std::vector<int>>& prompts,
                                          int capture_at = -1,
                                          const InterventionSet* iv = nullptr);

// Greedy decoding; stops at max_new tokens or end-of-text (eot_id >= 0).
std::vector<int> greedy_decode(const Checkpoint& ckpt, const std::vector<int>& prompt,
                               int max_new, const InterventionSet* iv = nullptr, int eot_id = -1);

// Batched greedy decoding over equal-length prompts, chunked to bound memory.
std::vector<std::vector<int>> greedy_decode_batch(const Checkpoint& ckpt,
                                                  const std::vector<std::vector<int>>& prompts,
                                                  int max_new,
                                                  const InterventionSet* iv = nullptr,
                                                  int eot_id = -1, int chunk = 256);

// Binary checkpoint persistence (magic + config + little-endian float32
// parameters). Round-trips are bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace factlab
