#include "factlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "factlab/common.hpp"
#include "factlab/rng.hpp"
#include "kernels.hpp"

namespace factlab {

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 2 || max_context < 1 ||
        mlp_mult < 1)
        throw ConfigError("model config: all dimensions must be positive (vocab >= 2)");
    if (d_model % n_heads != 0)
        throw ConfigError("model config: d_model must be divisible by n_heads");
}

ParamLayout ParamLayout::from_config(const ModelConfig& c) {
    c.validate();
    const size_t D = static_cast<size_t>(c.d_model);
    const size_t V = static_cast<size_t>(c.vocab_size);
    const size_t M = static_cast<size_t>(c.d_mlp());
    ParamLayout lay;
    size_t cur = 0;
    auto take = [&cur](size_t n) {
        const size_t at = cur;
        cur += n;
        return at;
    };
    lay.w_e = take(V * D);
    lay.w_pos = take(static_cast<size_t>(c.max_context) * D);
    lay.layers.resize(static_cast<size_t>(c.n_layers));
    for (auto& l : lay.layers) {
        l.ln1_g = take(D);
        l.ln1_b = take(D);
        l.w_q = take(D * D);
        l.w_k = take(D * D);
        l.w_v = take(D * D);
        l.w_o = take(D * D);
        l.b_o = take(D);
        l.ln2_g = take(D);
        l.ln2_b = take(D);
        l.w_in = take(D * M);
        l.w_out = take(M * D);
    }
    lay.lnf_g = take(D);
    lay.lnf_b = take(D);
    lay.w_u = take(D * V);
    lay.total = cur;
    return lay;
}

Checkpoint Checkpoint::zeros(const ModelConfig& config) {
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.layout = ParamLayout::from_config(config);
    ckpt.params.assign(ckpt.layout.total, 0.0f);
    return ckpt;
}

Checkpoint Checkpoint::random_init(const ModelConfig& config, uint64_t seed) {
    Checkpoint ckpt = zeros(config);
    Rng rng(derive_seed(seed, /*stage_tag=*/0x696e6974ull)); // "init"
    const double std0 = 0.02;
    const double std_res = std0 / std::sqrt(2.0 * config.n_layers);

    auto fill = [&rng](float* p, size_t n, double std) {
        for (size_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.next_gauss() * std);
    };
    auto ones = [](float* p, size_t n) { std::fill(p, p + n, 1.0f); };

    const size_t D = static_cast<size_t>(config.d_model);
    const size_t V = static_cast<size_t>(config.vocab_size);
    const size_t M = static_cast<size_t>(config.d_mlp());
    const auto& lay = ckpt.layout;

    fill(ckpt.at(lay.w_e), V * D, std0);
    fill(ckpt.at(lay.w_pos), static_cast<size_t>(config.max_context) * D, std0);
    for (const auto& l : lay.layers) {
        ones(ckpt.at(l.ln1_g), D);
        fill(ckpt.at(l.w_q), D * D, std0);
        fill(ckpt.at(l.w_k), D * D, std0);
        fill(ckpt.at(l.w_v), D * D, std0);
        fill(ckpt.at(l.w_o), D * D, std_res);
        ones(ckpt.at(l.ln2_g), D);
        fill(ckpt.at(l.w_in), D * M, std0);
        fill(ckpt.at(l.w_out), M * D, std_res);
    }
    ones(ckpt.at(lay.lnf_g), D);
    fill(ckpt.at(lay.w_u), D * V, std0);
    return ckpt;
}

const float* Checkpoint::w_o_head(int layer, int head) const {
    const auto& l = layout.layers.at(static_cast<size_t>(layer));
    if (head < 0 || head >= config.n_heads)
        throw ConfigError("head index out of range: " + std::to_string(head));
    return at(l.w_o) + static_cast<size_t>(head) * config.d_head() * config.d_model;
}

void Checkpoint::validate_finite() const {
    for (float p : params) {
        if (!std::isfinite(p)) throw RuntimeFailure("checkpoint contains non-finite parameters");
    }
}

InterventionSet::InterventionSet(const std::vector<InterventionSpec>& specs) {
    for (const auto& s : specs) add(s);
}

void InterventionSet::add(const InterventionSpec& spec) {
    for (const auto& s : specs_) {
        if (s.layer == spec.layer && s.head == spec.head)
            throw ConfigError("duplicate intervention on layer " + std::to_string(spec.layer) +
                              " head " + std::to_string(spec.head));
    }
    specs_.push_back(spec);
}

double InterventionSet::scale(int layer, int head) const {
    for (const auto& s : specs_) {
        if (s.layer == layer && s.head == head) return s.alpha;
    }
    return 1.0;
}

void InterventionSet::validate_against(const ModelConfig& config) const {
    for (const auto& s : specs_) {
        if (s.layer < 0 || s.layer >= config.n_layers || s.head < 0 || s.head >= config.n_heads)
            throw ConfigError("intervention target out of range: layer " +
                              std::to_string(s.layer) + " head " + std::to_string(s.head));
    }
}

std::string InterventionSet::descriptor() const {
    if (specs_.empty()) return "none";
    std::string out;
    for (const auto& s : specs_) {
        if (!out.empty()) out += ';';
        out += "L" + std::to_string(s.layer) + "H" + std::to_string(s.head) + "a" + fmt_g(s.alpha);
    }
    return out;
}

void ResidualTrace::init(const ModelConfig& config, int pos) {
    n_layers = config.n_layers;
    n_heads = config.n_heads;
    d_head = config.d_head();
    d_model = config.d_model;
    position = pos;
    head_result.assign(static_cast<size_t>(n_layers) * n_heads * d_head, 0.0);
    attn_out.assign(static_cast<size_t>(n_layers) * d_model, 0.0);
    mlp_out.assign(static_cast<size_t>(n_layers) * d_model, 0.0);
    embedding.assign(static_cast<size_t>(d_model), 0.0);
    final_residual.assign(static_cast<size_t>(d_model), 0.0);
}

InferenceSession::InferenceSession(const Checkpoint& ckpt, int batch, const InterventionSet* iv)
    : ckpt_(ckpt), batch_(batch) {
    ckpt.config.validate();
    if (batch < 1) throw ConfigError("inference batch must be >= 1");
    if (iv) {
        iv->validate_against(ckpt.config);
        iv_ = *iv;
    }
    const auto& c = ckpt.config;
    const size_t B = static_cast<size_t>(batch);
    const size_t D = static_cast<size_t>(c.d_model);
    const size_t cache = B * static_cast<size_t>(c.n_heads) *
                         static_cast<size_t>(c.max_context) * static_cast<size_t>(c.d_head());
    k_cache_.assign(static_cast<size_t>(c.n_layers), std::vector<double>(cache, 0.0));
    v_cache_.assign(static_cast<size_t>(c.n_layers), std::vector<double>(cache, 0.0));
    scores_.assign(B * static_cast<size_t>(c.max_context), 0.0);
    x_.assign(B * D, 0.0);
    xn_.assign(B * D, 0.0);
    q_.assign(B * D, 0.0);
    k_.assign(B * D, 0.0);
    v_.assign(B * D, 0.0);
    r_.assign(B * D, 0.0);
    attn_.assign(B * D, 0.0);
    h1_.assign(B * static_cast<size_t>(c.d_mlp()), 0.0);
    mlp_.assign(B * D, 0.0);
    fin_.assign(B * D, 0.0);
    logits_.assign(B * static_cast<size_t>(c.vocab_size), 0.0);
}

void InferenceSession::attention(int layer, std::vector<ResidualTrace>* traces) {
    const auto& c = ckpt_.config;
    const int H = c.n_heads;
    const int dh = c.d_head();
    const int D = c.d_model;
    const int Tmax = c.max_context;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double>& kc = k_cache_[static_cast<size_t>(layer)];
    std::vector<double>& vc = v_cache_[static_cast<size_t>(layer)];

#pragma omp parallel for schedule(static) if (batch_ > 1)
    for (int b = 0; b < batch_; ++b) {
        double* scores = scores_.data() + static_cast<size_t>(b) * Tmax;
        for (int h = 0; h < H; ++h) {
            const size_t head_base =
                (static_cast<size_t>(b) * H + static_cast<size_t>(h)) * Tmax;
            // append this position's k/v slice
            double* krow = kc.data() + (head_base + static_cast<size_t>(pos_)) * dh;
            double* vrow = vc.data() + (head_base + static_cast<size_t>(pos_)) * dh;
            const double* qb = q_.data() + static_cast<size_t>(b) * D + h * dh;
            const double* kb = k_.data() + static_cast<size_t>(b) * D + h * dh;
            const double* vb = v_.data() + static_cast<size_t>(b) * D + h * dh;
            for (int d = 0; d < dh; ++d) {
                krow[d] = kb[d];
                vrow[d] = vb[d];
            }

            const int n_ctx = pos_ + 1;
            double maxs = -1e300;
            for (int j = 0; j < n_ctx; ++j) {
                const double* kj = kc.data() + (head_base + static_cast<size_t>(j)) * dh;
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += qb[d] * kj[d];
                s *= inv_sqrt_dh;
                scores[j] = s;
                maxs = std::max(maxs, s);
            }
            double denom = 0.0;
            for (int j = 0; j < n_ctx; ++j) {
                scores[j] = std::exp(scores[j] - maxs);
                denom += scores[j];
            }
            const double inv_denom = 1.0 / denom;

            double* rb = r_.data() + static_cast<size_t>(b) * D + h * dh;
            for (int d = 0; d < dh; ++d) rb[d] = 0.0;
            for (int j = 0; j < n_ctx; ++j) {
                const double a = scores[j] * inv_denom;
                const double* vj = vc.data() + (head_base + static_cast<size_t>(j)) * dh;
                for (int d = 0; d < dh; ++d) rb[d] += a * vj[d];
            }

            const double alpha = iv_.scale(layer, h);
            if (alpha != 1.0) {
                for (int d = 0; d < dh; ++d) rb[d] *= alpha;
            }
            if (traces) {
                double* dst = (*traces)[static_cast<size_t>(b)].head_result.data() +
                              (static_cast<size_t>(layer) * H + static_cast<size_t>(h)) * dh;
                for (int d = 0; d < dh; ++d) dst[d] = rb[d];
            }
        }
    }
}

void InferenceSession::step(const std::vector<int>& tokens, bool want_logits,
                            std::vector<ResidualTrace>* traces) {
    const auto& c = ckpt_.config;
    if (static_cast<int>(tokens.size()) != batch_)
        throw ConfigError("step: token count does not match the batch");
    if (pos_ >= c.max_context)
        throw ConfigError("input exceeds max_context " + std::to_string(c.max_context));
    if (traces && static_cast<int>(traces->size()) != batch_)
        throw ConfigError("step: trace array does not match the batch");
    const int D = c.d_model;
    const int V = c.vocab_size;
    const auto& lay = ckpt_.layout;

    if (traces) {
        for (auto& t : *traces) t.init(c, pos_);
    }

    const float* w_e = ckpt_.at(lay.w_e);
    const float* w_pos = ckpt_.at(lay.w_pos) + static_cast<size_t>(pos_) * D;
    for (int b = 0; b < batch_; ++b) {
        const int tok = tokens[static_cast<size_t>(b)];
        if (tok < 0 || tok >= V)
            throw ConfigError("token id out of range: " + std::to_string(tok));
        const float* e = w_e + static_cast<size_t>(tok) * D;
        double* x = x_.data() + static_cast<size_t>(b) * D;
        for (int i = 0; i < D; ++i) x[i] = static_cast<double>(e[i]) + static_cast<double>(w_pos[i]);
        if (traces) {
            std::copy(x, x + D, (*traces)[static_cast<size_t>(b)].embedding.begin());
        }
    }

    for (int l = 0; l < c.n_layers; ++l) {
        const auto& L = lay.layers[static_cast<size_t>(l)];
#pragma omp parallel for schedule(static) if (batch_ > 1)
        for (int b = 0; b < batch_; ++b) {
            detail::layer_norm_row(x_.data() + static_cast<size_t>(b) * D, D, ckpt_.at(L.ln1_g),
                                   ckpt_.at(L.ln1_b), xn_.data() + static_cast<size_t>(b) * D);
        }
        detail::matmul_f(xn_.data(), ckpt_.at(L.w_q), nullptr, q_.data(), batch_, D, D);
        detail::matmul_f(xn_.data(), ckpt_.at(L.w_k), nullptr, k_.data(), batch_, D, D);
        detail::matmul_f(xn_.data(), ckpt_.at(L.w_v), nullptr, v_.data(), batch_, D, D);

        attention(l, traces);

        detail::matmul_f(r_.data(), ckpt_.at(L.w_o), ckpt_.at(L.b_o), attn_.data(), batch_, D, D);

#pragma omp parallel for schedule(static) if (batch_ > 1)
        for (int b = 0; b < batch_; ++b) {
            double* x = x_.data() + static_cast<size_t>(b) * D;
            const double* a = attn_.data() + static_cast<size_t>(b) * D;
            if (traces) {
                std::copy(a, a + D,
                          (*traces)[static_cast<size_t>(b)].attn_out.begin() +
                              static_cast<size_t>(l) * D);
            }
            for (int i = 0; i < D; ++i) x[i] += a[i];
            detail::layer_norm_row(x, D, ckpt_.at(L.ln2_g), ckpt_.at(L.ln2_b),
                                   xn_.data() + static_cast<size_t>(b) * D);
        }
        const int M = c.d_mlp();
        detail::matmul_f(xn_.data(), ckpt_.at(L.w_in), nullptr, h1_.data(), batch_, D, M);
#pragma omp parallel for schedule(static) if (batch_ > 1)
        for (int b = 0; b < batch_; ++b) {
            double* h = h1_.data() + static_cast<size_t>(b) * M;
            for (int i = 0; i < M; ++i) h[i] = detail::gelu(h[i]);
        }
        detail::matmul_f(h1_.data(), ckpt_.at(L.w_out), nullptr, mlp_.data(), batch_, M, D);
#pragma omp parallel for schedule(static) if (batch_ > 1)
        for (int b = 0; b < batch_; ++b) {
            double* x = x_.data() + static_cast<size_t>(b) * D;
            const double* m = mlp_.data() + static_cast<size_t>(b) * D;
            if (traces) {
                std::copy(m, m + D,
                          (*traces)[static_cast<size_t>(b)].mlp_out.begin() +
                              static_cast<size_t>(l) * D);
            }
            for (int i = 0; i < D; ++i) x[i] += m[i];
        }
    }

    if (traces) {
        for (int b = 0; b < batch_; ++b) {
            const double* x = x_.data() + static_cast<size_t>(b) * D;
            std::copy(x, x + D, (*traces)[static_cast<size_t>(b)].final_residual.begin());
        }
    }

    if (want_logits) {
#pragma omp parallel for schedule(static) if (batch_ > 1)
        for (int b = 0; b < batch_; ++b) {
            detail::layer_norm_row(x_.data() + static_cast<size_t>(b) * D, D, ckpt_.at(lay.lnf_g),
                                   ckpt_.at(lay.lnf_b), fin_.data() + static_cast<size_t>(b) * D);
        }
        detail::matmul_f(fin_.data(), ckpt_.at(lay.w_u), nullptr, logits_.data(), batch_, D, V);
    }
    ++pos_;
}

const double* InferenceSession::logits(int row) const {
    return logits_.data() + static_cast<size_t>(row) * ckpt_.config.vocab_size;
}

int InferenceSession::argmax(int row) const {
    const double* lg = logits(row);
    int best = 0;
    for (int v = 1; v < ckpt_.config.vocab_size; ++v) {
        if (lg[v] > lg[best]) best = v;
    }
    return best;
}

namespace {

int normalize_capture(int capture_at, size_t len) {
    int pos = capture_at < 0 ? static_cast<int>(len) + capture_at : capture_at;
    if (pos < 0 || pos >= static_cast<int>(len))
        throw ConfigError("capture position out of range");
    return pos;
}

} // namespace

ForwardResult forward(const Checkpoint& ckpt, const std::vector<int>& tokens, int capture_at,
                      const InterventionSet* iv) {
    if (tokens.empty()) throw ConfigError("forward: empty token sequence");
    const int cap = normalize_capture(capture_at, tokens.size());
    const int V = ckpt.config.vocab_size;

    InferenceSession session(ckpt, 1, iv);
    ForwardResult out;
    out.logits.resize(tokens.size() * static_cast<size_t>(V));
    std::vector<ResidualTrace> traces(1);
    for (size_t t = 0; t < tokens.size(); ++t) {
        const bool capture = static_cast<int>(t) == cap;
        session.step({tokens[t]}, /*want_logits=*/true, capture ? &traces : nullptr);
        std::copy(session.logits(0), session.logits(0) + V, out.logits.begin() + t * V);
        if (capture) out.trace = traces[0];
    }
    return out;
}

std::vector<ResidualTrace> forward_traces(const Checkpoint& ckpt,
                                          const std::vector<std::vector<int>>& prompts,
                                          int capture_at, const InterventionSet* iv) {
    if (prompts.empty()) return {};
    const size_t len = prompts.front().size();
    for (const auto& p : prompts) {
        if (p.size() != len)
            throw ConfigError("forward_traces: prompts must have equal length");
    }
    const int cap = normalize_capture(capture_at, len);

    InferenceSession session(ckpt, static_cast<int>(prompts.size()), iv);
    std::vector<ResidualTrace> traces(prompts.size());
    std::vector<int> col(prompts.size());
    for (size_t t = 0; t < len; ++t) {
        for (size_t b = 0; b < prompts.size(); ++b) col[b] = prompts[b][t];
        const bool capture = static_cast<int>(t) == cap;
        session.step(col, /*want_logits=*/false, capture ? &traces : nullptr);
    }
    return traces;
}

std::vector<std::vector<int>> greedy_decode_batch(const Checkpoint& ckpt,
                                                  const std::vector<std::vector<int>>& prompts,
                                                  int max_new, const InterventionSet* iv,
                                                  int eot_id, int chunk) {
    if (max_new < 0) throw ConfigError("greedy_decode: max_new must be >= 0");
    if (chunk < 1) throw ConfigError("greedy_decode: chunk must be >= 1");
    std::vector<std::vector<int>> out(prompts.size());
    if (prompts.empty() || max_new == 0) return out;

    // rows advance in lockstep, so chunks are grouped by prompt length
    std::map<size_t, std::vector<size_t>> by_len;
    for (size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].empty()) throw ConfigError("greedy_decode_batch: empty prompt");
        by_len[prompts[i].size()].push_back(i);
    }

    for (const auto& [len, idxs] : by_len) {
        for (size_t start = 0; start < idxs.size(); start += static_cast<size_t>(chunk)) {
            const size_t end = std::min(idxs.size(), start + static_cast<size_t>(chunk));
            const int B = static_cast<int>(end - start);
            InferenceSession session(ckpt, B, iv);
            std::vector<int> col(static_cast<size_t>(B));
            for (size_t t = 0; t < len; ++t) {
                for (int b = 0; b < B; ++b) col[static_cast<size_t>(b)] = prompts[idxs[start + b]][t];
                session.step(col, /*want_logits=*/t + 1 == len);
            }
            std::vector<char> done(static_cast<size_t>(B), 0);
            for (int n = 0; n < max_new; ++n) {
                bool all_done = true;
                for (int b = 0; b < B; ++b) {
                    const int next = session.argmax(b);
                    col[static_cast<size_t>(b)] = next;
                    if (!done[static_cast<size_t>(b)]) {
                        if (eot_id >= 0 && next == eot_id) {
                            done[static_cast<size_t>(b)] = 1;
                        } else {
                            out[idxs[start + b]].push_back(next);
                            all_done = false;
                        }
                    }
                }
                if (all_done || n + 1 == max_new) break;
                if (session.position() >= ckpt.config.max_context) break; // stop at context edge
                session.step(col, /*want_logits=*/true);
            }
        }
    }
    return out;
}

std::vector<int> greedy_decode(const Checkpoint& ckpt, const std::vector<int>& prompt,
                               int max_new, const InterventionSet* iv, int eot_id) {
    auto out = greedy_decode_batch(ckpt, {prompt}, max_new, iv, eot_id, /*chunk=*/1);
    return out.front();
}

} // namespace factlab
