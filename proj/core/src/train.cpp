#include "factlab/train.hpp"

#include <algorithm>
#include <cmath>

#include "factlab/common.hpp"
#include "factlab/rng.hpp"
#include "kernels.hpp"

namespace factlab {

namespace {

using detail::gelu;
using detail::gelu_grad;
using detail::matmul_at_b_accum;
using detail::matmul_f;
using detail::matmul_f_bt;

// All per-position activations of one batched forward pass, kept for the
// backward pass.
struct Workspace {
    int B = 0, T = 0;
    ModelConfig cfg;

    std::vector<double> x0;                    // [B*T][D] embeddings
    struct Layer {
        std::vector<double> x_in;              // residual entering the layer
        std::vector<double> xn1, q, k, v, r;   // [B*T][D]
        std::vector<double> att;               // [B][H][T][T]
        std::vector<double> x_mid, xn2;        // [B*T][D]
        std::vector<double> pre, h1;           // [B*T][Dm]
        std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd; // [B*T]
    };
    std::vector<Layer> layers;
    std::vector<double> x_final, fin;          // [B*T][D]
    std::vector<double> lnf_mean, lnf_rstd;    // [B*T]
    std::vector<double> probs;                 // [B*T][V]

    void init(const ModelConfig& c, int batch, int seq) {
        cfg = c;
        B = batch;
        T = seq;
        const size_t R = static_cast<size_t>(B) * T;
        const size_t D = static_cast<size_t>(c.d_model);
        const size_t M = static_cast<size_t>(c.d_mlp());
        x0.assign(R * D, 0.0);
        layers.resize(static_cast<size_t>(c.n_layers));
        for (auto& l : layers) {
            l.x_in.assign(R * D, 0.0);
            l.xn1.assign(R * D, 0.0);
            l.q.assign(R * D, 0.0);
            l.k.assign(R * D, 0.0);
            l.v.assign(R * D, 0.0);
            l.r.assign(R * D, 0.0);
            l.att.assign(static_cast<size_t>(B) * c.n_heads * T * T, 0.0);
            l.x_mid.assign(R * D, 0.0);
            l.xn2.assign(R * D, 0.0);
            l.pre.assign(R * M, 0.0);
            l.h1.assign(R * M, 0.0);
            l.ln1_mean.assign(R, 0.0);
            l.ln1_rstd.assign(R, 0.0);
            l.ln2_mean.assign(R, 0.0);
            l.ln2_rstd.assign(R, 0.0);
        }
        x_final.assign(R * D, 0.0);
        fin.assign(R * D, 0.0);
        lnf_mean.assign(R, 0.0);
        lnf_rstd.assign(R, 0.0);
        probs.assign(R * static_cast<size_t>(c.vocab_size), 0.0);
    }
};

void layer_norm_batch(const double* x, int rows, int n, const float* g, const float* b, double* y,
                      double* means, double* rstds) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        detail::layer_norm_row(x + static_cast<size_t>(r) * n, n, g, b,
                               y + static_cast<size_t>(r) * n, means + r, rstds + r);
    }
}

// dx += LN backward for one row given upstream dy.
void layer_norm_backward_row(const double* x, const double* dy, int n, const float* g, double mean,
                             double rstd, double* dx, double* dg, double* db) {
    // norm_i = (x_i - mean) * rstd; y_i = norm_i * g_i + b_i
    double sum_dn = 0.0, sum_dn_norm = 0.0;
    for (int i = 0; i < n; ++i) {
        const double norm = (x[i] - mean) * rstd;
        const double dnorm = dy[i] * static_cast<double>(g[i]);
        sum_dn += dnorm;
        sum_dn_norm += dnorm * norm;
        dg[i] += dy[i] * norm;
        db[i] += dy[i];
    }
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        const double norm = (x[i] - mean) * rstd;
        const double dnorm = dy[i] * static_cast<double>(g[i]);
        dx[i] += rstd * (dnorm - inv_n * sum_dn - norm * inv_n * sum_dn_norm);
    }
}

// Forward pass over [B][T+1] packed tokens; fills ws and returns mean loss.
// targets==nullptr computes loss only against tokens[.][1..T].
double forward_pass(const Checkpoint& ckpt, const std::vector<int>& tokens, Workspace& ws) {
    const auto& c = ckpt.config;
    const int B = ws.B, T = ws.T, D = c.d_model, V = c.vocab_size, H = c.n_heads;
    const int dh = c.d_head();
    const int M = c.d_mlp();
    const int R = B * T;
    const auto& lay = ckpt.layout;
    if (T > c.max_context) throw ConfigError("train sequence exceeds max_context");

    const float* w_e = ckpt.at(lay.w_e);
    const float* w_pos = ckpt.at(lay.w_pos);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const int b = r / T, t = r % T;
        const int tok = tokens[static_cast<size_t>(b) * (T + 1) + t];
        const float* e = w_e + static_cast<size_t>(tok) * D;
        const float* p = w_pos + static_cast<size_t>(t) * D;
        double* x = ws.x0.data() + static_cast<size_t>(r) * D;
        for (int i = 0; i < D; ++i) x[i] = static_cast<double>(e[i]) + static_cast<double>(p[i]);
    }

    const double* cur = ws.x0.data();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < c.n_layers; ++l) {
        auto& W = ws.layers[static_cast<size_t>(l)];
        const auto& L = lay.layers[static_cast<size_t>(l)];
        std::copy(cur, cur + static_cast<size_t>(R) * D, W.x_in.begin());

        layer_norm_batch(W.x_in.data(), R, D, ckpt.at(L.ln1_g), ckpt.at(L.ln1_b), W.xn1.data(),
                         W.ln1_mean.data(), W.ln1_rstd.data());
        matmul_f(W.xn1.data(), ckpt.at(L.w_q), nullptr, W.q.data(), R, D, D);
        matmul_f(W.xn1.data(), ckpt.at(L.w_k), nullptr, W.k.data(), R, D, D);
        matmul_f(W.xn1.data(), ckpt.at(L.w_v), nullptr, W.v.data(), R, D, D);

        // causal attention, probabilities kept for backward
#pragma omp parallel for schedule(static) collapse(2)
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                double* att_bh =
                    W.att.data() + ((static_cast<size_t>(b) * H + h) * T) * T;
                for (int t = 0; t < T; ++t) {
                    const double* qrow =
                        W.q.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    double* att_row = att_bh + static_cast<size_t>(t) * T;
                    double maxs = -1e300;
                    for (int j = 0; j <= t; ++j) {
                        const double* krow =
                            W.k.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        double s = 0.0;
                        for (int d = 0; d < dh; ++d) s += qrow[d] * krow[d];
                        s *= inv_sqrt_dh;
                        att_row[j] = s;
                        maxs = std::max(maxs, s);
                    }
                    double denom = 0.0;
                    for (int j = 0; j <= t; ++j) {
                        att_row[j] = std::exp(att_row[j] - maxs);
                        denom += att_row[j];
                    }
                    const double inv_denom = 1.0 / denom;
                    for (int j = 0; j <= t; ++j) att_row[j] *= inv_denom;
                    for (int j = t + 1; j < T; ++j) att_row[j] = 0.0;

                    double* rrow = W.r.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    for (int d = 0; d < dh; ++d) rrow[d] = 0.0;
                    for (int j = 0; j <= t; ++j) {
                        const double a = att_row[j];
                        const double* vrow =
                            W.v.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        for (int d = 0; d < dh; ++d) rrow[d] += a * vrow[d];
                    }
                }
            }
        }

        // attention output + residual, then MLP + residual
        matmul_f(W.r.data(), ckpt.at(L.w_o), ckpt.at(L.b_o), W.x_mid.data(), R, D, D);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < R; ++r) {
            double* xm = W.x_mid.data() + static_cast<size_t>(r) * D;
            const double* xi = W.x_in.data() + static_cast<size_t>(r) * D;
            for (int i = 0; i < D; ++i) xm[i] += xi[i];
        }
        layer_norm_batch(W.x_mid.data(), R, D, ckpt.at(L.ln2_g), ckpt.at(L.ln2_b), W.xn2.data(),
                         W.ln2_mean.data(), W.ln2_rstd.data());
        matmul_f(W.xn2.data(), ckpt.at(L.w_in), nullptr, W.pre.data(), R, D, M);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < R; ++r) {
            const double* pre = W.pre.data() + static_cast<size_t>(r) * M;
            double* h1 = W.h1.data() + static_cast<size_t>(r) * M;
            for (int i = 0; i < M; ++i) h1[i] = gelu(pre[i]);
        }
        double* x_out =
            (l + 1 < c.n_layers) ? ws.layers[static_cast<size_t>(l) + 1].x_in.data()
                                 : ws.x_final.data();
        matmul_f(W.h1.data(), ckpt.at(L.w_out), nullptr, x_out, R, M, D);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < R; ++r) {
            double* xo = x_out + static_cast<size_t>(r) * D;
            const double* xm = W.x_mid.data() + static_cast<size_t>(r) * D;
            for (int i = 0; i < D; ++i) xo[i] += xm[i];
        }
        cur = x_out;
    }

    layer_norm_batch(ws.x_final.data(), R, D, ckpt.at(lay.lnf_g), ckpt.at(lay.lnf_b),
                     ws.fin.data(), ws.lnf_mean.data(), ws.lnf_rstd.data());
    matmul_f(ws.fin.data(), ckpt.at(lay.w_u), nullptr, ws.probs.data(), R, D, V);

    // softmax + cross-entropy (probs overwritten in place). Row losses are
    // summed serially afterwards so the value is independent of threading.
    std::vector<double> row_loss(static_cast<size_t>(R));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const int b = r / T, t = r % T;
        const int target = tokens[static_cast<size_t>(b) * (T + 1) + t + 1];
        double* row = ws.probs.data() + static_cast<size_t>(r) * V;
        double maxv = row[0];
        for (int j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
        double denom = 0.0;
        for (int j = 0; j < V; ++j) {
            row[j] = std::exp(row[j] - maxv);
            denom += row[j];
        }
        const double inv_denom = 1.0 / denom;
        for (int j = 0; j < V; ++j) row[j] *= inv_denom;
        row_loss[static_cast<size_t>(r)] = -std::log(std::max(row[target], 1e-300));
    }
    double loss = 0.0;
    for (int r = 0; r < R; ++r) loss += row_loss[static_cast<size_t>(r)];
    return loss / R;
}

void backward_pass(const Checkpoint& ckpt, const std::vector<int>& tokens, Workspace& ws,
                   GradBuffer& grads) {
    const auto& c = ckpt.config;
    const int B = ws.B, T = ws.T, D = c.d_model, V = c.vocab_size, H = c.n_heads;
    const int dh = c.d_head();
    const int M = c.d_mlp();
    const int R = B * T;
    const auto& lay = ckpt.layout;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // reusable upstream-gradient buffers
    std::vector<double> dlogits(static_cast<size_t>(R) * V);
    std::vector<double> dfin(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dx(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dx_mid(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dxn(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dq(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dk(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dv(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dr(static_cast<size_t>(R) * D, 0.0);
    std::vector<double> dh1(static_cast<size_t>(R) * M, 0.0);
    std::vector<double> dpre(static_cast<size_t>(R) * M, 0.0);

    // dlogits = (softmax - onehot) / R
    const double inv_r = 1.0 / R;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const int b = r / T, t = r % T;
        const int target = tokens[static_cast<size_t>(b) * (T + 1) + t + 1];
        const double* p = ws.probs.data() + static_cast<size_t>(r) * V;
        double* dl = dlogits.data() + static_cast<size_t>(r) * V;
        for (int j = 0; j < V; ++j) dl[j] = p[j] * inv_r;
        dl[target] -= inv_r;
    }

    // unembedding
    matmul_at_b_accum(ws.fin.data(), dlogits.data(), grads.data() + lay.w_u, R, D, V);
    matmul_f_bt(dlogits.data(), ckpt.at(lay.w_u), dfin.data(), R, V, D);

    // final norm
    {
        std::vector<double> dg(static_cast<size_t>(D), 0.0), db(static_cast<size_t>(D), 0.0);
        for (int r = 0; r < R; ++r) {
            layer_norm_backward_row(ws.x_final.data() + static_cast<size_t>(r) * D,
                                    dfin.data() + static_cast<size_t>(r) * D, D,
                                    ckpt.at(lay.lnf_g), ws.lnf_mean[static_cast<size_t>(r)],
                                    ws.lnf_rstd[static_cast<size_t>(r)],
                                    dx.data() + static_cast<size_t>(r) * D, dg.data(), db.data());
        }
        for (int i = 0; i < D; ++i) {
            grads[lay.lnf_g + static_cast<size_t>(i)] += dg[static_cast<size_t>(i)];
            grads[lay.lnf_b + static_cast<size_t>(i)] += db[static_cast<size_t>(i)];
        }
    }

    for (int l = c.n_layers - 1; l >= 0; --l) {
        auto& W = ws.layers[static_cast<size_t>(l)];
        const auto& L = lay.layers[static_cast<size_t>(l)];

        // dx holds d(x_out). x_out = x_mid + h1 * w_out
        matmul_at_b_accum(ws.layers[static_cast<size_t>(l)].h1.data(), dx.data(),
                          grads.data() + L.w_out, R, M, D);
        matmul_f_bt(dx.data(), ckpt.at(L.w_out), dh1.data(), R, D, M);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < R; ++r) {
            const double* pre = W.pre.data() + static_cast<size_t>(r) * M;
            const double* d1 = dh1.data() + static_cast<size_t>(r) * M;
            double* dp = dpre.data() + static_cast<size_t>(r) * M;
            for (int i = 0; i < M; ++i) dp[i] = d1[i] * gelu_grad(pre[i]);
        }
        matmul_at_b_accum(W.xn2.data(), dpre.data(), grads.data() + L.w_in, R, D, M);
        std::fill(dxn.begin(), dxn.end(), 0.0);
        matmul_f_bt(dpre.data(), ckpt.at(L.w_in), dxn.data(), R, M, D);

        // through LN2 into x_mid; plus the residual path d(x_out) itself
        std::copy(dx.begin(), dx.end(), dx_mid.begin());
        {
            std::vector<double> dg(static_cast<size_t>(D), 0.0), db(static_cast<size_t>(D), 0.0);
            for (int r = 0; r < R; ++r) {
                layer_norm_backward_row(W.x_mid.data() + static_cast<size_t>(r) * D,
                                        dxn.data() + static_cast<size_t>(r) * D, D,
                                        ckpt.at(L.ln2_g), W.ln2_mean[static_cast<size_t>(r)],
                                        W.ln2_rstd[static_cast<size_t>(r)],
                                        dx_mid.data() + static_cast<size_t>(r) * D, dg.data(),
                                        db.data());
            }
            for (int i = 0; i < D; ++i) {
                grads[L.ln2_g + static_cast<size_t>(i)] += dg[static_cast<size_t>(i)];
                grads[L.ln2_b + static_cast<size_t>(i)] += db[static_cast<size_t>(i)];
            }
        }

        // x_mid = x_in + r * w_o + b_o
        matmul_at_b_accum(W.r.data(), dx_mid.data(), grads.data() + L.w_o, R, D, D);
        {
            double* gbo = grads.data() + L.b_o;
            for (int r = 0; r < R; ++r) {
                const double* d = dx_mid.data() + static_cast<size_t>(r) * D;
                for (int i = 0; i < D; ++i) gbo[i] += d[i];
            }
        }
        std::fill(dr.begin(), dr.end(), 0.0);
        matmul_f_bt(dx_mid.data(), ckpt.at(L.w_o), dr.data(), R, D, D);

        // attention backward
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
#pragma omp parallel for schedule(static) collapse(2)
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const double* att_bh =
                    W.att.data() + ((static_cast<size_t>(b) * H + h) * T) * T;
                std::vector<double> datt(static_cast<size_t>(T));
                for (int t = 0; t < T; ++t) {
                    const double* att_row = att_bh + static_cast<size_t>(t) * T;
                    const double* drrow =
                        dr.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    // datt_j = dr . v_j ; dv_j += att_j * dr
                    for (int j = 0; j <= t; ++j) {
                        const double* vrow =
                            W.v.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        double* dvrow =
                            dv.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        double acc = 0.0;
                        const double a = att_row[j];
                        for (int d = 0; d < dh; ++d) {
                            acc += drrow[d] * vrow[d];
                            dvrow[d] += a * drrow[d];
                        }
                        datt[static_cast<size_t>(j)] = acc;
                    }
                    // softmax backward: ds_j = a_j (datt_j - sum_k a_k datt_k)
                    double dot = 0.0;
                    for (int j = 0; j <= t; ++j) dot += att_row[j] * datt[static_cast<size_t>(j)];
                    const double* qrow =
                        W.q.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    double* dqrow = dq.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    for (int j = 0; j <= t; ++j) {
                        const double ds =
                            att_row[j] * (datt[static_cast<size_t>(j)] - dot) * inv_sqrt_dh;
                        const double* krow =
                            W.k.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        double* dkrow =
                            dk.data() + (static_cast<size_t>(b) * T + j) * D + h * dh;
                        for (int d = 0; d < dh; ++d) {
                            dqrow[d] += ds * krow[d];
                            dkrow[d] += ds * qrow[d];
                        }
                    }
                }
            }
        }

        // q/k/v projections
        matmul_at_b_accum(W.xn1.data(), dq.data(), grads.data() + L.w_q, R, D, D);
        matmul_at_b_accum(W.xn1.data(), dk.data(), grads.data() + L.w_k, R, D, D);
        matmul_at_b_accum(W.xn1.data(), dv.data(), grads.data() + L.w_v, R, D, D);
        std::fill(dxn.begin(), dxn.end(), 0.0);
        matmul_f_bt(dq.data(), ckpt.at(L.w_q), dxn.data(), R, D, D);
        // accumulate the k and v paths into the same dxn buffer
        {
            std::vector<double> tmp(static_cast<size_t>(R) * D, 0.0);
            matmul_f_bt(dk.data(), ckpt.at(L.w_k), tmp.data(), R, D, D);
            for (size_t i = 0; i < dxn.size(); ++i) dxn[i] += tmp[i];
            std::fill(tmp.begin(), tmp.end(), 0.0);
            matmul_f_bt(dv.data(), ckpt.at(L.w_v), tmp.data(), R, D, D);
            for (size_t i = 0; i < dxn.size(); ++i) dxn[i] += tmp[i];
        }

        // through LN1 into x_in; plus the residual path d(x_mid)
        std::copy(dx_mid.begin(), dx_mid.end(), dx.begin());
        {
            std::vector<double> dg(static_cast<size_t>(D), 0.0), db(static_cast<size_t>(D), 0.0);
            for (int r = 0; r < R; ++r) {
                layer_norm_backward_row(W.x_in.data() + static_cast<size_t>(r) * D,
                                        dxn.data() + static_cast<size_t>(r) * D, D,
                                        ckpt.at(L.ln1_g), W.ln1_mean[static_cast<size_t>(r)],
                                        W.ln1_rstd[static_cast<size_t>(r)],
                                        dx.data() + static_cast<size_t>(r) * D, dg.data(),
                                        db.data());
            }
            for (int i = 0; i < D; ++i) {
                grads[L.ln1_g + static_cast<size_t>(i)] += dg[static_cast<size_t>(i)];
                grads[L.ln1_b + static_cast<size_t>(i)] += db[static_cast<size_t>(i)];
            }
        }
    }

    // embeddings
    for (int r = 0; r < R; ++r) {
        const int b = r / T, t = r % T;
        const int tok = tokens[static_cast<size_t>(b) * (T + 1) + t];
        const double* d = dx.data() + static_cast<size_t>(r) * D;
        double* ge = grads.data() + lay.w_e + static_cast<size_t>(tok) * D;
        double* gp = grads.data() + lay.w_pos + static_cast<size_t>(t) * D;
        for (int i = 0; i < D; ++i) {
            ge[i] += d[i];
            gp[i] += d[i];
        }
    }
}

} // namespace

double compute_loss(const Checkpoint& ckpt, const std::vector<int>& tokens, int batch,
                    int seq_len) {
    if (batch < 1 || seq_len < 1) throw ConfigError("compute_loss: empty batch");
    if (tokens.size() != static_cast<size_t>(batch) * (seq_len + 1))
        throw ConfigError("compute_loss: tokens must be batch x (seq_len + 1)");
    Workspace ws;
    ws.init(ckpt.config, batch, seq_len);
    return forward_pass(ckpt, tokens, ws);
}

double compute_grads(const Checkpoint& ckpt, const std::vector<int>& tokens, int batch,
                     int seq_len, GradBuffer& grads) {
    if (tokens.size() != static_cast<size_t>(batch) * (seq_len + 1))
        throw ConfigError("compute_grads: tokens must be batch x (seq_len + 1)");
    grads.assign(ckpt.params.size(), 0.0);
    Workspace ws;
    ws.init(ckpt.config, batch, seq_len);
    const double loss = forward_pass(ckpt, tokens, ws);
    backward_pass(ckpt, tokens, ws, grads);
    return loss;
}

double train_step(Checkpoint& ckpt, AdamState& adam, const std::vector<int>& tokens, int batch,
                  int seq_len, const TrainConfig& hyper) {
    GradBuffer grads;
    const double loss = compute_grads(ckpt, tokens, batch, seq_len, grads);
    if (!std::isfinite(loss))
        throw RuntimeFailure("training loss is not finite at adam step " +
                             std::to_string(adam.t));

    // global-norm clip
    if (hyper.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (double g : grads) norm2 += g * g;
        const double norm = std::sqrt(norm2);
        if (norm > hyper.grad_clip) {
            const double s = hyper.grad_clip / norm;
            for (double& g : grads) g *= s;
        }
    }

    const long long t = ++adam.t;
    double lr = hyper.lr;
    if (hyper.warmup_steps > 0 && t <= hyper.warmup_steps)
        lr = hyper.lr * static_cast<double>(t) / hyper.warmup_steps;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));

#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(ckpt.params.size()); ++i) {
        const double g = grads[static_cast<size_t>(i)];
        double& m = adam.m[static_cast<size_t>(i)];
        double& v = adam.v[static_cast<size_t>(i)];
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        ckpt.params[static_cast<size_t>(i)] -= static_cast<float>(
            lr * mhat / (std::sqrt(vhat) + hyper.adam_eps));
    }
    return loss;
}

double closed_book_recall(const Checkpoint& ckpt, const std::vector<ProbeItem>& probes,
                          int only_bin) {
    std::vector<const ProbeItem*> sel;
    for (const auto& p : probes) {
        if (only_bin < 0 || p.bin == only_bin) sel.push_back(&p);
    }
    if (sel.empty()) return 0.0;
    std::vector<std::vector<int>> stems;
    stems.reserve(sel.size());
    for (const auto* p : sel) stems.push_back(p->stem);
    const auto outs = greedy_decode_batch(ckpt, stems, /*max_new=*/1);
    long long hit = 0;
    for (size_t i = 0; i < sel.size(); ++i) {
        if (!outs[i].empty() && outs[i].front() == sel[i]->target) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(sel.size());
}

TrainResult train(const DocumentSet& corpus, const Vocabulary& vocab, const ModelConfig& config,
                  const TrainConfig& tc, const std::vector<ProbeItem>& probes) {
    config.validate();
    if (corpus.docs.empty()) throw ConfigError("train: empty corpus");
    if (tc.seq_len > config.max_context)
        throw ConfigError("train: seq_len exceeds max_context");

    TrainResult result;
    result.ckpt = Checkpoint::random_init(config, tc.seed);
    AdamState adam = AdamState::init(result.ckpt);
    Checkpoint last_good = result.ckpt;

    Rng order_rng(derive_seed(tc.seed, /*stage_tag=*/0x747261696eull)); // "train"
    std::vector<int> doc_order(corpus.docs.size());
    for (size_t i = 0; i < doc_order.size(); ++i) doc_order[i] = static_cast<int>(i);

    const int need = tc.batch_size * (tc.seq_len + 1);
    std::vector<int> stream;
    stream.reserve(static_cast<size_t>(need) * 2);
    size_t doc_cursor = corpus.docs.size(); // trigger shuffle on first fill
    const int eot = vocab.eot_id();

    auto fill_stream = [&](size_t upto) {
        while (stream.size() < upto) {
            if (doc_cursor >= doc_order.size()) {
                order_rng.shuffle(doc_order);
                doc_cursor = 0;
            }
            const auto& doc = corpus.docs[static_cast<size_t>(doc_order[doc_cursor++])];
            stream.push_back(eot);
            stream.insert(stream.end(), doc.tokens.begin(), doc.tokens.end());
        }
    };

    std::vector<int> batch_tokens(static_cast<size_t>(need));
    double loss = 0.0;

    for (int step = 0; step < tc.max_steps; ++step) {
        // batch rows are consecutive windows of the packed stream
        fill_stream(static_cast<size_t>(need));
        std::copy(stream.begin(), stream.begin() + need, batch_tokens.begin());
        stream.erase(stream.begin(), stream.begin() + need);

        try {
            loss = train_step(result.ckpt, adam, batch_tokens, tc.batch_size, tc.seq_len, tc);
        } catch (const RuntimeFailure&) {
            result.diverged = true;
            result.ckpt = last_good;
            break;
        }
        result.steps_run = step + 1;

        double recall = -1.0;
        const bool probe_now = tc.probe_interval > 0 && !probes.empty() &&
                               ((step + 1) % tc.probe_interval == 0 || step + 1 == tc.max_steps);
        if (probe_now) {
            // parameter overflow counts as divergence; keep the last finite state
            bool finite = true;
            for (float p : result.ckpt.params) {
                if (!std::isfinite(p)) {
                    finite = false;
                    break;
                }
            }
            if (!finite) {
                result.diverged = true;
                result.ckpt = last_good;
                break;
            }
            recall = closed_book_recall(result.ckpt, probes, tc.probe_bin);
            last_good = result.ckpt;
        }
        if (tc.log_interval > 0 && ((step + 1) % tc.log_interval == 0 || step == 0)) {
            result.log.push_back({step + 1, loss, recall});
        } else if (probe_now) {
            result.log.push_back({step + 1, loss, recall});
        }
        if (probe_now && tc.probe_target > 0.0 && recall >= tc.probe_target &&
            step + 1 >= tc.min_steps) {
            result.early_stopped = true;
            break;
        }
    }
    result.final_loss = loss;
    return result;
}

} // namespace factlab
