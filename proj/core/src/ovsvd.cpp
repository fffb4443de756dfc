#include "factlab/ovsvd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factlab/common.hpp"

namespace factlab {

namespace {

// Modified Gram-Schmidt QR of a (m x r) -> q (m x r, orthonormal columns
// where possible) and rr (r x r upper). Rank-deficient columns become zero in
// q with a zero diagonal in rr.
void mgs_qr(const std::vector<double>& a, int m, int r, std::vector<double>& q,
            std::vector<double>& rr) {
    q = a;
    rr.assign(static_cast<size_t>(r) * r, 0.0);
    for (int j = 0; j < r; ++j) {
        for (int i = 0; i < j; ++i) {
            double dot = 0.0;
            for (int x = 0; x < m; ++x)
                dot += q[static_cast<size_t>(x) * r + i] * q[static_cast<size_t>(x) * r + j];
            rr[static_cast<size_t>(i) * r + j] = dot;
            for (int x = 0; x < m; ++x)
                q[static_cast<size_t>(x) * r + j] -= dot * q[static_cast<size_t>(x) * r + i];
        }
        double norm = 0.0;
        for (int x = 0; x < m; ++x) {
            const double v = q[static_cast<size_t>(x) * r + j];
            norm += v * v;
        }
        norm = std::sqrt(norm);
        rr[static_cast<size_t>(j) * r + j] = norm;
        if (norm > 0.0) {
            const double inv = 1.0 / norm;
            for (int x = 0; x < m; ++x) q[static_cast<size_t>(x) * r + j] *= inv;
        }
    }
}

// One-sided Jacobi SVD of a (m x n), m >= 1: returns U (m x n columns of unit
// left vectors), S (n), V (n x n). Work is in-place on a copy of a.
void jacobi_svd(std::vector<double> a, int m, int n, std::vector<double>& u,
                std::vector<double>& s, std::vector<double>& v) {
    v.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

    const double eps = 1e-14;
    const int max_sweeps = 60;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int x = 0; x < m; ++x) {
                    const double ap = a[static_cast<size_t>(x) * n + p];
                    const double aq = a[static_cast<size_t>(x) * n + q];
                    app += ap * ap;
                    aqq += aq * aq;
                    apq += ap * aq;
                }
                if (std::fabs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (int x = 0; x < m; ++x) {
                    const double ap = a[static_cast<size_t>(x) * n + p];
                    const double aq = a[static_cast<size_t>(x) * n + q];
                    a[static_cast<size_t>(x) * n + p] = c * ap - sn * aq;
                    a[static_cast<size_t>(x) * n + q] = sn * ap + c * aq;
                }
                for (int x = 0; x < n; ++x) {
                    const double vp = v[static_cast<size_t>(x) * n + p];
                    const double vq = v[static_cast<size_t>(x) * n + q];
                    v[static_cast<size_t>(x) * n + p] = c * vp - sn * vq;
                    v[static_cast<size_t>(x) * n + q] = sn * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        double fro = 0.0;
        for (double x : a) fro += x * x;
        throw RuntimeFailure("jacobi_svd did not converge in 60 sweeps (frobenius " +
                             fmt_g(std::sqrt(fro)) + ", size " + std::to_string(m) + "x" +
                             std::to_string(n) + ")");
    }

    s.assign(static_cast<size_t>(n), 0.0);
    u.assign(static_cast<size_t>(m) * n, 0.0);
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int x = 0; x < m; ++x) {
            const double val = a[static_cast<size_t>(x) * n + j];
            norm += val * val;
        }
        norm = std::sqrt(norm);
        s[static_cast<size_t>(j)] = norm;
        if (norm > 0.0) {
            const double inv = 1.0 / norm;
            for (int x = 0; x < m; ++x)
                u[static_cast<size_t>(x) * n + j] = a[static_cast<size_t>(x) * n + j] * inv;
        }
    }
}

// Deterministically extend zero columns of u (m x r) to an orthonormal set.
void complete_orthonormal(std::vector<double>& u, int m, int r,
                          const std::vector<double>& s) {
    for (int j = 0; j < r; ++j) {
        if (s[static_cast<size_t>(j)] > 0.0) continue;
        for (int cand = 0; cand < m; ++cand) {
            std::vector<double> col(static_cast<size_t>(m), 0.0);
            col[static_cast<size_t>(cand)] = 1.0;
            for (int i = 0; i < r; ++i) {
                if (i == j) continue;
                if (i > j && s[static_cast<size_t>(i)] <= 0.0) continue; // not yet filled
                double dot = 0.0;
                for (int x = 0; x < m; ++x)
                    dot += col[static_cast<size_t>(x)] * u[static_cast<size_t>(x) * r + i];
                for (int x = 0; x < m; ++x)
                    col[static_cast<size_t>(x)] -= dot * u[static_cast<size_t>(x) * r + i];
            }
            double norm = 0.0;
            for (double x : col) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                const double inv = 1.0 / norm;
                for (int x = 0; x < m; ++x)
                    u[static_cast<size_t>(x) * r + j] = col[static_cast<size_t>(x)] * inv;
                break;
            }
        }
    }
}

// Shared ordering + sign convention.
void finalize(OVDecomposition& dec) {
    const int r = dec.rank;
    std::vector<int> order(static_cast<size_t>(r));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dec.s[static_cast<size_t>(a)] > dec.s[static_cast<size_t>(b)];
    });

    OVDecomposition out = dec;
    for (int j = 0; j < r; ++j) {
        const int src = order[static_cast<size_t>(j)];
        out.s[static_cast<size_t>(j)] = dec.s[static_cast<size_t>(src)];
        for (int x = 0; x < dec.m; ++x)
            out.u[static_cast<size_t>(x) * r + j] = dec.u[static_cast<size_t>(x) * r + src];
        for (int x = 0; x < dec.n; ++x)
            out.v[static_cast<size_t>(x) * r + j] = dec.v[static_cast<size_t>(x) * r + src];
    }
    // sign: largest-|entry| of each right vector made positive
    for (int j = 0; j < r; ++j) {
        int arg = 0;
        double best = -1.0;
        for (int x = 0; x < out.n; ++x) {
            const double mag = std::fabs(out.v[static_cast<size_t>(x) * r + j]);
            if (mag > best) {
                best = mag;
                arg = x;
            }
        }
        if (out.v[static_cast<size_t>(arg) * r + j] < 0.0) {
            for (int x = 0; x < out.n; ++x) out.v[static_cast<size_t>(x) * r + j] *= -1.0;
            for (int x = 0; x < out.m; ++x) out.u[static_cast<size_t>(x) * r + j] *= -1.0;
        }
    }
    dec = std::move(out);
}

} // namespace

std::vector<double> ov_matrix(const Checkpoint& ckpt, int layer, int head) {
    const auto& c = ckpt.config;
    if (layer < 0 || layer >= c.n_layers || head < 0 || head >= c.n_heads)
        throw ConfigError("ov_matrix: layer/head out of range");
    const int D = c.d_model;
    const int dh = c.d_head();
    const float* w_v = ckpt.at(ckpt.layout.layers[static_cast<size_t>(layer)].w_v);
    const float* w_o_h = ckpt.w_o_head(layer, head);

    std::vector<double> ov(static_cast<size_t>(D) * D, 0.0);
    for (int i = 0; i < D; ++i) {
        for (int d = 0; d < dh; ++d) {
            const double a = static_cast<double>(w_v[static_cast<size_t>(i) * D + head * dh + d]);
            if (a == 0.0) continue;
            const float* brow = w_o_h + static_cast<size_t>(d) * D;
            for (int j = 0; j < D; ++j)
                ov[static_cast<size_t>(i) * D + j] += a * static_cast<double>(brow[j]);
        }
    }
    return ov;
}

OVDecomposition svd_ov(const std::vector<double>& matrix, int m, int n, int rank) {
    if (m < 1 || n < 1 || rank < 1 || rank > std::min(m, n))
        throw ConfigError("svd_ov: bad dimensions");
    if (matrix.size() != static_cast<size_t>(m) * n)
        throw ConfigError("svd_ov: matrix size does not match dimensions");
    for (double x : matrix) {
        if (!std::isfinite(x)) throw ConfigError("svd_ov: matrix has non-finite entries");
    }

    std::vector<double> u_full, s_full, v_full;
    jacobi_svd(matrix, m, n, u_full, s_full, v_full);

    // order columns before truncation
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return s_full[static_cast<size_t>(a)] > s_full[static_cast<size_t>(b)];
    });

    OVDecomposition dec;
    dec.m = m;
    dec.n = n;
    dec.rank = rank;
    dec.s.resize(static_cast<size_t>(rank));
    dec.u.assign(static_cast<size_t>(m) * rank, 0.0);
    dec.v.assign(static_cast<size_t>(n) * rank, 0.0);
    for (int j = 0; j < rank; ++j) {
        const int src = order[static_cast<size_t>(j)];
        dec.s[static_cast<size_t>(j)] = s_full[static_cast<size_t>(src)];
        for (int x = 0; x < m; ++x)
            dec.u[static_cast<size_t>(x) * rank + j] = u_full[static_cast<size_t>(x) * n + src];
        for (int x = 0; x < n; ++x)
            dec.v[static_cast<size_t>(x) * rank + j] = v_full[static_cast<size_t>(x) * n + src];
    }
    complete_orthonormal(dec.u, m, rank, dec.s);
    finalize(dec);
    return dec;
}

OVDecomposition decompose_head(const Checkpoint& ckpt, int layer, int head) {
    const auto& c = ckpt.config;
    if (layer < 0 || layer >= c.n_layers || head < 0 || head >= c.n_heads)
        throw ConfigError("decompose_head: layer/head out of range");
    const int D = c.d_model;
    const int dh = c.d_head();

    // factors: A = W_V^h (D x dh), B = W_O^h (dh x D)
    std::vector<double> a(static_cast<size_t>(D) * dh), bt(static_cast<size_t>(D) * dh);
    const float* w_v = ckpt.at(ckpt.layout.layers[static_cast<size_t>(layer)].w_v);
    const float* w_o_h = ckpt.w_o_head(layer, head);
    for (int i = 0; i < D; ++i)
        for (int d = 0; d < dh; ++d)
            a[static_cast<size_t>(i) * dh + d] =
                static_cast<double>(w_v[static_cast<size_t>(i) * D + head * dh + d]);
    for (int d = 0; d < dh; ++d)
        for (int j = 0; j < D; ++j)
            bt[static_cast<size_t>(j) * dh + d] = static_cast<double>(w_o_h[static_cast<size_t>(d) * D + j]);

    std::vector<double> qa, ra, qb, rb;
    mgs_qr(a, D, dh, qa, ra);
    mgs_qr(bt, D, dh, qb, rb);

    // core = R_A * R_B^T (dh x dh); OV = Q_A core Q_B^T
    std::vector<double> core(static_cast<size_t>(dh) * dh, 0.0);
    for (int i = 0; i < dh; ++i)
        for (int j = 0; j < dh; ++j) {
            double acc = 0.0;
            for (int k = 0; k < dh; ++k)
                acc += ra[static_cast<size_t>(i) * dh + k] * rb[static_cast<size_t>(j) * dh + k];
            core[static_cast<size_t>(i) * dh + j] = acc;
        }

    std::vector<double> uc, sc, vc;
    jacobi_svd(core, dh, dh, uc, sc, vc);

    OVDecomposition dec;
    dec.layer = layer;
    dec.head = head;
    dec.m = D;
    dec.n = D;
    dec.rank = dh;
    dec.s = sc;
    dec.u.assign(static_cast<size_t>(D) * dh, 0.0);
    dec.v.assign(static_cast<size_t>(D) * dh, 0.0);
    for (int x = 0; x < D; ++x) {
        for (int j = 0; j < dh; ++j) {
            double au = 0.0, av = 0.0;
            for (int k = 0; k < dh; ++k) {
                au += qa[static_cast<size_t>(x) * dh + k] * uc[static_cast<size_t>(k) * dh + j];
                av += qb[static_cast<size_t>(x) * dh + k] * vc[static_cast<size_t>(k) * dh + j];
            }
            dec.u[static_cast<size_t>(x) * dh + j] = au;
            dec.v[static_cast<size_t>(x) * dh + j] = av;
        }
    }
    complete_orthonormal(dec.u, D, dh, dec.s);
    // Q_B columns can also vanish when W_O^h rows are rank deficient.
    {
        std::vector<double> vnorm(static_cast<size_t>(dh), 0.0);
        for (int j = 0; j < dh; ++j) {
            double norm = 0.0;
            for (int x = 0; x < D; ++x) {
                const double val = dec.v[static_cast<size_t>(x) * dh + j];
                norm += val * val;
            }
            vnorm[static_cast<size_t>(j)] = std::sqrt(norm);
        }
        complete_orthonormal(dec.v, D, dh, vnorm);
    }
    finalize(dec);
    return dec;
}

std::vector<DecodedVector> decode_singular_vectors(const OVDecomposition& dec,
                                                   const Checkpoint& ckpt, int k, int n_vectors,
                                                   bool input_side) {
    const auto& c = ckpt.config;
    const int V = c.vocab_size;
    const int D = c.d_model;
    if (k < 1 || k > V) throw ConfigError("decode_singular_vectors: k must be in [1, vocab]");
    if (dec.n != D || dec.m != D)
        throw ConfigError("decode_singular_vectors: decomposition does not match the model");
    n_vectors = std::min(n_vectors, dec.rank);

    std::vector<DecodedVector> out;
    out.reserve(static_cast<size_t>(n_vectors));
    std::vector<double> scores(static_cast<size_t>(V));
    for (int i = 0; i < n_vectors; ++i) {
        DecodedVector d;
        d.index = i;
        d.singular_value = dec.s[static_cast<size_t>(i)];
        if (!input_side) {
            // right vector through the unembedding: scores = v . W_U
            const float* w_u = ckpt.at(ckpt.layout.w_u);
            for (int t = 0; t < V; ++t) scores[static_cast<size_t>(t)] = 0.0;
            for (int j = 0; j < D; ++j) {
                const double vj = dec.right(j, i);
                if (vj == 0.0) continue;
                const float* row = w_u + static_cast<size_t>(j) * V;
                for (int t = 0; t < V; ++t)
                    scores[static_cast<size_t>(t)] += vj * static_cast<double>(row[t]);
            }
        } else {
            // left vector against the token embeddings: scores_t = W_E[t] . u
            const float* w_e = ckpt.at(ckpt.layout.w_e);
            for (int t = 0; t < V; ++t) {
                const float* row = w_e + static_cast<size_t>(t) * D;
                double acc = 0.0;
                for (int j = 0; j < D; ++j) acc += static_cast<double>(row[j]) * dec.left(j, i);
                scores[static_cast<size_t>(t)] = acc;
            }
        }
        std::vector<int> ids(static_cast<size_t>(V));
        std::iota(ids.begin(), ids.end(), 0);
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
            if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
                return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
            return a < b;
        });
        for (int j = 0; j < k; ++j)
            d.top.emplace_back(ids[static_cast<size_t>(j)],
                               scores[static_cast<size_t>(ids[static_cast<size_t>(j)])]);
        out.push_back(std::move(d));
    }
    return out;
}

ClusterReport cluster_report(const std::vector<DecodedVector>& decoded,
                             const std::vector<int>& entity_token_ids) {
    std::vector<char> is_entity;
    for (int id : entity_token_ids) {
        if (id >= static_cast<int>(is_entity.size()))
            is_entity.resize(static_cast<size_t>(id) + 1, 0);
        is_entity[static_cast<size_t>(id)] = 1;
    }
    ClusterReport report;
    double total = 0.0;
    for (const auto& d : decoded) {
        long long hits = 0;
        for (const auto& [tok, score] : d.top) {
            (void)score;
            if (tok >= 0 && tok < static_cast<int>(is_entity.size()) &&
                is_entity[static_cast<size_t>(tok)])
                ++hits;
        }
        const double share = d.top.empty() ? 0.0 : static_cast<double>(hits) / d.top.size();
        report.share_per_vector.push_back(share);
        total += share;
    }
    report.aggregate =
        decoded.empty() ? 0.0 : total / static_cast<double>(report.share_per_vector.size());
    return report;
}

std::string decoded_to_tsv(const std::vector<DecodedVector>& decoded, const Vocabulary& vocab,
                           int layer, int head) {
    std::string out = "# schema: factlab.svdtokens.v1\tlayer=" + std::to_string(layer) +
                      "\thead=" + std::to_string(head) + "\n";
    out += "vector\tsingular_value\ttop_tokens\n";
    for (const auto& d : decoded) {
        out += std::to_string(d.index) + '\t' + fmt_g(d.singular_value) + '\t';
        for (size_t i = 0; i < d.top.size(); ++i) {
            if (i) out += ", ";
            out += "'" + vocab.token(d.top[i].first) + "'";
        }
        out += '\n';
    }
    return out;
}

} // namespace factlab
