#pragma once

#include <string>
#include <utility>
#include <vector>

#include "factlab/model.hpp"
#include "factlab/vocab.hpp"

namespace factlab {

// Thin SVD of one head's OV matrix: OV = U diag(S) V^T with S nonincreasing,
// orthonormal columns, and a deterministic sign convention (each right
// vector's largest-magnitude entry is positive).
struct OVDecomposition {
    int layer = -1, head = -1;
    int m = 0, n = 0, rank = 0;
    std::vector<double> s; // [rank]
    std::vector<double> u; // [m][rank], row-major
    std::vector<double> v; // [n][rank], row-major

    const double* right_vector_entry_base() const { return v.data(); }
    double right(int row, int vec) const { return v[static_cast<size_t>(row) * rank + vec]; }
    double left(int row, int vec) const { return u[static_cast<size_t>(row) * rank + vec]; }
};

// W_V^h composed with W_O^h: the d_model x d_model linear map (rank <=
// d_head) describing what attending to a token writes into the residual
// stream.
std::vector<double> ov_matrix(const Checkpoint& ckpt, int layer, int head);

// Thin SVD of an m x n matrix truncated to the given rank, computed by
// one-sided Jacobi. Throws RuntimeFailure with condition diagnostics if the
// rotation sweeps fail to converge.
OVDecomposition svd_ov(const std::vector<double>& matrix, int m, int n, int rank);

// SVD of a head's OV matrix via its low-rank factors (QR of both sides plus a
// d_head x d_head core SVD); mathematically identical to svd_ov of the full
// product but cheaper and better conditioned.
OVDecomposition decompose_head(const Checkpoint& ckpt, int layer, int head);

// Top-k vocabulary decoding of singular vectors. Right vectors project
// through the unembedding (output side); with input_side, left vectors
// project through the token embedding instead.
struct DecodedVector {
    int index = 0;
    double singular_value = 0.0;
    std::vector<std::pair<int, double>> top; // (token id, score), descending
};

std::vector<DecodedVector> decode_singular_vectors(const OVDecomposition& dec,
                                                   const Checkpoint& ckpt, int k = 10,
                                                   int n_vectors = 5, bool input_side = false);

// Fraction of decoded top-k tokens that are world-entity tokens, per vector
// plus the head aggregate.
struct ClusterReport {
    std::vector<double> share_per_vector;
    double aggregate = 0.0;
};

ClusterReport cluster_report(const std::vector<DecodedVector>& decoded,
                             const std::vector<int>& entity_token_ids);

// One row per singular vector, top-k tokens quoted.
std::string decoded_to_tsv(const std::vector<DecodedVector>& decoded, const Vocabulary& vocab,
                           int layer, int head);

} // namespace factlab
