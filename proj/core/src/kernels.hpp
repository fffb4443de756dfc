#pragma once

// Internal numeric kernels shared by the inference and training paths.
// Row-major everywhere; parameters float32, activations double. Every output
// element is produced by exactly one fixed-order reduction, so results do not
// depend on the OpenMP thread count.

#include <cmath>
#include <cstddef>

namespace factlab::detail {

constexpr double kLnEps = 1e-5;

// y = LN(x) * g + b over one row of n entries; optionally saves mean/rstd.
inline void layer_norm_row(const double* x, int n, const float* g, const float* b, double* y,
                           double* save_mean = nullptr, double* save_rstd = nullptr) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < n; ++i) {
        y[i] = (x[i] - mean) * rstd * static_cast<double>(g[i]) + static_cast<double>(b[i]);
    }
    if (save_mean) *save_mean = mean;
    if (save_rstd) *save_rstd = rstd;
}

inline double gelu(double x) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double x3 = x * x * x;
    const double u = c * (x + 0.044715 * x3);
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x);
}

// C (M x N) = A (M x K, double) * W (K x N, float) [+ bias]
inline void matmul_f(const double* A, const float* W, const float* bias, double* C, int M, int K,
                     int N) {
#pragma omp parallel for schedule(static) if (M > 1)
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        if (bias) {
            for (int j = 0; j < N; ++j) c[j] = static_cast<double>(bias[j]);
        } else {
            for (int j = 0; j < N; ++j) c[j] = 0.0;
        }
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            const float* w = W + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * static_cast<double>(w[j]);
        }
    }
}

// C (M x K) = A (M x N, double) * W^T where W is (K x N, float): row-row dots.
inline void matmul_f_bt(const double* A, const float* W, double* C, int M, int N, int K) {
#pragma omp parallel for schedule(static) if (M > 1)
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * N;
        double* c = C + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const float* w = W + static_cast<size_t>(k) * N;
            double acc = 0.0;
            for (int j = 0; j < N; ++j) acc += a[j] * static_cast<double>(w[j]);
            c[k] = acc;
        }
    }
}

// G (K x N) += A^T (K x M) * B (M x N): weight-gradient accumulation.
inline void matmul_at_b_accum(const double* A, const double* B, double* G, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (K > 1)
    for (int k = 0; k < K; ++k) {
        double* g = G + static_cast<size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const double av = A[static_cast<size_t>(m) * K + k];
            if (av == 0.0) continue;
            const double* b = B + static_cast<size_t>(m) * N;
            for (int j = 0; j < N; ++j) g[j] += av * b[j];
        }
    }
}

} // namespace factlab::detail
