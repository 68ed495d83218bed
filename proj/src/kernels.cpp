#include "prefixmt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prefixmt::kernels {

namespace {

std::atomic<bool> g_parallel{
#ifdef _OPENMP
    true
#else
    false
#endif
};

// Per-row helpers shared by the serial and OpenMP variants. Accumulation
// within one output element always walks the reduction index in ascending
// order, which is what makes the two variants bit-identical.

inline void nn_row(const float* arow, const float* b, float* crow, int p, int n, bool acc) {
    if (!acc) std::fill(crow, crow + n, 0.0f);
    for (int k = 0; k < p; ++k) {
        const float aik = arow[k];
        const float* brow = b + static_cast<size_t>(k) * n;
        for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
}

inline void nt_row(const float* arow, const float* b, float* crow, int p, int n, bool acc) {
    for (int j = 0; j < n; ++j) {
        const float* brow = b + static_cast<size_t>(j) * p;
        float s = 0.0f;
        for (int k = 0; k < p; ++k) s += arow[k] * brow[k];
        crow[j] = acc ? crow[j] + s : s;
    }
}

// row i of C = sum_m a[m][i] * b[m][:]
inline void tn_row(const float* a, const float* b, float* crow, int i, int m, int p, int n, bool acc) {
    if (!acc) std::fill(crow, crow + n, 0.0f);
    for (int r = 0; r < m; ++r) {
        const float ari = a[static_cast<size_t>(r) * p + i];
        const float* brow = b + static_cast<size_t>(r) * n;
        for (int j = 0; j < n; ++j) crow[j] += ari * brow[j];
    }
}

inline void softmax_row(const float* x, float* y, int cols) {
    float mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
        const float e = std::exp(x[j] - mx);
        y[j] = e;
        sum += e;
    }
    const float inv = 1.0f / sum;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(const float* x, const float* gain, const float* bias,
                           float eps, float* y, int cols) {
    float mean = 0.0f;
    for (int j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<float>(cols);
    float var = 0.0f;
    for (int j = 0; j < cols; ++j) {
        const float d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<float>(cols);
    const float inv_std = 1.0f / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) {
        y[j] = gain[j] * ((x[j] - mean) * inv_std) + bias[j];
    }
}

constexpr size_t kParGrain = 4096;  // skip thread fan-out for tiny workloads

}  // namespace

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed);
#else
    return false;
#endif
}

void matmul_nn_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    for (int i = 0; i < m; ++i)
        nn_row(a + static_cast<size_t>(i) * p, b, c + static_cast<size_t>(i) * n, p, n, acc);
}

void matmul_nn_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nn_row(a + static_cast<size_t>(i) * p, b, c + static_cast<size_t>(i) * n, p, n, acc);
}

void matmul_nn(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    const size_t work = static_cast<size_t>(m) * p * n;
    if (parallel_enabled() && work >= kParGrain && m > 1)
        matmul_nn_omp(a, b, c, m, p, n, acc);
    else
        matmul_nn_serial(a, b, c, m, p, n, acc);
}

// For several rows it pays to transpose B once and run the nn kernel; the
// per-element mul/add sequence (ascending k) is unchanged, so results stay
// bit-identical with the direct dot-product path used for few rows.
void matmul_nt_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    if (m >= 4) {
        std::vector<float> bt(static_cast<size_t>(p) * n);
        transpose(b, bt.data(), n, p);
        matmul_nn_serial(a, bt.data(), c, m, p, n, acc);
        return;
    }
    for (int i = 0; i < m; ++i)
        nt_row(a + static_cast<size_t>(i) * p, b, c + static_cast<size_t>(i) * n, p, n, acc);
}

void matmul_nt_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    if (m >= 4) {
        std::vector<float> bt(static_cast<size_t>(p) * n);
        transpose(b, bt.data(), n, p);
        matmul_nn_omp(a, bt.data(), c, m, p, n, acc);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nt_row(a + static_cast<size_t>(i) * p, b, c + static_cast<size_t>(i) * n, p, n, acc);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    const size_t work = static_cast<size_t>(m) * p * n;
    if (parallel_enabled() && work >= kParGrain && m > 1)
        matmul_nt_omp(a, b, c, m, p, n, acc);
    else
        matmul_nt_serial(a, b, c, m, p, n, acc);
}

void matmul_tn_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    for (int i = 0; i < p; ++i)
        tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, p, n, acc);
}

void matmul_tn_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < p; ++i)
        tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, p, n, acc);
}

void matmul_tn(const float* a, const float* b, float* c, int m, int p, int n, bool acc) {
    const size_t work = static_cast<size_t>(m) * p * n;
    if (parallel_enabled() && work >= kParGrain && p > 1)
        matmul_tn_omp(a, b, c, m, p, n, acc);
    else
        matmul_tn_serial(a, b, c, m, p, n, acc);
}

void transpose(const float* src, float* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

void softmax_rows_serial(const float* x, float* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols);
}

void softmax_rows_omp(const float* x, float* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i)
        softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols);
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
    if (parallel_enabled() && static_cast<size_t>(rows) * cols >= kParGrain && rows > 1)
        softmax_rows_omp(x, y, rows, cols);
    else
        softmax_rows_serial(x, y, rows, cols);
}

void layer_norm_rows_serial(const float* x, const float* gain, const float* bias,
                            float eps, float* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + static_cast<size_t>(i) * cols, gain, bias, eps,
                       y + static_cast<size_t>(i) * cols, cols);
}

void layer_norm_rows_omp(const float* x, const float* gain, const float* bias,
                         float eps, float* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + static_cast<size_t>(i) * cols, gain, bias, eps,
                       y + static_cast<size_t>(i) * cols, cols);
}

void layer_norm_rows(const float* x, const float* gain, const float* bias,
                     float eps, float* y, int rows, int cols) {
    if (parallel_enabled() && static_cast<size_t>(rows) * cols >= kParGrain && rows > 1)
        layer_norm_rows_omp(x, gain, bias, eps, y, rows, cols);
    else
        layer_norm_rows_serial(x, gain, bias, eps, y, rows, cols);
}

void vec_add_serial(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vec_add_omp(const float* a, const float* b, float* out, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) out[i] = a[i] + b[i];
}

void vec_add(const float* a, const float* b, float* out, size_t n) {
    if (parallel_enabled() && n >= kParGrain)
        vec_add_omp(a, b, out, n);
    else
        vec_add_serial(a, b, out, n);
}

void vec_mul(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vec_scale(const float* a, float s, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void vec_acc(float* dst, const float* src, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void vec_axpy(float* dst, float alpha, const float* src, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
}

}  // namespace prefixmt::kernels
