#pragma once

#include <cstddef>

// Dense float kernels. Every kernel comes in a serial and an OpenMP variant
// that share the same per-row/per-element helper, so the parallel variant is
// bit-identical to the serial reduction order (parallelism only ever spans
// independent output elements). The *_auto entry points dispatch on the
// global parallel switch.

namespace prefixmt::kernels {

void set_parallel(bool on);
bool parallel_enabled();

// C[m x n] = A[m x p] * B[p x n]; acc=true accumulates into C
void matmul_nn_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_nn_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_nn(const float* a, const float* b, float* c, int m, int p, int n, bool acc = false);

// C[m x n] = A[m x p] * B[n x p]^T
void matmul_nt_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_nt_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_nt(const float* a, const float* b, float* c, int m, int p, int n, bool acc = false);

// C[p x n] = A[m x p]^T * B[m x n]
void matmul_tn_serial(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_tn_omp(const float* a, const float* b, float* c, int m, int p, int n, bool acc);
void matmul_tn(const float* a, const float* b, float* c, int m, int p, int n, bool acc = false);

void transpose(const float* src, float* dst, int rows, int cols);

void softmax_rows_serial(const float* x, float* y, int rows, int cols);
void softmax_rows_omp(const float* x, float* y, int rows, int cols);
void softmax_rows(const float* x, float* y, int rows, int cols);

// y = gain * (x - mean) / sqrt(var + eps) + bias, per row
void layer_norm_rows_serial(const float* x, const float* gain, const float* bias,
                            float eps, float* y, int rows, int cols);
void layer_norm_rows_omp(const float* x, const float* gain, const float* bias,
                         float eps, float* y, int rows, int cols);
void layer_norm_rows(const float* x, const float* gain, const float* bias,
                     float eps, float* y, int rows, int cols);

// elementwise
void vec_add_serial(const float* a, const float* b, float* out, size_t n);
void vec_add_omp(const float* a, const float* b, float* out, size_t n);
void vec_add(const float* a, const float* b, float* out, size_t n);

void vec_mul(const float* a, const float* b, float* out, size_t n);
void vec_scale(const float* a, float s, float* out, size_t n);
void vec_acc(float* dst, const float* src, size_t n);        // dst += src
void vec_axpy(float* dst, float alpha, const float* src, size_t n);  // dst += alpha*src

}  // namespace prefixmt::kernels
