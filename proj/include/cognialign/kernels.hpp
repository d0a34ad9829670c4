#pragma once

// Dense row-major kernels behind the tensor ops.
//
// kernels::serial holds the reference loops. kernels::parallel holds OpenMP
// variants that split work by output row and keep the per-row summation
// order of the serial loop, so both produce bit-identical results. The
// unqualified entry points dispatch between them by problem size.

#include <cstddef>
#include <span>

namespace cognialign::kernels {

namespace serial {

// c[m×n] = a[m×k] · b[k×n]
template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n);

// c[m×n] = a[m×k] · b[n×k]ᵀ
template <class T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

// c[m×n] = a[k×m]ᵀ · b[k×n]
template <class T>
void matmul_at(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> out, std::size_t m, std::size_t n);

// Per-row normalization; writes the row mean and reciprocal stddev for the
// backward pass.
template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> out, std::span<T> mean, std::span<T> rstd, std::size_t m,
                     std::size_t n, T eps);

}  // namespace serial

namespace parallel {

template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n);
template <class T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);
template <class T>
void matmul_at(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);
template <class T>
void softmax_rows(std::span<const T> x, std::span<T> out, std::size_t m, std::size_t n);
template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> out, std::span<T> mean, std::span<T> rstd, std::size_t m,
                     std::size_t n, T eps);

}  // namespace parallel

// True when the OpenMP variants were compiled in.
bool openmp_available();

// Threads the parallel variants would use right now (1 inside an enclosing
// parallel region or without OpenMP).
int available_threads();

// Multiply-add count above which the dispatchers switch to the parallel
// variants.
inline constexpr std::size_t kParallelWorkThreshold = std::size_t{1} << 16;

template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  if (m * k * n >= kParallelWorkThreshold && available_threads() > 1)
    parallel::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

template <class T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (m * k * n >= kParallelWorkThreshold && available_threads() > 1)
    parallel::matmul_bt(a, b, c, m, k, n);
  else
    serial::matmul_bt(a, b, c, m, k, n);
}

template <class T>
void matmul_at(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (m * k * n >= kParallelWorkThreshold && available_threads() > 1)
    parallel::matmul_at(a, b, c, m, k, n);
  else
    serial::matmul_at(a, b, c, m, k, n);
}

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> out, std::size_t m, std::size_t n) {
  if (m * n >= kParallelWorkThreshold && available_threads() > 1)
    parallel::softmax_rows(x, out, m, n);
  else
    serial::softmax_rows(x, out, m, n);
}

template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> out, std::span<T> mean, std::span<T> rstd, std::size_t m,
                     std::size_t n, T eps) {
  if (m * n >= kParallelWorkThreshold && available_threads() > 1)
    parallel::layer_norm_rows(x, gain, bias, out, mean, rstd, m, n, eps);
  else
    serial::layer_norm_rows(x, gain, bias, out, mean, rstd, m, n, eps);
}

}  // namespace cognialign::kernels
