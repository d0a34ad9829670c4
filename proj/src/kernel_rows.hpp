#pragma once

// Single-row bodies shared by the serial and OpenMP kernels. Keeping one
// definition is what makes the two variants bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace cognialign::kernels::rows {

template <class T>
inline void matmul_row(const T* a_row, const T* b, T* c_row, std::size_t k, std::size_t n) {
  std::fill(c_row, c_row + n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T aip = a_row[p];
    const T* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
  }
}

// Row i of aᵀ·b where a is [k×m].
template <class T>
inline void matmul_at_row(const T* a, const T* b, T* c_row, std::size_t i, std::size_t m,
                          std::size_t k, std::size_t n) {
  std::fill(c_row, c_row + n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T api = a[p * m + i];
    const T* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += api * b_row[j];
  }
}

template <class T>
inline void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

template <class T>
inline void softmax_row(const T* x, T* out, std::size_t n) {
  T peak = x[0];
  for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, x[j]);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - peak);
    total += out[j];
  }
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

template <class T>
inline void layer_norm_row(const T* x, const T* gain, const T* bias, T* out, T& mean_out,
                           T& rstd_out, std::size_t n, T eps) {
  T mean = 0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<T>(n);
  T var = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T rstd = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) out[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  mean_out = mean;
  rstd_out = rstd;
}

}  // namespace cognialign::kernels::rows
