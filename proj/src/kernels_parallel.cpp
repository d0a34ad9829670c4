#include "cognialign/kernels.hpp"

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernel_rows.hpp"

namespace cognialign::kernels {

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int available_threads() {
#ifdef _OPENMP
  if (omp_in_parallel()) return 1;
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

// Loop indices are signed for OpenMP 2.x compatibility.
template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const auto rows_m = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows_m; ++i)
    rows::matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

template <class T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  rows::transpose(b.data(), bt.data(), n, k);
  const auto rows_m = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows_m; ++i)
    rows::matmul_row(a.data() + i * k, bt.data(), c.data() + i * n, k, n);
}

template <class T>
void matmul_at(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const auto rows_m = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows_m; ++i)
    rows::matmul_at_row(a.data(), b.data(), c.data() + i * n, static_cast<std::size_t>(i), m, k, n);
}

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> out, std::size_t m, std::size_t n) {
  const auto rows_m = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows_m; ++i)
    rows::softmax_row(x.data() + i * n, out.data() + i * n, n);
}

template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> out, std::span<T> mean, std::span<T> rstd, std::size_t m,
                     std::size_t n, T eps) {
  const auto rows_m = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows_m; ++i)
    rows::layer_norm_row(x.data() + i * n, gain.data(), bias.data(), out.data() + i * n, mean[i],
                         rstd[i], n, eps);
}

#define COGNIALIGN_INSTANTIATE(T)                                                                  \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,      \
                          std::size_t, std::size_t);                                               \
  template void matmul_bt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,   \
                             std::size_t, std::size_t);                                            \
  template void matmul_at<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,   \
                             std::size_t, std::size_t);                                            \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);      \
  template void layer_norm_rows<T>(std::span<const T>, std::span<const T>, std::span<const T>,    \
                                   std::span<T>, std::span<T>, std::span<T>, std::size_t,          \
                                   std::size_t, T);

COGNIALIGN_INSTANTIATE(float)
COGNIALIGN_INSTANTIATE(double)
#undef COGNIALIGN_INSTANTIATE

}  // namespace parallel
}  // namespace cognialign::kernels
