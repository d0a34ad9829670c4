#include <cstring>
#include <vector>

#include "cognialign/kernels.hpp"
#include "cognialign/rng.hpp"
#include "doctest.h"

using namespace cognialign;

namespace {

std::vector<float> random_matrix(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("serial matmul matches a triple-loop product") {
  Rng rng(11);
  const std::size_t m = 5, k = 4, n = 3;
  auto a = random_matrix(rng, m * k);
  auto b = random_matrix(rng, k * n);
  std::vector<float> c(m * n);
  kernels::serial::matmul<float>(a, b, c, m, k, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 0;
      for (std::size_t p = 0; p < k; ++p) ref += double(a[i * k + p]) * double(b[p * n + j]);
      CHECK(std::abs(c[i * n + j] - ref) < 1e-6);
    }
}

TEST_CASE("transposed variants agree with explicit transposes") {
  Rng rng(12);
  const std::size_t m = 7, k = 9, n = 6;
  auto a = random_matrix(rng, m * k);
  auto b = random_matrix(rng, n * k);  // used as [n×k]
  std::vector<float> bt(k * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) bt[c * n + r] = b[r * k + c];
  std::vector<float> expect(m * n), got(m * n);
  kernels::serial::matmul<float>(a, bt, expect, m, k, n);
  kernels::serial::matmul_bt<float>(a, b, got, m, k, n);
  CHECK(bit_equal(expect, got));

  auto at_src = random_matrix(rng, k * m);  // [k×m]
  std::vector<float> at(m * k);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < m; ++c) at[c * k + r] = at_src[r * m + c];
  auto rhs = random_matrix(rng, k * n);
  kernels::serial::matmul<float>(at, rhs, expect, m, k, n);
  kernels::serial::matmul_at<float>(at_src, rhs, got, m, k, n);
  CHECK(bit_equal(expect, got));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  Rng rng(13);
  const std::size_t m = 67, k = 53, n = 71;
  auto a = random_matrix(rng, m * k);
  auto b = random_matrix(rng, k * n);
  auto bn = random_matrix(rng, n * k);
  auto ak = random_matrix(rng, k * m);
  std::vector<float> s(m * n), p(m * n);

  kernels::serial::matmul<float>(a, b, s, m, k, n);
  kernels::parallel::matmul<float>(a, b, p, m, k, n);
  CHECK(bit_equal(s, p));
  kernels::serial::matmul_bt<float>(a, bn, s, m, k, n);
  kernels::parallel::matmul_bt<float>(a, bn, p, m, k, n);
  CHECK(bit_equal(s, p));
  kernels::serial::matmul_at<float>(ak, b, s, m, k, n);
  kernels::parallel::matmul_at<float>(ak, b, p, m, k, n);
  CHECK(bit_equal(s, p));

  auto x = random_matrix(rng, m * n);
  kernels::serial::softmax_rows<float>(x, s, m, n);
  kernels::parallel::softmax_rows<float>(x, p, m, n);
  CHECK(bit_equal(s, p));

  auto gain = random_matrix(rng, n);
  auto bias = random_matrix(rng, n);
  std::vector<float> mu_s(m), mu_p(m), r_s(m), r_p(m);
  kernels::serial::layer_norm_rows<float>(x, gain, bias, s, mu_s, r_s, m, n, 1e-5f);
  kernels::parallel::layer_norm_rows<float>(x, gain, bias, p, mu_p, r_p, m, n, 1e-5f);
  CHECK(bit_equal(s, p));
  CHECK(bit_equal(mu_s, mu_p));
  CHECK(bit_equal(r_s, r_p));
}

TEST_CASE("softmax row of large logits does not overflow") {
  std::vector<float> x{1000.0f, 0.0f}, out(2);
  kernels::serial::softmax_rows<float>(x, out, 1, 2);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(0.0));
}
