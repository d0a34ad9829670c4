#pragma once

// Plain-loop 64-bit evaluations of attention, gating and pooling, written
// from the formulas without touching the tensor engine.

#include <cmath>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
  auto out = matmul(x, w);
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double peak = z[0];
  for (double v : z) peak = std::max(peak, v);
  std::vector<double> e(z.size());
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (e[i] = std::exp(z[i] - peak));
  for (auto& v : e) v /= total;
  return e;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct AttentionParams {
  Mat wq, wk, wv, wo;
  std::vector<double> bq, bk, bv, bo;
};

// Scaled dot-product attention per head over column blocks, heads
// concatenated, then the output projection.
inline Mat attention(const Mat& query, const Mat& key, const Mat& value, const AttentionParams& p,
                     std::size_t heads) {
  const auto q = affine(query, p.wq, p.bq);
  const auto k = affine(key, p.wk, p.bk);
  const auto v = affine(value, p.wv, p.bv);
  const std::size_t d = q[0].size(), dh = d / heads;
  Mat merged(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> s(k.size());
      for (std::size_t j = 0; j < k.size(); ++j) {
        double dot = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const auto a = softmax(s);
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) merged[i][c] += a[j] * v[j][c];
    }
  return affine(merged, p.wo, p.bo);
}

// H = G*H_att + (1-G)*A with G = sigmoid(H_att W_g + b_g).
inline Mat gated(const Mat& h_att, const Mat& a, const Mat& wg, const std::vector<double>& bg) {
  const auto z = affine(h_att, wg, bg);
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) {
      const double g = sigmoid(z[i][j]);
      out[i][j] = g * h_att[i][j] + (1.0 - g) * a[i][j];
    }
  return out;
}

// e_i = (x_i . w_a) * sigmoid(x_i . w_g + b_g); alpha = softmax(e); sum alpha_i x_i
inline std::vector<double> gated_attention_pool(const Mat& x, const std::vector<double>& wa,
                                                const std::vector<double>& wg, double bg) {
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = 0, g = bg;
    for (std::size_t c = 0; c < wa.size(); ++c) {
      s += x[i][c] * wa[c];
      g += x[i][c] * wg[c];
    }
    e[i] = s * sigmoid(g);
  }
  const auto alpha = softmax(e);
  std::vector<double> out(x[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += alpha[i] * x[i][c];
  return out;
}

}  // namespace oracle
