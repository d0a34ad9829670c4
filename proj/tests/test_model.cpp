#include <algorithm>
#include <cmath>
#include <string>

#include "cognialign/model.hpp"
#include "doctest.h"
#include "model_gradcheck.hpp"
#include "model_oracle.hpp"
#include "test_util.hpp"

using namespace cognialign;
using testutil::random_tensor;
using testutil::rows_of;
using testutil::values_of;

namespace {

template <class T>
Linear<T> random_linear(Rng& rng, std::size_t in, std::size_t out) {
  return {random_tensor<T>(rng, {in, out}, -0.5, 0.5), random_tensor<T>(rng, {out}, -0.5, 0.5)};
}

template <class T>
Linear<T> identity_linear(std::size_t d) {
  auto w = BasicTensor<T>::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) w.mutable_data()[i * d + i] = T(1);
  return {w, BasicTensor<T>::zeros({d})};
}

oracle::AttentionParams oracle_params(const AttentionWeights<double>& w) {
  return {rows_of(w.query.weight), rows_of(w.key.weight),  rows_of(w.value.weight), rows_of(w.output.weight),
          values_of(w.query.bias), values_of(w.key.bias), values_of(w.value.bias),  values_of(w.output.bias)};
}

void set_all(const BasicTensor<double>& t, double value) {
  auto copy = t;
  for (auto& v : copy.mutable_data()) v = value;
}

void zero_parameters_with_prefix(const Model64& m, const std::string& prefix) {
  for (const auto& p : m.parameters())
    if (p.name.rfind(prefix, 0) == 0) set_all(p.tensor, 0.0);
}

double softmax_total(const Tensor& logits) {
  const auto z = logits.data();
  const double peak = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - peak), e1 = std::exp(z[1] - peak);
  return e0 / (e0 + e1) + e1 / (e0 + e1);
}

}  // namespace

TEST_CASE("attention: one head, identity projections, equal queries gives the mean of V") {
  const std::size_t d = 4;
  AttentionWeights<double> w{identity_linear<double>(d), identity_linear<double>(d), identity_linear<double>(d),
                             identity_linear<double>(d)};
  Rng rng(1);
  auto q_row = random_tensor<double>(rng, {1, d});
  auto q = concat<double>({q_row, q_row, q_row}, 0);
  // Keys all equal make the scores equal regardless of the query.
  auto k_row = random_tensor<double>(rng, {1, d});
  auto k = concat<double>({k_row, k_row, k_row, k_row, k_row}, 0);
  auto v = random_tensor<double>(rng, {5, d});
  auto out = multi_head_attention(q, k, v, w, 1);
  const auto mean_v = values_of(mean(v, 0));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < d; ++c) CHECK(out.at(i, c) == doctest::Approx(mean_v[c]).epsilon(1e-12));
}

TEST_CASE("attention: a single key gives every query the projected value") {
  Rng rng(2);
  const std::size_t d = 8;
  AttentionWeights<double> w{random_linear<double>(rng, d, d), random_linear<double>(rng, d, d),
                             random_linear<double>(rng, d, d), random_linear<double>(rng, d, d)};
  auto q = random_tensor<double>(rng, {4, d});
  auto kv = random_tensor<double>(rng, {1, d});
  auto out = multi_head_attention(q, kv, kv, w, 2);
  const auto expected = w.output(w.value(kv));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < d; ++c) CHECK(out.at(i, c) == doctest::Approx(expected.at(0, c)).epsilon(1e-12));
}

TEST_CASE("attention: random 4x8 matches the 64-bit formula") {
  for (std::size_t heads : {1, 2, 4}) {
    Rng rng(30 + heads);
    const std::size_t d = 8;
    AttentionWeights<double> w{random_linear<double>(rng, d, d), random_linear<double>(rng, d, d),
                               random_linear<double>(rng, d, d), random_linear<double>(rng, d, d)};
    auto q = random_tensor<double>(rng, {4, d});
    auto k = random_tensor<double>(rng, {6, d});
    auto v = random_tensor<double>(rng, {6, d});
    const auto expected = oracle::attention(rows_of(q), rows_of(k), rows_of(v), oracle_params(w), heads);

    // The float engine against the 64-bit formula.
    auto cast = [](const Linear<double>& l) { return Linear<float>{l.weight.cast<float>(), l.bias.cast<float>()}; };
    AttentionWeights<float> wf{cast(w.query), cast(w.key), cast(w.value), cast(w.output)};
    ForwardTrace trace;
    auto out = multi_head_attention(q.cast<float>(), k.cast<float>(), v.cast<float>(), wf, heads, &trace);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out.at(i, c) - expected[i][c]) < 1e-5);

    REQUIRE(trace.attention.size() == 1);
    const auto& rec = trace.attention[0];
    CHECK(rec.heads == heads);
    for (std::size_t r = 0; r < rec.heads * rec.rows; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < rec.cols; ++c) total += rec.weights[r * rec.cols + c];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("attention: shape mismatch is a contract error") {
  Rng rng(3);
  AttentionWeights<double> w{random_linear<double>(rng, 4, 4), random_linear<double>(rng, 4, 4),
                             random_linear<double>(rng, 4, 4), random_linear<double>(rng, 4, 4)};
  CHECK_THROWS_AS(multi_head_attention(random_tensor<double>(rng, {2, 3}), random_tensor<double>(rng, {2, 4}),
                                       random_tensor<double>(rng, {2, 4}), w, 1),
                  ContractError);
  CHECK_THROWS_AS(multi_head_attention(random_tensor<double>(rng, {2, 4}), random_tensor<double>(rng, {2, 4}),
                                       random_tensor<double>(rng, {3, 4}), w, 1),
                  ContractError);
  CHECK_THROWS_AS(multi_head_attention(random_tensor<double>(rng, {2, 4}), random_tensor<double>(rng, {2, 4}),
                                       random_tensor<double>(rng, {2, 4}), w, 3),
                  ContractError);
}

TEST_CASE("gated residual: zero gate weights average the two streams") {
  Rng rng(4);
  auto h = random_tensor<float>(rng, {5, 6}, -3, 3);
  auto a = random_tensor<float>(rng, {5, 6}, -3, 3);
  Linear<float> gate{Tensor::zeros({6, 6}), Tensor::zeros({6})};
  ForwardTrace trace;
  auto out = gated_residual(h, a, gate, &trace);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.at(i) - (h.at(i) + a.at(i)) / 2) < 1e-6);
  for (double g : trace.gates.at(0).gate) CHECK(g == 0.5);
}

TEST_CASE("gated residual: a saturated gate passes the attended stream") {
  Rng rng(5);
  auto h = random_tensor<double>(rng, {3, 4}, -1, 1);
  auto a = random_tensor<double>(rng, {3, 4}, -1, 1);
  Linear<double> gate{Tensor64::zeros({4, 4}), Tensor64::filled({4}, 20.0)};
  auto out = gated_residual(h, a, gate);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.at(i) - h.at(i)) < 1e-6);
}

TEST_CASE("gated residual: random inputs match the formula, gates in (0,1), output between streams") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(600 + trial);
    auto h = random_tensor<double>(rng, {4, 5}, -2, 2);
    auto a = random_tensor<double>(rng, {4, 5}, -2, 2);
    auto gate = random_linear<double>(rng, 5, 5);
    ForwardTrace trace;
    auto out = gated_residual(h, a, gate, &trace);
    const auto expected = oracle::gated(rows_of(h), rows_of(a), rows_of(gate.weight), values_of(gate.bias));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(out.at(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));
        const double lo = std::min(h.at(i, j), a.at(i, j)), hi = std::max(h.at(i, j), a.at(i, j));
        CHECK(out.at(i, j) >= lo - 1e-12);
        CHECK(out.at(i, j) <= hi + 1e-12);
      }
    for (double g : trace.gates.at(0).gate) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
  }
}

TEST_CASE("pooling strategies") {
  Rng rng(7);
  PoolWeights<double> w{Tensor64::zeros({4, 1}), {Tensor64::zeros({4, 1}), Tensor64::zeros({1})}};

  auto row = random_tensor<double>(rng, {1, 4});
  auto same = concat<double>({row, row, row}, 0);
  auto pooled = pool_sequence(same, Pooling::Mean, w);
  for (std::size_t c = 0; c < 4; ++c) CHECK(pooled.at(c) == doctest::Approx(row.at(c)).epsilon(1e-14));

  auto x = random_tensor<double>(rng, {5, 4});
  const auto m = pool_sequence(x, Pooling::Mean, w);
  const auto at = pool_sequence(x, Pooling::Attn, w);
  for (std::size_t c = 0; c < 4; ++c) CHECK(at.at(c) == doctest::Approx(m.at(c)).epsilon(1e-12));

  const auto cls = pool_sequence(x, Pooling::CLS, w);
  for (std::size_t c = 0; c < 4; ++c) CHECK(cls.at(c) == x.at(0, c));
}

TEST_CASE("gated attention pooling matches the direct formula on random 5x4") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(900 + trial);
    auto x = random_tensor<float>(rng, {5, 4}, -2, 2);
    PoolWeights<float> w{random_tensor<float>(rng, {4, 1}, -1, 1),
                         {random_tensor<float>(rng, {4, 1}, -1, 1), random_tensor<float>(rng, {1}, -1, 1)}};
    ForwardTrace trace;
    auto pooled = pool_sequence(x, Pooling::GatedAttn, w, &trace);
    const auto expected =
        oracle::gated_attention_pool(rows_of(x), values_of(w.score), values_of(w.gate.weight), w.gate.bias.at(0));
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(pooled.at(c) - expected[c]) < 1e-6);
    double total = 0;
    for (double a : trace.pool_weights.at(0)) total += a;
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("fusion: Sum with zero text feeds the audio stream to the encoder") {
  ModelConfig c = testutil::tiny_config(Fusion::Sum);
  Model64 m(c);
  Rng rng(8);
  auto a = random_tensor<double>(rng, {3, c.d_model});
  auto out = m.fuse(a, Tensor64::zeros({3, c.d_model}));
  CHECK(values_of(out) == values_of(a));
}

TEST_CASE("fusion: Prod on hand-built 2x3 inputs") {
  ModelConfig c = testutil::tiny_config(Fusion::Prod);
  c.d_model = 3;
  c.n_heads = 1;
  Model64 m(c);
  Tensor64 a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor64 t({2, 3}, {-1, 0.5, 2, 0, 3, -2});
  CHECK(values_of(m.fuse(a, t)) == std::vector<double>{-1, 1, 6, 0, 15, -12});
}

TEST_CASE("fusion: Concat along tokens, SelfAttn to two tokens, Mean averages") {
  Rng rng(9);
  auto a = random_tensor<double>(rng, {3, 8});
  auto t = random_tensor<double>(rng, {5, 8});
  Model64 concat_model(testutil::tiny_config(Fusion::Concat));
  CHECK(concat_model.fuse(a, t).shape() == Shape{8, 8});
  Model64 self_model(testutil::tiny_config(Fusion::SelfAttn));
  auto two = self_model.fuse(a, t);
  CHECK(two.shape() == Shape{2, 8});
  CHECK(two.at(1, 3) == doctest::Approx(mean(t, 0).at(3)));

  Model64 mean_model(testutil::tiny_config(Fusion::Mean));
  auto t3 = random_tensor<double>(rng, {3, 8});
  CHECK(mean_model.fuse(a, t3).at(2, 5) == doctest::Approx((a.at(2, 5) + t3.at(2, 5)) / 2));
}

TEST_CASE("fusion: element-wise strategies reject unequal lengths") {
  Rng rng(10);
  for (Fusion f : {Fusion::Mean, Fusion::Sum, Fusion::Prod, Fusion::GatedCrossAttn}) {
    Model m(testutil::tiny_config(f));
    auto a = random_tensor<float>(rng, {3, 6});
    auto t = random_tensor<float>(rng, {4, 6});
    try {
      (void)m.forward(a, t);
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("equal length") != std::string::npos);
    }
  }
  for (Fusion f : {Fusion::Concat, Fusion::SelfAttn}) {
    Model m(testutil::tiny_config(f));
    CHECK(m.forward(random_tensor<float>(rng, {3, 6}), random_tensor<float>(rng, {4, 6})).numel() == 2);
  }
}

TEST_CASE("every fusion and pooling runs end to end with row-stochastic attention") {
  Rng rng(11);
  for (Fusion f : kAllFusions)
    for (Pooling p : kAllPoolings)
      for (std::size_t len : {1, 7}) {
        INFO(fusion_name(f) << " / " << pooling_name(p) << " L=" << len);
        ModelConfig c = testutil::tiny_config(f, p);
        Model m(c);
        auto a = random_tensor<float>(rng, {len, c.input_dim}, -2, 2);
        auto t = random_tensor<float>(rng, {len, c.input_dim}, -2, 2);
        ForwardTrace trace;
        auto logits = m.forward(a, t, {.trace = &trace});
        REQUIRE(logits.numel() == 2);
        CHECK(testutil::all_finite(logits));
        CHECK(std::abs(softmax_total(logits) - 1.0) < 1e-6);
        CHECK(!trace.attention.empty());
        for (const auto& rec : trace.attention)
          for (std::size_t r = 0; r < rec.heads * rec.rows; ++r) {
            double total = 0;
            for (std::size_t col = 0; col < rec.cols; ++col) total += rec.weights[r * rec.cols + col];
            CHECK(std::abs(total - 1.0) < 1e-6);
          }
        CHECK(trace.gates.empty() == !is_gated(f));
        for (const auto& g : trace.gates)
          for (double v : g.gate) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
          }
      }
}

TEST_CASE("regression head emits one value") {
  ModelConfig c = testutil::tiny_config(Fusion::GatedCrossAttn);
  c.task = Task::Regress;
  Model m(c);
  Rng rng(12);
  CHECK(m.forward(random_tensor<float>(rng, {4, 6}), random_tensor<float>(rng, {4, 6})).numel() == 1);
}

TEST_CASE("zeroed encoder layer is the identity") {
  ModelConfig c = testutil::tiny_config(Fusion::Concat);
  c.input_dim = c.d_model;
  Model64 m(c);
  for (const auto& p : m.parameters())
    if (p.name.find(".attn.output.") != std::string::npos || p.name.find(".ff.output.") != std::string::npos)
      set_all(p.tensor, 0.0);
  Rng rng(13);
  auto a = random_tensor<double>(rng, {3, c.d_model});
  auto t = random_tensor<double>(rng, {3, c.d_model});
  // With identity layers, Mean pooling of the fused sequence goes straight to the head.
  const auto pooled = mean(m.fuse(m.embed_audio(a), m.embed_text(t)), 0, true);
  const Linear<double> hidden{m.parameter("head.hidden.weight"), m.parameter("head.hidden.bias")};
  const Linear<double> output{m.parameter("head.output.weight"), m.parameter("head.output.bias")};
  const auto expected = output(gelu(hidden(pooled)));
  const auto got = m.forward(a, t);
  for (std::size_t i = 0; i < 2; ++i) CHECK(got.at(i) == doctest::Approx(expected.at(i)).epsilon(1e-12));
}

TEST_CASE("GatedCrossAttn with zero layer weights is the head on the pooled convex combination") {
  ModelConfig c = testutil::tiny_config(Fusion::GatedCrossAttn);
  Model64 m(c);
  zero_parameters_with_prefix(m, "cross.");
  Rng rng(14);
  auto a = random_tensor<double>(rng, {4, c.input_dim});
  auto t = random_tensor<double>(rng, {4, c.input_dim});
  // H_att = 0 and G = 1/2, so H = A/2 and the feed-forward adds nothing.
  const auto pooled = scale(mean(m.embed_audio(a), 0, true), 0.5);
  const Linear<double> hidden{m.parameter("head.hidden.weight"), m.parameter("head.hidden.bias")};
  const Linear<double> output{m.parameter("head.output.weight"), m.parameter("head.output.bias")};
  const auto expected = output(gelu(hidden(pooled)));
  const auto got = m.forward(a, t);
  for (std::size_t i = 0; i < 2; ++i) CHECK(got.at(i) == doctest::Approx(expected.at(i)).epsilon(1e-12));
}

TEST_CASE("query direction is symmetric when audio equals text, and matters otherwise") {
  ModelConfig audio_q = testutil::tiny_config(Fusion::GatedCrossAttn);
  ModelConfig text_q = audio_q;
  text_q.query_modality = Modality::Text;
  text_q.input_dim = audio_q.input_dim = audio_q.d_model;  // no per-modality projection
  Model ma(audio_q), mt(text_q);
  Rng rng(15);
  auto x = random_tensor<float>(rng, {5, audio_q.d_model});
  CHECK(values_of(ma.forward(x, x)) == values_of(mt.forward(x, x)));
  auto y = random_tensor<float>(rng, {5, audio_q.d_model});
  CHECK(values_of(ma.forward(x, y)) == values_of(mt.forward(y, x)));
  CHECK(values_of(ma.forward(x, y)) != values_of(mt.forward(x, y)));
}

TEST_CASE("eval mode is deterministic; train mode replays from the dropout seed") {
  ModelConfig c = testutil::tiny_config(Fusion::GatedBiCrossAttn, Pooling::GatedAttn);
  c.dropout_rate = 0.3;
  Model m(c);
  Rng rng(16);
  auto a = random_tensor<float>(rng, {6, 6});
  auto t = random_tensor<float>(rng, {6, 6});
  CHECK(values_of(m.forward(a, t)) == values_of(m.forward(a, t)));
  DropoutContext c1{5, 0}, c2{5, 0}, c3{6, 0};
  const auto r1 = values_of(m.forward(a, t, {.train = true, .dropout = &c1}));
  CHECK(r1 == values_of(m.forward(a, t, {.train = true, .dropout = &c2})));
  CHECK(r1 != values_of(m.forward(a, t, {.train = true, .dropout = &c3})));
  CHECK_THROWS_AS(m.forward(a, t, {.train = true}), ContractError);
}

TEST_CASE("subjects do not interact: order of evaluation leaves logits unchanged") {
  Model m(testutil::tiny_config(Fusion::GatedCrossAttn));
  Rng rng(17);
  std::vector<std::pair<Tensor, Tensor>> batch;
  for (std::size_t i = 0; i < 5; ++i)
    batch.emplace_back(random_tensor<float>(rng, {3 + i, 6}), random_tensor<float>(rng, {3 + i, 6}));
  std::vector<std::vector<double>> forward_order, reverse_order(5);
  for (auto& [a, t] : batch) forward_order.push_back(values_of(m.forward(a, t)));
  for (int i = 4; i >= 0; --i) reverse_order[i] = values_of(m.forward(batch[i].first, batch[i].second));
  CHECK(forward_order == reverse_order);
}

TEST_CASE("configuration validation") {
  ModelConfig c;
  c.n_heads = 5;
  CHECK_THROWS_AS(Model{c}, ContractError);
  c = {};
  c.n_layers = 0;
  CHECK_THROWS_AS(Model{c}, ContractError);
  c = {};
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(Model{c}, ContractError);
  CHECK(parse_fusion("GatedBiCrossAttn") == Fusion::GatedBiCrossAttn);
  CHECK_THROWS_AS(parse_pooling("Max"), ContractError);
  for (Fusion f : kAllFusions) CHECK(parse_fusion(fusion_name(f)) == f);
  const auto paper = ModelConfig::paper_scale();
  CHECK(paper.d_model == 768);
  CHECK(paper.n_heads == 12);
  CHECK(paper.d_ff == 3072);
}

TEST_CASE("sequence longer than the positional table is rejected") {
  ModelConfig c = testutil::tiny_config(Fusion::Sum);
  Model m(c);
  Rng rng(18);
  CHECK_THROWS_AS(m.forward(random_tensor<float>(rng, {13, 6}), random_tensor<float>(rng, {13, 6})), ContractError);
}

TEST_CASE("snapshot, restore and cast") {
  Model m(testutil::tiny_config(Fusion::GatedCrossAttn));
  const auto snap = m.snapshot();
  auto w = m.parameters()[0].tensor;
  w.mutable_data()[0] += 1.0f;
  CHECK(m.snapshot() != snap);
  m.restore(snap);
  CHECK(m.snapshot() == snap);

  Rng rng(19);
  auto a = random_tensor<float>(rng, {4, 6});
  auto t = random_tensor<float>(rng, {4, 6});
  auto m64 = m.cast<double>();
  const auto y32 = m.forward(a, t);
  const auto y64 = m64.forward(a.cast<double>(), t.cast<double>());
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(y32.at(i) - y64.at(i)) < 1e-4);
  CHECK(m.parameter_count() == m64.parameter_count());
}

TEST_CASE("same seed gives the same initial weights; different seeds differ") {
  ModelConfig c = testutil::tiny_config(Fusion::GatedCrossAttn);
  Model a(c), b(c);
  CHECK(a.snapshot() == b.snapshot());
  c.seed = 1;
  Model other(c);
  CHECK(a.snapshot() != other.snapshot());
}

TEST_CASE("full GatedCrossAttn model gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto report = testutil::full_model_gradcheck(testutil::tiny_config(Fusion::GatedCrossAttn), seed);
    INFO("seed " << seed << " worst " << report.worst());
    CHECK(report.passed);
  }
}

TEST_CASE("every fusion and pooling passes the gradient check") {
  for (Fusion f : kAllFusions)
    for (Pooling p : kAllPoolings) {
      auto report = testutil::full_model_gradcheck(testutil::tiny_config(f, p), 42, 4);
      INFO(fusion_name(f) << " / " << pooling_name(p) << " worst " << report.worst());
      CHECK(report.passed);
    }
  ModelConfig reg = testutil::tiny_config(Fusion::GatedCrossAttn);
  reg.task = Task::Regress;
  reg.n_layers = 2;
  auto report = testutil::full_model_gradcheck(reg, 7, 3);
  INFO("regression, 2 layers, worst " << report.worst());
  CHECK(report.passed);
}
