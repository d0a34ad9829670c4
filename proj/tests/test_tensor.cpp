#include <cmath>
#include <cstring>
#include <functional>
#include <string>

#include "cognialign/gradcheck.hpp"
#include "cognialign/tensor.hpp"
#include "doctest.h"
#include "op_cases.hpp"
#include "test_util.hpp"

using namespace cognialign;
using testutil::random_tensor;

TEST_CASE("matmul examples") {
  Tensor id({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {3, 4, 5, 6});
  auto c = matmul(id, b);
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{3, 4, 5, 6});

  auto dot = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  CHECK(dot.shape() == Shape{1, 1});
  CHECK(dot.item() == 11.0f);

  Rng rng(5);
  auto x = random_tensor<float>(rng, {5, 4});
  auto y = random_tensor<float>(rng, {4, 3});
  auto z = matmul(x, y);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0;
      for (std::size_t p = 0; p < 4; ++p) ref += double(x.at(i, p)) * double(y.at(p, j));
      CHECK(std::abs(z.at(i, j) - ref) < 1e-6);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("x [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows examples") {
  auto s = softmax_rows(Tensor({1, 3}, {0, 0, 0}));
  for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto big = softmax_rows(Tensor({1, 2}, {1000, 0}));
  CHECK(big.at(0) == doctest::Approx(1.0));
  CHECK(big.at(1) == doctest::Approx(0.0));
  CHECK(std::isfinite(big.at(1)));

  auto r = softmax_rows(Tensor({1, 3}, {1, 2, 3}));
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(r.at(j) - std::exp(j + 1.0) / denom) < 1e-6);

  Rng rng(9);
  auto x = softmax_rows(random_tensor<float>(rng, {6, 11}, -10, 10));
  for (std::size_t i = 0; i < 6; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 11; ++j) {
      CHECK(x.at(i, j) >= 0.0f);
      total += x.at(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("layer_norm examples") {
  Tensor ones = Tensor::filled({4}, 1.0f);
  Tensor zeros = Tensor::zeros({4});
  auto c = layer_norm(Tensor({1, 4}, {3, 3, 3, 3}), ones, zeros);
  for (float v : c.data()) CHECK(v == 0.0f);

  Tensor bias({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  auto g0 = layer_norm(Tensor({2, 4}, {1, 2, 3, 4, -3, 7, 0, 1}), zeros, bias);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g0.at(i, j) == bias.at(j));

  Rng rng(21);
  auto x = random_tensor<float>(rng, {3, 8}, -5, 5);
  auto y = layer_norm(x, Tensor::filled({8}, 1.0f), Tensor::zeros({8}));
  for (std::size_t i = 0; i < 3; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mu += x.at(i, j);
    mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
    var /= 8;
    double out_mu = 0, out_var = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      const double ref = (x.at(i, j) - mu) / std::sqrt(var + 1e-5);
      CHECK(std::abs(y.at(i, j) - ref) < 1e-5);
      out_mu += y.at(i, j);
    }
    out_mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) out_var += (y.at(i, j) - out_mu) * (y.at(i, j) - out_mu);
    out_var /= 8;
    CHECK(std::abs(out_mu) < 1e-4);
    CHECK(std::abs(out_var - 1.0) < 1e-4);
  }
}

TEST_CASE("backward examples") {
  Tensor w({3}, {1, 2, 3}, true);
  backward(sum(w));
  CHECK(w.grad() == std::vector<float>{1, 1, 1});

  w.zero_grad();
  backward(sum(mul(w, w)));
  CHECK(w.grad() == std::vector<float>{2, 4, 6});

  Tensor unused({2}, {5, 5}, true);
  unused.zero_grad();
  w.zero_grad();
  backward(sum(w));
  CHECK(unused.grad() == std::vector<float>{0, 0});

  CHECK_THROWS_AS(backward(mul(w, w)), ContractError);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor w({2}, {1, -1}, true);
  backward(sum(w));
  backward(sum(w));
  CHECK(w.grad() == std::vector<float>{2, 2});
}

TEST_CASE("tape order puts inputs before outputs") {
  Tensor a({2}, {1, 2}, true);
  Tensor b({2}, {3, 4}, true);
  auto c = mul(a, b);
  auto d = add(c, a);
  auto loss = sum(d);
  ComputationTape<float> tape(loss);
  const auto& order = tape.order();
  auto pos = [&](const Tensor& t) {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == t.node_ptr().get()) return i;
    return order.size();
  };
  CHECK(pos(a) < pos(c));
  CHECK(pos(b) < pos(c));
  CHECK(pos(c) < pos(d));
  CHECK(pos(d) < pos(loss));
  CHECK(order.back() == loss.node_ptr().get());
}

TEST_CASE("broadcast add/mul over the last axis") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b({3}, {10, 20, 30}, true);
  auto y = add(x, b);
  CHECK(y.at(1, 2) == 36.0f);
  backward(sum(mul(y, b)));
  // d/db sum((x+b)*b) = sum over rows of (x + 2b)
  CHECK(b.grad() == std::vector<float>{1 + 4 + 40, 2 + 5 + 80, 3 + 6 + 120});
  CHECK_THROWS_AS(add(x, Tensor::zeros({2})), ContractError);
}

TEST_CASE("every differentiable op matches central finite differences on 10 instances") {
  for (const auto& op : testutil::op_cases()) {
    INFO("op " << op.name);
    for (int instance = 0; instance < 10; ++instance) {
      auto report = testutil::check_op(op, instance);
      INFO(op.name << " instance " << instance << " worst " << report.worst());
      CHECK(report.passed);
    }
  }
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_tensor<float>(rng, {4, 6}, -10, 10);
    auto b = random_tensor<float>(rng, {6, 5}, -10, 10);
    auto g = random_tensor<float>(rng, {6}, -10, 10);
    auto c = random_tensor<float>(rng, {4, 6}, -10, 10);
    DropoutContext ctx{static_cast<std::uint64_t>(trial), 0};
    CHECK(testutil::all_finite(matmul(a, b)));
    CHECK(testutil::all_finite(matmul_bt(a, c)));
    CHECK(testutil::all_finite(mul(a, c)));
    CHECK(testutil::all_finite(sigmoid(a)));
    CHECK(testutil::all_finite(gelu(a)));
    CHECK(testutil::all_finite(softmax_rows(scale(a, 100.0f))));
    CHECK(testutil::all_finite(layer_norm(a, g, g)));
    CHECK(testutil::all_finite(mean(a, 0)));
    CHECK(testutil::all_finite(dropout(a, 0.5f, true, ctx)));
    CHECK(testutil::all_finite(cross_entropy_with_logits(scale(slice(a, 0, 0, 1), 100.0f), 2)));
    CHECK(testutil::all_finite(mse(a, c)));
  }
}

TEST_CASE("forward replay with identical seed is bit-identical") {
  Rng rng(3);
  auto x = random_tensor<float>(rng, {5, 8});
  auto w = random_tensor<float>(rng, {8, 8});
  auto run = [&]() {
    DropoutContext ctx{42, 0};
    auto h = gelu(matmul(x, w));
    h = dropout(h, 0.25f, true, ctx);
    return softmax_rows(layer_norm(h, Tensor::filled({8}, 1.0f), Tensor::zeros({8})));
  };
  auto first = run();
  auto second = run();
  CHECK(std::memcmp(first.data().data(), second.data().data(), first.numel() * sizeof(float)) == 0);

  DropoutContext other{43, 0};
  auto shifted = dropout(gelu(matmul(x, w)), 0.25f, true, other);
  DropoutContext same{42, 0};
  auto base = dropout(gelu(matmul(x, w)), 0.25f, true, same);
  CHECK(std::memcmp(shifted.data().data(), base.data().data(), base.numel() * sizeof(float)) != 0);
}

TEST_CASE("dropout is the identity outside training") {
  Rng rng(8);
  auto x = random_tensor<float>(rng, {3, 3});
  DropoutContext ctx{1, 0};
  auto y = dropout(x, 0.5f, false, ctx);
  CHECK(y.node_ptr() == x.node_ptr());
  CHECK(ctx.calls == 0);
  CHECK_THROWS_AS(dropout(x, 1.0f, true, ctx), ContractError);
}

TEST_CASE("check_gradients: linear layer passes at 1e-5") {
  Rng rng(17);
  auto x = random_tensor<double>(rng, {4, 6});
  auto w = random_tensor<double>(rng, {6, 3}, -1, 1, true);
  auto b = random_tensor<double>(rng, {3}, -1, 1, true);
  auto probe = random_tensor<double>(rng, {4, 3});
  auto report = check_gradients([&] { return sum(mul(add(matmul(x, w), b), probe)); },
                                {{"w", w}, {"b", b}}, {.tolerance = 1e-5});
  CHECK(report.passed);
  CHECK(report.worst() < 1e-5);
}

TEST_CASE("check_gradients: corrupted backward rule fails") {
  Rng rng(18);
  auto w = random_tensor<double>(rng, {5}, -1, 1, true);
  // Square with a backward rule that forgets the factor of two.
  auto bad_square = [](const Tensor64& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= v;
    return make_result<double>(x.shape(), std::move(out), "bad_square", {x},
                               [](TensorNode<double>& o) {
                                 auto& gx = o.parents[0]->ensure_grad();
                                 const auto& xv = o.parents[0]->data;
                                 for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += o.grad[i] * xv[i];
                               });
  };
  auto report = check_gradients([&] { return sum(bad_square(w)); }, {{"w", w}});
  CHECK_FALSE(report.passed);
  CHECK(report.worst() > 0.4);
}

TEST_CASE("check_gradients: nondeterministic forward is a contract error") {
  auto w = Tensor64({2}, {1.0, 2.0}, true);
  int calls = 0;
  auto forward = [&] { return sum(scale(w, 1.0 + 0.001 * calls++)); };
  CHECK_THROWS_AS(check_gradients(forward, {{"w", w}}), ContractError);
}
