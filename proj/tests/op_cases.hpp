#pragma once

// Every differentiable op with input shapes, for finite-difference checks.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cognialign/gradcheck.hpp"
#include "cognialign/tensor.hpp"
#include "test_util.hpp"

namespace testutil {

using namespace cognialign;

using Op64 = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  Op64 fn;
};

inline std::vector<OpCase> op_cases() {
  // Each case reduces its output to a scalar through a fixed random
  // projection so every output coordinate contributes to the gradient.
  return {
      {"matmul", {{3, 4}, {4, 5}}, [](auto& in) { return matmul(in[0], in[1]); }},
      {"matmul_bt", {{3, 4}, {5, 4}}, [](auto& in) { return matmul_bt(in[0], in[1]); }},
      {"add", {{3, 4}, {3, 4}}, [](auto& in) { return add(in[0], in[1]); }},
      {"add_broadcast", {{3, 4}, {4}}, [](auto& in) { return add(in[0], in[1]); }},
      {"sub", {{3, 4}, {4}}, [](auto& in) { return sub(in[0], in[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& in) { return mul(in[0], in[1]); }},
      {"mul_broadcast", {{3, 4}, {4}}, [](auto& in) { return mul(in[0], in[1]); }},
      {"scale", {{3, 4}}, [](auto& in) { return scale(in[0], 0.37); }},
      {"sigmoid", {{3, 4}}, [](auto& in) { return sigmoid(in[0]); }},
      {"gelu", {{3, 4}}, [](auto& in) { return gelu(in[0]); }},
      {"softmax_rows", {{3, 5}}, [](auto& in) { return softmax_rows(in[0]); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](auto& in) { return layer_norm(in[0], in[1], in[2], 1e-5); }},
      {"mean_axis0", {{4, 3}}, [](auto& in) { return mean(in[0], 0); }},
      {"mean_axis1", {{4, 3}}, [](auto& in) { return mean(in[0], 1); }},
      {"sum", {{4, 3}}, [](auto& in) { return sum(in[0]); }},
      {"concat_rows", {{2, 3}, {3, 3}}, [](auto& in) { return concat<double>({in[0], in[1]}, 0); }},
      {"concat_cols", {{2, 3}, {2, 2}}, [](auto& in) { return concat<double>({in[0], in[1]}, 1); }},
      {"slice_rows", {{5, 3}}, [](auto& in) { return slice(in[0], 0, 1, 4); }},
      {"slice_cols", {{3, 5}}, [](auto& in) { return slice(in[0], 1, 2, 5); }},
      {"transpose", {{3, 5}}, [](auto& in) { return transpose(in[0]); }},
      {"gather_rows", {{4, 3}},
       [](auto& in) {
         const std::size_t idx[] = {2, 0, 2, 3};
         return gather_rows(in[0], std::span<const std::size_t>(idx));
       }},
      {"dropout", {{3, 4}},
       [](auto& in) {
         DropoutContext ctx{77, 0};
         return dropout(in[0], 0.3, true, ctx);
       }},
      {"cross_entropy", {{3}}, [](auto& in) { return cross_entropy_with_logits(in[0], 1); }},
      {"mse", {{4}, {4}}, [](auto& in) { return mse(in[0], in[1]); }},
  };
}

// Instance `instance` of an op: inputs uniform in [-2, 2], output reduced
// through a fixed random projection.
inline GradientCheckReport check_op(const OpCase& op, int instance) {
  Rng rng(1000 + instance);
  std::vector<NamedParameter> params;
  std::vector<Tensor64> inputs;
  for (std::size_t i = 0; i < op.shapes.size(); ++i) {
    auto t = random_tensor<double>(rng, op.shapes[i], -2.0, 2.0, true);
    inputs.push_back(t);
    params.push_back({op.name + ".in" + std::to_string(i), t});
  }
  Tensor64 probe;
  auto forward = [&]() {
    auto out = op.fn(inputs);
    if (!probe.defined()) {
      Rng prng(99);
      probe = random_tensor<double>(prng, out.shape());
    }
    return sum(mul(out, probe));
  };
  return check_gradients(forward, params);
}

}  // namespace testutil
