#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cognialign/tensor.hpp"

namespace cognialign {

struct NamedParameter {
  std::string name;
  Tensor64 tensor;
};

struct ParameterGradError {
  std::string name;
  std::size_t numel = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradientCheckReport {
  std::vector<ParameterGradError> parameters;
  double tolerance = 0.0;
  bool passed = false;

  double worst() const;
};

struct GradientCheckOptions {
  double tolerance = 1e-4;
  // Central-difference step, scaled by max(1, |w|) per coordinate.
  double step = 1e-3;
  // Denominator floor of the relative error, as a fraction of the largest
  // gradient magnitude in the same tensor. Keeps coordinates whose gradient
  // is numerically zero from dominating the report.
  double relative_floor = 1e-3;
  // Absolute denominator floor. Gradients that are exactly zero in theory
  // (a key bias under softmax shift invariance) come out as rounding noise
  // on both sides.
  double absolute_floor = 1e-8;
  // Combine the steps h and h/2 as (4 D(h/2) - D(h)) / 3, which cancels the
  // h^2 truncation term of the central difference.
  bool richardson = true;
};

// Compares analytic gradients of `forward` against central finite
// differences in 64-bit arithmetic, one coordinate at a time. `forward` must
// build its graph from the tensors in `params` and return a scalar. Two
// forward evaluations that differ bit-wise raise ContractError, since the
// finite differences would be meaningless.
GradientCheckReport check_gradients(const std::function<Tensor64()>& forward,
                                    std::vector<NamedParameter> params,
                                    const GradientCheckOptions& options = {});

}  // namespace cognialign
