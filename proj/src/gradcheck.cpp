#include "cognialign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cognialign {

double GradientCheckReport::worst() const {
  double w = 0.0;
  for (const auto& p : parameters) w = std::max(w, p.max_relative_error);
  return w;
}

GradientCheckReport check_gradients(const std::function<Tensor64()>& forward,
                                    std::vector<NamedParameter> params,
                                    const GradientCheckOptions& options) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad())
      throw ContractError("check_gradients: parameter '" + p.name + "' does not require grad");
    p.tensor.zero_grad();
  }

  const Tensor64 first = forward();
  const Tensor64 second = forward();
  if (first.numel() != 1 || second.numel() != 1)
    throw ContractError("check_gradients: forward must return a scalar");
  const double a = first.item(), b = second.item();
  if (std::memcmp(&a, &b, sizeof(double)) != 0)
    throw ContractError("check_gradients: forward is not deterministic (two runs differ)");

  backward(first);

  GradientCheckReport report;
  report.tolerance = options.tolerance;
  for (auto& p : params) {
    const std::vector<double> analytic = p.tensor.grad();
    auto values = p.tensor.mutable_data();
    std::vector<double> numeric(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      const double h = options.step * std::max(1.0, std::abs(original));
      auto central = [&](double step) {
        values[i] = original + step;
        const double up = forward().item();
        values[i] = original - step;
        const double down = forward().item();
        values[i] = original;
        return (up - down) / (2.0 * step);
      };
      const double coarse = central(h);
      numeric[i] = options.richardson ? (4.0 * central(0.5 * h) - coarse) / 3.0 : coarse;
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    const double floor = std::max(options.relative_floor * scale, options.absolute_floor);

    ParameterGradError err{p.name, values.size(), 0.0, 0.0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double diff = std::abs(analytic[i] - numeric[i]);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
      err.max_abs_error = std::max(err.max_abs_error, diff);
      err.max_relative_error = std::max(err.max_relative_error, diff / denom);
    }
    report.parameters.push_back(err);
  }
  report.passed = std::all_of(report.parameters.begin(), report.parameters.end(),
                              [&](const ParameterGradError& e) {
                                return std::isfinite(e.max_relative_error) &&
                                       e.max_relative_error < options.tolerance;
                              });
  return report;
}

}  // namespace cognialign
