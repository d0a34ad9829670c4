#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cognialign/error.hpp"

namespace cognialign {

// Plain row-major float matrix used for frame streams, embedding tables and
// file payloads. Carries no gradient state.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols)
      throw ContractError("matrix payload has " + std::to_string(values.size()) +
                          " values, expected " + std::to_string(rows * cols));
  }

  bool empty() const { return rows == 0; }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  void append_row(std::span<const float> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    if (r.size() != cols)
      throw ContractError("row of width " + std::to_string(r.size()) + " appended to matrix of width " +
                          std::to_string(cols));
    values.insert(values.end(), r.begin(), r.end());
    ++rows;
  }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace cognialign
