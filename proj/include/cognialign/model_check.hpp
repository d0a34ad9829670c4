#pragma once

// Finite-difference check of a whole fusion model in 64-bit: every
// parameter plus both input streams, with dropout active under a fixed mask
// stream.

#include <cstddef>
#include <cstdint>

#include "cognialign/gradcheck.hpp"
#include "cognialign/model.hpp"

namespace cognialign {

// Parameters are moved off their structured initial values (unit gains,
// zero biases) by N(0, 0.1) noise so no path is checked only at a special
// point. Inputs are uniform in [-1, 1] with `length` rows per stream.
GradientCheckReport check_model_gradients(ModelConfig config, std::uint64_t seed, std::size_t length = 5,
                                          const GradientCheckOptions& options = {});

// Same fusion, pooling, task, layer count and query side with widths small
// enough for coordinate-wise finite differences (input 6, d_model 8, two
// heads, d_ff 12).
ModelConfig reduced_for_gradcheck(const ModelConfig& config, std::size_t length = 5);

}  // namespace cognialign
