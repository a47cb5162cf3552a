#pragma once

#include <cstddef>

#include "stpformer/rng.hpp"
#include "stpformer/tensor.hpp"

namespace stpformer {

// U(-1/sqrt(fan_in), +1/sqrt(fan_in)), the usual affine-layer default
Tensor uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t fan_out);

Tensor gaussian(Rng& rng, Shape shape, double stddev);

// each feature column follows an independent Gaussian random walk down the rows
Tensor random_walk_rows(Rng& rng, std::size_t rows, std::size_t dim, double step_std);

} // namespace stpformer
