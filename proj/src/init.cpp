#include "stpformer/init.hpp"

#include <cmath>

namespace stpformer {

Tensor uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    Tensor w({fan_in, fan_out});
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

Tensor gaussian(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * stddev;
    return t;
}

Tensor random_walk_rows(Rng& rng, std::size_t rows, std::size_t dim, double step_std) {
    Tensor t({rows, dim});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dim; ++j) {
            double step = rng.normal() * step_std;
            t.at(r, j) = (r == 0 ? 0.0 : t.at(r - 1, j)) + step;
        }
    return t;
}

} // namespace stpformer
