#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stpformer/tensor.hpp"

namespace stpformer {

// Static road-network (or grid) topology. Adjacency is binary and kept as
// loaded, i.e. possibly directed; consumers symmetrize where required.
struct RoadGraph {
    enum class Kind { Sensor, Grid };

    std::size_t n_nodes = 0;
    Tensor adjacency; // (n, n), entries in {0, 1}
    Kind kind = Kind::Sensor;
    std::size_t rows = 0, cols = 0; // grid layout when kind == Grid
};

RoadGraph build_adjacency(std::size_t n_nodes,
                          const std::vector<std::pair<std::size_t, std::size_t>>& edges);

// rows x cols lattice with 4-neighborhood links in both directions
RoadGraph build_grid(std::size_t rows, std::size_t cols);

// max(A, A^T), optionally with unit self-loops
Tensor symmetrized_adjacency(const RoadGraph& g, bool add_self_loops);

// I - D^{-1/2} A_sym D^{-1/2}. Self-loops keep every degree >= 1; without
// them an isolated node contributes a bare unit diagonal entry.
Tensor normalized_laplacian(const RoadGraph& g, bool add_self_loops = true);

struct EigenResult {
    std::vector<double> values; // ascending
    Tensor vectors;             // (n, n), column j pairs with values[j]
};

// Dense symmetric eigensolver: Householder tridiagonalization followed by
// implicit-shift QL. Eigenvectors are unit length with the first component
// of magnitude above 1e-8 made positive, so results are deterministic.
EigenResult symmetric_eigen(const Tensor& sym);

struct SpectralBasis {
    Tensor u_spe;                    // (n, k)
    std::vector<double> eigenvalues; // ascending, size k
};

SpectralBasis topk_eigenvectors(const Tensor& sym, std::size_t k, bool largest = false);

// BFS hop counts over the symmetrized graph; unreachable = SIZE_MAX
std::vector<std::size_t> hop_distances(const RoadGraph& g, std::size_t source);

struct AttentionMasks {
    Tensor m_spat; // (n, n), 1 where hop distance <= d_spat
    Tensor m_geo;  // (n, n), 1 where hop distance <= d_geo
};

AttentionMasks hop_masks(const RoadGraph& g, std::size_t d_spat, std::size_t d_geo);

} // namespace stpformer
