#include "stpformer/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "stpformer/errors.hpp"

namespace stpformer {

RoadGraph build_adjacency(std::size_t n_nodes,
                          const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    if (n_nodes == 0) throw InputError("build_adjacency: need at least one node");
    RoadGraph g;
    g.n_nodes = n_nodes;
    g.adjacency = Tensor({n_nodes, n_nodes});
    for (auto [src, dst] : edges) {
        if (src >= n_nodes || dst >= n_nodes)
            throw InputError("edge (" + std::to_string(src) + "," + std::to_string(dst) +
                             ") out of range for " + std::to_string(n_nodes) + " nodes");
        if (src == dst)
            throw InputError("edge (" + std::to_string(src) + "," + std::to_string(dst) +
                             ") is a self loop; self loops are added during "
                             "laplacian construction, not in the edge list");
        g.adjacency.at(src, dst) = 1.0; // duplicates collapse
    }
    return g;
}

RoadGraph build_grid(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw InputError("build_grid: empty grid");
    RoadGraph g;
    g.n_nodes = rows * cols;
    g.kind = RoadGraph::Kind::Grid;
    g.rows = rows;
    g.cols = cols;
    g.adjacency = Tensor({g.n_nodes, g.n_nodes});
    auto id = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            if (r + 1 < rows) {
                g.adjacency.at(id(r, c), id(r + 1, c)) = 1.0;
                g.adjacency.at(id(r + 1, c), id(r, c)) = 1.0;
            }
            if (c + 1 < cols) {
                g.adjacency.at(id(r, c), id(r, c + 1)) = 1.0;
                g.adjacency.at(id(r, c + 1), id(r, c)) = 1.0;
            }
        }
    return g;
}

Tensor symmetrized_adjacency(const RoadGraph& g, bool add_self_loops) {
    std::size_t n = g.n_nodes;
    Tensor a(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            a.at(i, j) = std::max(g.adjacency.at(i, j), g.adjacency.at(j, i));
    if (add_self_loops)
        for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
    return a;
}

Tensor normalized_laplacian(const RoadGraph& g, bool add_self_loops) {
    std::size_t n = g.n_nodes;
    Tensor a = symmetrized_adjacency(g, add_self_loops);
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += a.at(i, j);
        inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    Tensor l(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double v = -a.at(i, j) * (inv_sqrt[i] * inv_sqrt[j]);
            // isolated nodes get an all-zero row (Chung's convention)
            if (i == j && inv_sqrt[i] > 0.0) v += 1.0;
            l.at(i, j) = v;
            l.at(j, i) = v; // exact symmetry by construction
        }
    }
    return l;
}

namespace {

// Householder reduction to tridiagonal form with accumulated transform;
// classic EISPACK tred2 layout, a is overwritten with the orthogonal matrix.
void tridiagonalize(Tensor& a, std::vector<double>& d, std::vector<double>& e) {
    std::size_t n = d.size();
    for (std::size_t i = n - 1; i >= 1; --i) {
        std::size_t l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (std::size_t k = 0; k <= l; ++k) scale += std::fabs(a.at(i, k));
            if (scale == 0.0) {
                e[i] = a.at(i, l);
            } else {
                for (std::size_t k = 0; k <= l; ++k) {
                    a.at(i, k) /= scale;
                    h += a.at(i, k) * a.at(i, k);
                }
                double f = a.at(i, l);
                double gg = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * gg;
                h -= f * gg;
                a.at(i, l) = f - gg;
                f = 0.0;
                for (std::size_t j = 0; j <= l; ++j) {
                    a.at(j, i) = a.at(i, j) / h;
                    double g = 0.0;
                    for (std::size_t k = 0; k <= j; ++k) g += a.at(j, k) * a.at(i, k);
                    for (std::size_t k = j + 1; k <= l; ++k) g += a.at(k, j) * a.at(i, k);
                    e[j] = g / h;
                    f += e[j] * a.at(i, j);
                }
                double hh = f / (h + h);
                for (std::size_t j = 0; j <= l; ++j) {
                    f = a.at(i, j);
                    double g = e[j] - hh * f;
                    e[j] = g;
                    for (std::size_t k = 0; k <= j; ++k)
                        a.at(j, k) -= f * e[k] + g * a.at(i, k);
                }
            }
        } else {
            e[i] = a.at(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] != 0.0) {
            for (std::size_t j = 0; j < i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k < i; ++k) g += a.at(i, k) * a.at(k, j);
                for (std::size_t k = 0; k < i; ++k) a.at(k, j) -= g * a.at(k, i);
            }
        }
        d[i] = a.at(i, i);
        a.at(i, i) = 1.0;
        for (std::size_t j = 0; j < i; ++j) {
            a.at(j, i) = 0.0;
            a.at(i, j) = 0.0;
        }
    }
}

// Implicit-shift QL on the tridiagonal matrix, rotating the accumulated
// transform along; EISPACK tql2.
void ql_implicit(std::vector<double>& d, std::vector<double>& e, Tensor& z) {
    std::size_t n = d.size();
    if (n == 1) return;
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    const double eps = 2.22044604925031308e-16;
    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        std::size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
                if (std::fabs(e[m]) <= eps * dd) break;
            }
            if (m != l) {
                if (iter++ == 50)
                    throw NumericalError("eigensolver failed to converge");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::fabs(r) : -std::fabs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                bool underflow = false;
                for (std::size_t i = m; i-- > l;) {
                    double f = s * e[i];
                    double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (std::size_t k = 0; k < n; ++k) {
                        f = z.at(k, i + 1);
                        z.at(k, i + 1) = s * z.at(k, i) + c * f;
                        z.at(k, i) = c * z.at(k, i) - s * f;
                    }
                }
                if (underflow) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

void fix_sign(Tensor& vectors, std::size_t col) {
    std::size_t n = vectors.shape()[0];
    for (std::size_t i = 0; i < n; ++i) {
        double v = vectors.at(i, col);
        if (std::fabs(v) > 1e-8) {
            if (v < 0.0)
                for (std::size_t k = 0; k < n; ++k) vectors.at(k, col) = -vectors.at(k, col);
            return;
        }
    }
}

} // namespace

EigenResult symmetric_eigen(const Tensor& sym) {
    if (sym.rank() != 2 || sym.shape()[0] != sym.shape()[1])
        throw DimensionError("symmetric_eigen: need a square matrix, got " +
                             shape_str(sym.shape()));
    std::size_t n = sym.shape()[0];
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            asym = std::max(asym, std::fabs(sym.at(i, j) - sym.at(j, i)));
    if (asym > 1e-10)
        throw InputError("symmetric_eigen: matrix is not symmetric (max skew " +
                         std::to_string(asym) + ")");

    Tensor work = sym;
    std::vector<double> d(n, 0.0), e(n, 0.0);
    if (n == 1) {
        EigenResult res;
        res.values = {sym.at(0, 0)};
        res.vectors = Tensor({1, 1}, {1.0});
        return res;
    }
    tridiagonalize(work, d, e);
    ql_implicit(d, e, work);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });

    EigenResult res;
    res.values.resize(n);
    res.vectors = Tensor({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        res.values[j] = d[order[j]];
        for (std::size_t i = 0; i < n; ++i) res.vectors.at(i, j) = work.at(i, order[j]);
        fix_sign(res.vectors, j);
    }
    return res;
}

SpectralBasis topk_eigenvectors(const Tensor& sym, std::size_t k, bool largest) {
    std::size_t n = sym.shape()[0];
    if (k == 0 || k > n)
        throw InputError("topk_eigenvectors: k=" + std::to_string(k) +
                         " out of range for n=" + std::to_string(n));
    EigenResult full = symmetric_eigen(sym);
    SpectralBasis basis;
    basis.u_spe = Tensor({n, k});
    basis.eigenvalues.resize(k);
    std::size_t offset = largest ? n - k : 0;
    for (std::size_t j = 0; j < k; ++j) {
        basis.eigenvalues[j] = full.values[offset + j];
        for (std::size_t i = 0; i < n; ++i)
            basis.u_spe.at(i, j) = full.vectors.at(i, offset + j);
    }
    return basis;
}

std::vector<std::size_t> hop_distances(const RoadGraph& g, std::size_t source) {
    std::size_t n = g.n_nodes;
    if (source >= n) throw InputError("hop_distances: source out of range");
    Tensor a = symmetrized_adjacency(g, false);
    std::vector<std::size_t> dist(n, SIZE_MAX);
    std::deque<std::size_t> queue{source};
    dist[source] = 0;
    while (!queue.empty()) {
        std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n; ++v)
            if (a.at(u, v) > 0.0 && dist[v] == SIZE_MAX) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
    }
    return dist;
}

AttentionMasks hop_masks(const RoadGraph& g, std::size_t d_spat, std::size_t d_geo) {
    if (d_spat > d_geo)
        throw ConfigError("hop_masks: spatial radius " + std::to_string(d_spat) +
                          " exceeds geographic radius " + std::to_string(d_geo));
    std::size_t n = g.n_nodes;
    AttentionMasks masks;
    masks.m_spat = Tensor({n, n});
    masks.m_geo = Tensor({n, n});
    for (std::size_t s = 0; s < n; ++s) {
        auto dist = hop_distances(g, s);
        for (std::size_t v = 0; v < n; ++v) {
            if (dist[v] <= d_spat) masks.m_spat.at(s, v) = 1.0;
            if (dist[v] <= d_geo) masks.m_geo.at(s, v) = 1.0;
        }
    }
    return masks;
}

} // namespace stpformer
