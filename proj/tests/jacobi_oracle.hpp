#pragma once

// Brute-force classical Jacobi eigensolver used as an independent check on
// the production tridiagonal-QL path. Deliberately shares no code with it:
// pivot search, rotations and the sign rule are all spelled out here.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "stpformer/tensor.hpp"

namespace oracle {

struct JacobiResult {
    std::vector<double> values;               // ascending
    std::vector<std::vector<double>> vectors; // vectors[j] pairs with values[j]
};

inline JacobiResult jacobi_eigen(const stpformer::Tensor& sym) {
    std::size_t n = sym.shape()[0];
    std::vector<std::vector<double>> a(n, std::vector<double>(n));
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        v[i][i] = 1.0;
        for (std::size_t j = 0; j < n; ++j) a[i][j] = sym.at(i, j);
    }

    for (long iter = 0; iter < 100000; ++iter) {
        // largest off-diagonal pivot
        std::size_t p = 0, q = 1;
        double mx = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (std::fabs(a[i][j]) > mx) {
                    mx = std::fabs(a[i][j]);
                    p = i;
                    q = j;
                }
        if (n < 2 || mx < 1e-14) break;

        double apq = a[p][q];
        double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;

        double app = a[p][p], aqq = a[q][q];
        a[p][p] = app - t * apq;
        a[q][q] = aqq + t * apq;
        a[p][q] = a[q][p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == p || k == q) continue;
            double akp = a[k][p], akq = a[k][q];
            a[k][p] = a[p][k] = c * akp - s * akq;
            a[k][q] = a[q][k] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
            double vkp = v[k][p], vkq = v[k][q];
            v[k][p] = c * vkp - s * vkq;
            v[k][q] = s * vkp + c * vkq;
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x][x] < a[y][y]; });

    JacobiResult res;
    res.values.resize(n);
    res.vectors.assign(n, std::vector<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        res.values[j] = a[order[j]][order[j]];
        for (std::size_t i = 0; i < n; ++i) res.vectors[j][i] = v[i][order[j]];
        for (std::size_t i = 0; i < n; ++i) {
            if (std::fabs(res.vectors[j][i]) > 1e-8) {
                if (res.vectors[j][i] < 0.0)
                    for (std::size_t k = 0; k < n; ++k) res.vectors[j][k] = -res.vectors[j][k];
                break;
            }
        }
    }
    return res;
}

// Faddeev-LeVerrier characteristic polynomial coefficients:
// p(x) = x^n + c[0] x^{n-1} + ... + c[n-1]
inline std::vector<double> char_poly(const stpformer::Tensor& a) {
    std::size_t n = a.shape()[0];
    std::vector<double> c(n, 0.0);
    stpformer::Tensor m({n, n}); // N_0 = I
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    for (std::size_t k = 1; k <= n; ++k) {
        stpformer::Tensor am = stpformer::ops::matmul(a, m); // P_k = A * N_{k-1}
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i) tr += am.at(i, i);
        c[k - 1] = -tr / static_cast<double>(k);
        m = am;
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) += c[k - 1];
    }
    return c;
}

} // namespace oracle
