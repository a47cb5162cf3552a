#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "stpformer/autograd.hpp"
#include "stpformer/rng.hpp"
#include "stpformer/tensor.hpp"
#include "test_util.hpp"

using namespace stpformer;
using testutil::fd_max_rel_err;
using testutil::rand_normal;
using testutil::rand_uniform;

TEST_CASE("matmul on a hand-checked 2x2 instance") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = ops::matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19).epsilon(1e-15));
    CHECK(c.at(0, 1) == doctest::Approx(22).epsilon(1e-15));
    CHECK(c.at(1, 0) == doctest::Approx(43).epsilon(1e-15));
    CHECK(c.at(1, 1) == doctest::Approx(50).epsilon(1e-15));
}

TEST_CASE("matmul identity leaves the input unchanged") {
    Rng rng(7);
    Tensor x = rand_uniform(rng, {3, 5});
    Tensor id({5, 5});
    for (std::size_t i = 0; i < 5; ++i) id.at(i, i) = 1.0;
    Tensor y = ops::matmul(x, id);
    CHECK(ops::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("matmul rejects mismatched shapes with both named") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    CHECK_THROWS_WITH_AS(ops::matmul(a, b),
                         doctest::Contains("[2,3]"), DimensionError);
    CHECK_THROWS_WITH_AS(ops::matmul(a, b),
                         doctest::Contains("[4,2]"), DimensionError);
    CHECK_THROWS_AS(ops::matmul(Tensor({2, 2, 3}), Tensor({3, 3, 4})), DimensionError);
}

TEST_CASE("batched matmul agrees with per-slice 2d matmul") {
    Rng rng(11);
    Tensor a = rand_uniform(rng, {4, 3, 5});
    Tensor b = rand_uniform(rng, {4, 5, 2});
    Tensor c = ops::matmul(a, b);
    for (std::size_t s = 0; s < 4; ++s) {
        Tensor as({3, 5}), bs({5, 2});
        std::memcpy(as.data(), a.data() + s * 15, 15 * sizeof(double));
        std::memcpy(bs.data(), b.data() + s * 10, 10 * sizeof(double));
        Tensor cs = ops::matmul(as, bs);
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(c[s * 6 + i] == doctest::Approx(cs[i]).epsilon(1e-15));
    }
}

TEST_CASE("matmul broadcasts batch extents of one") {
    Rng rng(13);
    Tensor a = rand_uniform(rng, {3, 2, 4});
    Tensor w = rand_uniform(rng, {1, 4, 5});
    Tensor c = ops::matmul(a, w);
    CHECK(c.shape() == Shape{3, 2, 5});
    Tensor w2({4, 5});
    std::memcpy(w2.data(), w.data(), 20 * sizeof(double));
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor as({2, 4});
        std::memcpy(as.data(), a.data() + s * 8, 8 * sizeof(double));
        Tensor cs = ops::matmul(as, w2);
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(c[s * 10 + i] == doctest::Approx(cs[i]).epsilon(1e-15));
    }
}

TEST_CASE("softmax of log odds recovers the odds") {
    Tensor x({2}, {std::log(1.0), std::log(3.0)});
    Tensor y = ops::softmax_last(x);
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows are stochastic and shift invariant") {
    Rng rng(17);
    for (int it = 0; it < 200; ++it) {
        std::size_t rows = 1 + rng.uniform_int(0, 3);
        std::size_t d = 1 + rng.uniform_int(0, 7);
        Tensor x = rand_uniform(rng, {rows, d}, -30.0, 30.0);
        Tensor y = ops::softmax_last(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                CHECK(y[r * d + j] >= 0.0);
                s += y[r * d + j];
            }
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
        double c = rng.uniform(-5.0, 5.0);
        Tensor shifted = ops::softmax_last(ops::add(x, Tensor::full(x.shape(), c)));
        CHECK(ops::max_abs_diff(y, shifted) <= 1e-12);
    }
}

TEST_CASE("softmax vjp at the uniform point") {
    ParameterStore ps;
    DualTensor& x = ps.add("x", Tensor({2}, {0.0, 0.0}));
    Tape t;
    Var y = t.softmax_last(t.param(x));
    // pick out the first component: upstream [1, 0]
    Var loss = t.sum_all(t.mul(y, t.constant(Tensor({2}, {1.0, 0.0}))));
    t.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(x.grad[1] == doctest::Approx(-0.25).epsilon(1e-14));
}

TEST_CASE("reshape and permute invert bitwise") {
    Rng rng(19);
    for (int it = 0; it < 50; ++it) {
        Tensor x = rand_uniform(rng, {2, 3, 4, 5});
        Tensor r = ops::reshape(x, {6, 20});
        Tensor back = ops::reshape(r, {2, 3, 4, 5});
        CHECK(std::memcmp(x.data(), back.data(), x.size() * sizeof(double)) == 0);

        std::vector<std::size_t> axes{0, 1, 2, 3};
        Rng perm_rng(100 + it);
        perm_rng.shuffle(axes);
        Tensor p = ops::permute(x, axes);
        Tensor undone = ops::permute(p, ops::inverse_axes(axes));
        CHECK(std::memcmp(x.data(), undone.data(), x.size() * sizeof(double)) == 0);
    }
    CHECK_THROWS_AS(ops::reshape(Tensor({2, 3}), {7}), DimensionError);
    CHECK_THROWS_AS(ops::permute(Tensor({2, 3}), {0, 0}), DimensionError);
}

TEST_CASE("elementwise broadcast accepts extents of one and nothing else") {
    Rng rng(23);
    Tensor a = rand_uniform(rng, {2, 3});
    Tensor b = rand_uniform(rng, {1, 3});
    Tensor c = ops::add(a, b);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(c.at(i, j) == a.at(i, j) + b.at(0, j));
    CHECK_THROWS_WITH_AS(ops::add(Tensor({2, 3}), Tensor({2, 2})),
                         doctest::Contains("[2,2]"), DimensionError);
    // no implicit rank promotion
    CHECK_THROWS_AS(ops::add(Tensor({2, 3}), Tensor({3})), DimensionError);
    CHECK_THROWS_AS(ops::mul(Tensor({4, 1}), Tensor({2, 2})), DimensionError);
}

TEST_CASE("broadcast_to and reduce_to_shape are adjoint") {
    Rng rng(29);
    Tensor x = rand_uniform(rng, {1, 3, 1});
    Tensor big = ops::broadcast_to(x, {4, 3, 2});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 2; ++k)
                CHECK(big.at(i, j, k) == x.at(0, j, 0));
    Tensor g = rand_uniform(rng, {4, 3, 2});
    Tensor red = ops::reduce_to_shape(g, {1, 3, 1});
    for (std::size_t j = 0; j < 3; ++j) {
        double want = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t k = 0; k < 2; ++k) want += g.at(i, j, k);
        CHECK(red.at(0, j, 0) == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("channel projection with identity kernel is the identity") {
    Rng rng(31);
    Tensor x = rand_uniform(rng, {3, 4, 5});
    Tensor w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
    Tensor b({3});
    Tensor y = ops::channel_project(x, w, b);
    CHECK(ops::max_abs_diff(x, y) == 0.0);
    CHECK_THROWS_WITH_AS(ops::channel_project(x, Tensor({3, 2}), b),
                         doctest::Contains("channel mismatch"), DimensionError);
}

TEST_CASE("channel projection agrees with the matmul route") {
    Rng rng(37);
    Tensor x = rand_uniform(rng, {4, 3, 6});
    Tensor w = rand_uniform(rng, {2, 4});
    Tensor b = rand_uniform(rng, {2});
    Tensor direct = ops::channel_project(x, w, b);
    Tensor via = ops::matmul(w, ops::reshape(x, {4, 18}));
    for (std::size_t co = 0; co < 2; ++co)
        for (std::size_t j = 0; j < 18; ++j)
            CHECK(direct[co * 18 + j] ==
                  doctest::Approx(via[co * 18 + j] + b[co]).epsilon(1e-14));
}

TEST_CASE("concat and split round trip") {
    Rng rng(41);
    Tensor a = rand_uniform(rng, {2, 3});
    Tensor b = rand_uniform(rng, {2, 5});
    Tensor c = ops::concat_last(a, b);
    CHECK(c.shape() == Shape{2, 8});
    auto [a2, b2] = ops::split_last(c, 3);
    CHECK(ops::max_abs_diff(a, a2) == 0.0);
    CHECK(ops::max_abs_diff(b, b2) == 0.0);
}

TEST_CASE("finite values are detected") {
    Tensor ok({3}, {1.0, -2.0, 0.0});
    CHECK(ops::all_finite(ok));
    Tensor bad({2}, {1.0, std::nan("")});
    CHECK_FALSE(ops::all_finite(bad));
    Tensor inf({2}, {1.0, INFINITY});
    CHECK_FALSE(ops::all_finite(inf));
}

// --- tape mechanics ---------------------------------------------------------

TEST_CASE("gradients accumulate additively across backward passes") {
    ParameterStore ps;
    DualTensor& w = ps.add("w", Tensor({2}, {1.0, 2.0}));
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        Var loss = t.sum_all(t.mul(t.param(w), t.param(w)));
        t.backward(loss);
    }
    // d/dw sum(w*w) = 2w, doubled by accumulation
    CHECK(w.grad[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(w.grad[1] == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("a parameter used twice receives the summed gradient") {
    ParameterStore ps;
    DualTensor& w = ps.add("w", Tensor({1}, {3.0}));
    Tape t;
    Var a = t.param(w);
    Var loss = t.sum_all(t.add(t.scale(a, 2.0), t.scale(a, 5.0)));
    t.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("backward misuse raises state errors") {
    Tape empty;
    CHECK_THROWS_AS(empty.backward(Var{}), StateError);

    ParameterStore ps;
    DualTensor& w = ps.add("w", Tensor({1}, {1.0}));
    Tape t;
    Var loss = t.sum_all(t.param(w));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), StateError);

    Tape frozen(false);
    Var v = frozen.sum_all(frozen.constant(Tensor({2}, {1.0, 2.0})));
    CHECK_THROWS_AS(frozen.backward(v), StateError);

    DualTensor& w2 = ps.add("w2", Tensor({2}, {1.0, 2.0}));
    Tape t2;
    Var wide = t2.param(w2);
    CHECK_THROWS_AS(t2.backward(wide), DimensionError); // non-scalar root is rejected too
}

TEST_CASE("lookup_rows scatter-adds duplicate indices") {
    ParameterStore ps;
    DualTensor& table = ps.add("t", Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    Tape t;
    Var rows = t.lookup_rows(t.param(table), {1, 1, 2});
    CHECK(t.val(rows).at(0, 0) == 3.0);
    CHECK(t.val(rows).at(2, 1) == 6.0);
    Var loss = t.sum_all(rows);
    t.backward(loss);
    CHECK(table.grad.at(0, 0) == 0.0);
    CHECK(table.grad.at(1, 0) == 2.0); // visited twice
    CHECK(table.grad.at(2, 1) == 1.0);
}

// --- per-op gradients against central differences ---------------------------

namespace {

// wraps a unary tape op into a weighted-sum scalar loss over a fresh input
double check_unary(const std::function<Var(Tape&, Var)>& op, const Tensor& x0,
                   std::uint64_t seed) {
    ParameterStore ps;
    DualTensor& x = ps.add("x", x0);
    Rng rng(seed);
    Tensor w;
    {
        Tape probe(false);
        Var out = op(probe, probe.constant(x0));
        w = rand_uniform(rng, probe.val(out).shape());
    }
    return fd_max_rel_err(ps, [&](Tape& t) {
        return t.sum_all(t.mul(op(t, t.param(x)), t.constant(w)));
    });
}

} // namespace

TEST_CASE("analytic gradients match finite differences per op") {
    Rng rng(101);
    double tol = 1e-6;

    // inputs kept away from relu/abs kinks
    Tensor xk = rand_uniform(rng, {3, 4}, 0.2, 1.5);
    for (std::size_t i = 0; i < xk.size(); ++i)
        if (i % 2) xk[i] = -xk[i];

    CHECK(check_unary([](Tape& t, Var v) { return t.relu(v); }, xk, 1) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.abs_v(v); }, xk, 2) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.sigmoid(v); },
                      rand_uniform(rng, {2, 5}, -2, 2), 3) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.tanh_v(v); },
                      rand_uniform(rng, {2, 5}, -2, 2), 4) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.softmax_last(v); },
                      rand_uniform(rng, {3, 6}, -3, 3), 5) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.scale(v, -1.7); },
                      rand_uniform(rng, {4}, -2, 2), 6) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.mean_axis(v, 1); },
                      rand_uniform(rng, {3, 4, 2}, -2, 2), 7) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.mean_all(v); },
                      rand_uniform(rng, {3, 4}, -2, 2), 8) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.reshape(v, {12}); },
                      rand_uniform(rng, {3, 4}, -2, 2), 9) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.permute(v, {2, 0, 1}); },
                      rand_uniform(rng, {2, 3, 4}, -2, 2), 10) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.broadcast_to(v, {4, 3, 5}); },
                      rand_uniform(rng, {4, 1, 5}, -2, 2), 11) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.huber(v, 0.7); }, xk, 12) < tol);
    CHECK(check_unary([](Tape& t, Var v) { return t.lookup_rows(v, {0, 2, 2, 1}); },
                      rand_uniform(rng, {3, 4}, -2, 2), 13) < tol);
}

TEST_CASE("matmul gradients match finite differences, including broadcast") {
    Rng rng(211);
    ParameterStore ps;
    DualTensor& a = ps.add("a", rand_uniform(rng, {3, 2, 4}));
    DualTensor& b = ps.add("b", rand_uniform(rng, {1, 4, 5}));
    Tensor w = rand_uniform(rng, {3, 2, 5});
    double err = fd_max_rel_err(ps, [&](Tape& t) {
        return t.sum_all(t.mul(t.matmul(t.param(a), t.param(b)), t.constant(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("binary op gradients match finite differences under broadcast") {
    Rng rng(223);
    ParameterStore ps;
    DualTensor& a = ps.add("a", rand_uniform(rng, {2, 3, 4}));
    DualTensor& b = ps.add("b", rand_uniform(rng, {2, 1, 4}, 0.5, 1.5));
    Tensor w = rand_uniform(rng, {2, 3, 4});
    double err = fd_max_rel_err(ps, [&](Tape& t) {
        Var s = t.mul(t.sub(t.add(t.param(a), t.param(b)), t.param(b)), t.param(b));
        return t.sum_all(t.mul(s, t.constant(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("concat gradients match finite differences") {
    Rng rng(227);
    ParameterStore ps;
    DualTensor& a = ps.add("a", rand_uniform(rng, {3, 2}));
    DualTensor& b = ps.add("b", rand_uniform(rng, {3, 5}));
    Tensor w = rand_uniform(rng, {3, 7});
    double err = fd_max_rel_err(ps, [&](Tape& t) {
        return t.sum_all(t.mul(t.concat_last(t.param(a), t.param(b)), t.constant(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("layer norm normalizes and its gradient checks out") {
    Rng rng(229);
    Tensor x0 = rand_uniform(rng, {4, 6}, -2.0, 2.0);
    {
        Tape t;
        Var y = t.layer_norm(t.constant(x0), t.constant(Tensor::ones({6})),
                             t.constant(Tensor({6})));
        const Tensor& y0 = t.val(y);
        for (std::size_t r = 0; r < 4; ++r) {
            double mu = 0.0, var = 0.0;
            for (std::size_t j = 0; j < 6; ++j) mu += y0.at(r, j);
            mu /= 6.0;
            for (std::size_t j = 0; j < 6; ++j) var += y0.at(r, j) * y0.at(r, j);
            CHECK(std::fabs(mu) < 1e-12);
            CHECK(var / 6.0 == doctest::Approx(1.0).epsilon(1e-4)); // eps-shrunk
        }
    }
    ParameterStore ps;
    DualTensor& x = ps.add("x", x0);
    DualTensor& g = ps.add("g", rand_uniform(rng, {6}, 0.5, 1.5));
    DualTensor& b = ps.add("b", rand_uniform(rng, {6}, -0.5, 0.5));
    Tensor w = rand_uniform(rng, {4, 6});
    double err = fd_max_rel_err(ps, [&](Tape& t) {
        return t.sum_all(t.mul(t.layer_norm(t.param(x), t.param(g), t.param(b)),
                               t.constant(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("lstm scan gradient checks out") {
    Rng rng(233);
    std::size_t B = 2, T = 5, D = 3, H = 4;
    ParameterStore ps;
    DualTensor& x = ps.add("x", rand_uniform(rng, {B, T, D}));
    DualTensor& wi = ps.add("wi", rand_uniform(rng, {D, 4 * H}, -0.5, 0.5));
    DualTensor& wh = ps.add("wh", rand_uniform(rng, {H, 4 * H}, -0.5, 0.5));
    DualTensor& bias = ps.add("b", rand_uniform(rng, {4 * H}, -0.5, 0.5));
    Tensor w = rand_uniform(rng, {B, T, H});
    double err = fd_max_rel_err(ps, [&](Tape& t) {
        Var h = t.lstm_scan(t.param(x), t.param(wi), t.param(wh), t.param(bias));
        return t.sum_all(t.mul(h, t.constant(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("value-only tapes skip gradient bookkeeping") {
    ParameterStore ps;
    DualTensor& w = ps.add("w", Tensor({2}, {1.0, -1.0}));
    Tape t(false);
    Var out = t.relu(t.param(w));
    CHECK(t.val(out)[0] == 1.0);
    CHECK(t.val(out)[1] == 0.0);
}
