#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "stpformer/embedding.hpp"
#include "stpformer/errors.hpp"
#include "test_util.hpp"

using namespace stpformer;

TEST_CASE("days_from_civil matches known calendar anchors") {
    CHECK(days_from_civil(1970, 1, 1) == 0);
    CHECK(days_from_civil(1970, 1, 2) == 1);
    CHECK(days_from_civil(1969, 12, 31) == -1);
    CHECK(days_from_civil(2000, 3, 1) == 11017);
    CHECK(days_from_civil(2016, 7, 4) == 16986);
    // 1970-01-01 was a Thursday; 2016-07-04 a Monday
    CHECK((days_from_civil(1970, 1, 1) + 3) % 7 == 3);
    CHECK((days_from_civil(2016, 7, 4) + 3) % 7 == 0);
}

TEST_CASE("periodic indices walk the week and day cycles") {
    TimestampMeta meta; // Monday 2016-07-04 00:00, 5 minute cadence
    CHECK(meta.steps_per_day() == 288);
    CHECK(meta.steps_per_week() == 2016);

    CHECK(periodic_indices(meta, 0) == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(periodic_indices(meta, 300) == std::pair<std::size_t, std::size_t>{1, 12});
    CHECK(periodic_indices(meta, 287) == std::pair<std::size_t, std::size_t>{0, 287});
    CHECK(periodic_indices(meta, 288) == std::pair<std::size_t, std::size_t>{1, 0});
    CHECK(periodic_indices(meta, 2016) == std::pair<std::size_t, std::size_t>{0, 0});

    TimestampMeta late = meta;
    late.hour = 1; // offset of 12 steps into the day
    CHECK(periodic_indices(late, 0) == std::pair<std::size_t, std::size_t>{0, 12});
    CHECK(periodic_indices(late, 2016 - 12) == std::pair<std::size_t, std::size_t>{0, 0});

    TimestampMeta wed = meta;
    wed.day = 6; // 2016-07-06, a Wednesday
    CHECK(periodic_indices(wed, 0).first == 2);

    TimestampMeta taxi = meta;
    taxi.interval_minutes = 30;
    CHECK(taxi.steps_per_day() == 48);

    CHECK_THROWS_AS(periodic_indices(meta, -1), InputError);
}

TEST_CASE("timestamp validation rejects off-grid and malformed fields") {
    TimestampMeta ok;
    CHECK_NOTHROW(ok.validate());

    TimestampMeta bad = ok;
    bad.interval_minutes = 7; // does not divide 1440
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.interval_minutes = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.month = 13;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.minute = 3; // not on the 5 minute grid
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sinusoidal position rows follow the paired sin/cos formula") {
    Tensor pe = sinusoidal_pe(4, 6);
    REQUIRE(pe.shape() == Shape{4, 6});
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(pe.at(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
    CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848078965).epsilon(1e-14));
    CHECK(pe.at(1, 2) == doctest::Approx(0.002154433023).epsilon(1e-8));
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(pe.at(t, 1) == doctest::Approx(std::cos(double(t))).epsilon(1e-14));
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(pe.at(t, i) <= 1.0);
            CHECK(pe.at(t, i) >= -1.0);
        }
        // each even/odd column pair shares a frequency
        for (std::size_t j = 0; j + 1 < 6; j += 2) {
            double s = pe.at(t, j), c = pe.at(t, j + 1);
            CHECK(s * s + c * c == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    // row t depends only on t and D
    Tensor longer = sinusoidal_pe(10, 6);
    CHECK(std::memcmp(pe.data(), longer.data(), sizeof(double) * pe.size()) == 0);
}

TEST_CASE("spectral projection is affine in the basis") {
    Rng rng(31);
    ParameterStore ps;
    EmbeddingParams p = make_embedding_params(ps, "embed", 1, 4, 3, 12, rng);
    Tensor u = testutil::rand_uniform(rng, {5, 3});

    SUBCASE("zero weight leaves only the bias") {
        ps.at("embed.w_spe").value = Tensor({3, 4});
        ps.at("embed.b_spe").value = Tensor({4}, {0.5, -1.0, 2.0, 0.0});
        Tape t;
        Tensor out = t.val(spectral_embed(t, u, p));
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(out.at(i, 0) == 0.5);
            CHECK(out.at(i, 1) == -1.0);
            CHECK(out.at(i, 2) == 2.0);
            CHECK(out.at(i, 3) == 0.0);
        }
    }
    SUBCASE("identity weight with zero bias reproduces the basis") {
        ParameterStore ps2;
        Rng rng2(32);
        EmbeddingParams p2 = make_embedding_params(ps2, "embed", 1, 3, 3, 12, rng2);
        Tensor eye({3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
        ps2.at("embed.w_spe").value = eye;
        ps2.at("embed.b_spe").value = Tensor({3});
        Tape t;
        Tensor out = t.val(spectral_embed(t, u, p2));
        CHECK(ops::max_abs_diff(out, u) == 0.0);
    }
    SUBCASE("random weight matches the direct matrix product") {
        Tape t;
        Tensor out = t.val(spectral_embed(t, u, p));
        Tensor want = ops::matmul(u, ps.at("embed.w_spe").value);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(out.at(i, j) ==
                      doctest::Approx(want.at(i, j) + ps.at("embed.b_spe").value[j])
                          .epsilon(1e-15));
    }
    SUBCASE("basis column mismatch is a dimension error") {
        Tape t;
        Tensor narrow = testutil::rand_uniform(rng, {5, 2});
        CHECK_THROWS_AS(spectral_embed(t, narrow, p), DimensionError);
    }
}

TEST_CASE("integration broadcasts each part along its stated axes") {
    Rng rng(5);
    std::size_t b = 2, m = 3, n = 4, width = 5;
    Tensor x = testutil::rand_uniform(rng, {b, m, n, width});
    Tensor zero_spe({n, width}), zero_bm({b, m, width}), zero_m({m, width});

    SUBCASE("all side parts zero leaves the data untouched") {
        Tape t;
        Tensor out = t.val(integrate_embeddings(t, t.constant(x), t.constant(zero_spe),
                                                t.constant(zero_bm), t.constant(zero_bm),
                                                t.constant(zero_m)));
        CHECK(std::memcmp(out.data(), x.data(), sizeof(double) * x.size()) == 0);
    }
    SUBCASE("spectral-only input repeats identically at every time step") {
        Tensor spe = testutil::rand_uniform(rng, {n, width});
        Tape t;
        Tensor out = t.val(integrate_embeddings(t, t.constant(Tensor({b, m, n, width})),
                                                t.constant(spe), t.constant(zero_bm),
                                                t.constant(zero_bm), t.constant(zero_m)));
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t ti = 0; ti < m; ++ti)
                for (std::size_t ni = 0; ni < n; ++ni)
                    for (std::size_t di = 0; di < width; ++di)
                        CHECK(out.at(bi, ti, ni, di) == spe.at(ni, di));
    }
    SUBCASE("temporal parts are constant across nodes") {
        Tensor week = testutil::rand_uniform(rng, {b, m, width});
        Tape t;
        Tensor out = t.val(integrate_embeddings(t, t.constant(Tensor({b, m, n, width})),
                                                t.constant(zero_spe), t.constant(week),
                                                t.constant(zero_bm), t.constant(zero_m)));
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t ti = 0; ti < m; ++ti)
                for (std::size_t ni = 0; ni < n; ++ni)
                    for (std::size_t di = 0; di < width; ++di)
                        CHECK(out.at(bi, ti, ni, di) == week.at(bi, ti, di));
    }
    SUBCASE("shape mismatches are rejected") {
        Tape t;
        CHECK_THROWS_AS(integrate_embeddings(t, t.constant(x),
                                             t.constant(Tensor({n + 1, width})),
                                             t.constant(zero_bm), t.constant(zero_bm),
                                             t.constant(zero_m)),
                        DimensionError);
    }
}

TEST_CASE("window embedding honours the full shape contract") {
    Rng rng(9);
    ParameterStore ps;
    std::size_t n = 170, width = 32, k = 8, m = 12;
    EmbeddingParams p = make_embedding_params(ps, "embed", 1, width, k, 288, rng);
    TimestampMeta meta;
    Tensor u = testutil::rand_uniform(rng, {n, k});
    Tensor x = testutil::rand_uniform(rng, {1, m, n, 1});
    Tape t;
    Var emb = embed_window_batch(t, x, {0}, meta, u, p);
    CHECK(t.val(emb).shape() == Shape{1, m, n, width});
    CHECK(ops::all_finite(t.val(emb)));
}

TEST_CASE("windows a whole number of weeks apart embed identically") {
    Rng rng(10);
    ParameterStore ps;
    std::size_t n = 3, width = 8, k = 2, m = 4;
    TimestampMeta meta;
    EmbeddingParams p = make_embedding_params(ps, "embed", 2, width, k, meta.steps_per_day(), rng);
    Tensor u = testutil::rand_uniform(rng, {n, k});
    Tensor frame = testutil::rand_uniform(rng, {1, m, n, 2});
    Tensor x({2, m, n, 2});
    std::memcpy(x.data(), frame.data(), sizeof(double) * frame.size());
    std::memcpy(x.data() + frame.size(), frame.data(), sizeof(double) * frame.size());

    Tape t;
    Tensor out = t.val(embed_window_batch(
        t, x, {5, 5 + static_cast<long>(meta.steps_per_week())}, meta, u, p));
    // lookup determinism: same data + same periodic indices -> identical rows
    std::size_t half = out.size() / 2;
    CHECK(std::memcmp(out.data(), out.data() + half, sizeof(double) * half) == 0);
}

TEST_CASE("embedding gradients match finite differences") {
    Rng rng(21);
    ParameterStore ps;
    TimestampMeta meta;
    meta.interval_minutes = 480; // 3 steps per day keeps the table small
    std::size_t n = 2, width = 4, k = 2, m = 2, d_in = 2;
    EmbeddingParams p = make_embedding_params(ps, "embed", d_in, width, k, meta.steps_per_day(), rng);
    Tensor u = testutil::rand_uniform(rng, {n, k});
    Tensor x = testutil::rand_uniform(rng, {1, m, n, d_in});

    auto loss = [&](Tape& t) {
        Var emb = embed_window_batch(t, x, {1}, meta, u, p);
        return t.mean_all(t.mul(emb, emb));
    };
    CHECK(testutil::fd_max_rel_err(ps, loss) < 1e-6);

    // only visited rows of the day table receive gradient: steps 1,2 of 0..2
    ps.zero_grads();
    {
        Tape t;
        t.backward(loss(t));
    }
    const Tensor& g = ps.at("embed.table_day").grad;
    double row0 = 0.0, row12 = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
        row0 += std::fabs(g.at(0, j));
        row12 += std::fabs(g.at(1, j)) + std::fabs(g.at(2, j));
    }
    CHECK(row0 == 0.0);
    CHECK(row12 > 0.0);
}
