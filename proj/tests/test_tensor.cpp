#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "ugwt/tensor.hpp"

using namespace ugwt;

TEST_CASE("mode-2 unfolding, degenerate 1x1x1", "[tensor]") {
    Tensor3 t(1, 1, 1);
    t(0, 0, 0) = 42.5;
    Matrix m = unfold_mode2(t);
    REQUIRE(m.rows == 1);
    REQUIRE(m.cols == 1);
    REQUIRE(m(0, 0) == 42.5);
}

TEST_CASE("mode-2 unfolding matches the documented column order", "[tensor]") {
    // single slice [[1,2,3],[4,5,6]] -> columns are the two rows
    Tensor3 t(2, 3, 1);
    const double vals[2][3] = {{1, 2, 3}, {4, 5, 6}};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) t(r, c, 0) = vals[r][c];
    Matrix m = unfold_mode2(t);
    REQUIRE(m.rows == 3);
    REQUIRE(m.cols == 2);
    const double want[3][2] = {{1, 4}, {2, 5}, {3, 6}};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) CHECK(m(r, c) == want[r][c]);

    Tensor3 back = fold_mode2(m, 2, 3, 1);
    CHECK(back == t);
}

TEST_CASE("fold is the exact inverse of unfold", "[tensor]") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const int i1 = 1 + static_cast<int>(rng.next_u64() % 5);
        const int i2 = 1 + static_cast<int>(rng.next_u64() % 7);
        const int i3 = 1 + static_cast<int>(rng.next_u64() % 6);
        Tensor3 t = oracle::random_tensor(i1, i2, i3, rng);
        Matrix m = unfold_mode2(t);
        REQUIRE(m.rows == i2);
        REQUIRE(m.cols == i1 * i3);
        CHECK(fold_mode2(m, i1, i2, i3) == t);
    }
}

TEST_CASE("fold rejects mismatched dims and maps zeros to zeros", "[tensor]") {
    Matrix m(3, 2);
    CHECK_THROWS_AS(fold_mode2(m, 2, 3, 2), ShapeError);
    Tensor3 z = fold_mode2(m, 2, 3, 1);
    for (double v : z.v) CHECK(v == 0.0);
}

TEST_CASE("mode-2 product: identity, row-of-ones, annihilator", "[tensor]") {
    Rng rng(7);
    Tensor3 t = oracle::random_tensor(3, 4, 2, rng);
    CHECK(mode2_product(t, Matrix::identity(4)) == t);

    Tensor3 pair(1, 2, 1);
    pair(0, 0, 0) = 3;
    pair(0, 1, 0) = 4;
    Matrix ones(1, 2);
    ones(0, 0) = ones(0, 1) = 1.0;
    Tensor3 dot = mode2_product(pair, ones);
    REQUIRE(dot.i1 == 1);
    REQUIRE(dot.i2 == 1);
    REQUIRE(dot.i3 == 1);
    CHECK(dot(0, 0, 0) == 7.0);

    Matrix zeros(2, 4);
    Tensor3 z = mode2_product(t, zeros);
    for (double v : z.v) CHECK(v == 0.0);

    Matrix bad(2, 5);
    CHECK_THROWS_AS(mode2_product(t, bad), ShapeError);
}

TEST_CASE("mode-2 product is linear", "[tensor]") {
    Rng rng(19);
    Tensor3 t = oracle::random_tensor(2, 5, 3, rng);
    Matrix b1(3, 5), b2(3, 5);
    for (double& v : b1.v) v = 2.0 * rng.uniform() - 1.0;
    for (double& v : b2.v) v = 2.0 * rng.uniform() - 1.0;
    const double alpha = 0.7, beta = -1.3;
    Matrix combo(3, 5);
    for (std::size_t i = 0; i < combo.v.size(); ++i)
        combo.v[i] = alpha * b1.v[i] + beta * b2.v[i];
    Tensor3 lhs = mode2_product(t, combo);
    Tensor3 r1 = mode2_product(t, b1), r2 = mode2_product(t, b2);
    for (std::size_t i = 0; i < lhs.v.size(); ++i)
        CHECK(std::abs(lhs.v[i] - (alpha * r1.v[i] + beta * r2.v[i])) < 1e-12);
}

TEST_CASE("slice and stack round trip, order preserved", "[tensor]") {
    Rng rng(3);
    Matrix a(2, 3), b(2, 3);
    for (double& v : a.v) v = rng.uniform();
    for (double& v : b.v) v = rng.uniform();

    Tensor3 single = stack({a});
    CHECK(slice(single, 0) == a);

    Tensor3 both = stack({a, b});
    CHECK(slice(both, 0) == a);
    CHECK(slice(both, 1) == b);
    CHECK_THROWS_AS(slice(both, 2), ShapeError);

    Matrix odd(3, 3);
    CHECK_THROWS_AS(stack({a, odd}), ShapeError);
}

TEST_CASE("stacking a full joint image set yields the documented dims", "[tensor][heavy]") {
    // 1600 source + 800 target slices of 7 x 10568
    std::vector<Matrix> slices(2400, Matrix(7, 10568));
    Tensor3 t = stack(slices);
    CHECK(t.i1 == 7);
    CHECK(t.i2 == 10568);
    CHECK(t.i3 == 2400);
}
