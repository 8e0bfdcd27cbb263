#include "oracle.hpp"

#include "ceco/errors.hpp"
#include "ceco/etf.hpp"

#include <doctest.h>

#include <sstream>

using namespace ceco;

namespace {

Matrix gram(const Matrix& W) { return W.transpose() * W; }

}

TEST_CASE("make_rotation gives orthonormal columns") {
    for (auto [d, K] : {std::pair{4, 4}, {3, 2}, {12, 5}}) {
        const OrthonormalBasis U = make_rotation(d, K, 7);
        CHECK(U.dim() == d);
        CHECK(U.classes() == K);
        CHECK((gram(U.columns) - Matrix::Identity(K, K)).cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK_THROWS_AS(make_rotation(2, 3, 0), DimensionError);
}

TEST_CASE("make_rotation is deterministic per seed") {
    CHECK(make_rotation(6, 4, 3).columns == make_rotation(6, 4, 3).columns);
    CHECK(make_rotation(6, 4, 3).columns != make_rotation(6, 4, 4).columns);
}

TEST_CASE("make_etf small cases") {
    SUBCASE("d=3 K=3") {
        const Matrix G = gram(make_etf(3, 3, 1.0, 0).matrix);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(G(i, j) == doctest::Approx(i == j ? 1.0 : -0.5).epsilon(1e-12));
    }
    SUBCASE("K=2 is antipodal") {
        const Matrix W = make_etf(2, 2, 1.0, 5).matrix;
        CHECK(oracle::cosine(W.col(0), W.col(1)) == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("alpha scales norms and inner products") {
        const Matrix G = gram(make_etf(5, 4, 2.0, 9).matrix);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(std::abs(G(i, j) - (i == j ? 4.0 : -4.0 / 3.0)) <= 1e-10);
    }
}

TEST_CASE("make_etf preconditions") {
    CHECK_THROWS_AS(make_etf(4, 1, 1.0, 0), DomainError);
    CHECK_THROWS_AS(make_etf(3, 5, 1.0, 0), DimensionError);
    CHECK_THROWS_AS(make_etf(5, 3, 0.0, 0), DomainError);
    CHECK_THROWS_AS(make_etf(5, 3, -1.0, 0), DomainError);
}

TEST_CASE("verify_etf") {
    const EtfCheckReport good = verify_etf(make_etf(4, 3, 1.0, 11).matrix, 1e-8);
    CHECK(good.is_etf);
    CHECK(good.max_norm_deviation <= 1e-10);
    CHECK(good.max_offdiag_deviation <= 1e-10);
    CHECK(good.max_pairwise_cosine == doctest::Approx(-0.5).epsilon(1e-10));

    const EtfCheckReport eye = verify_etf(Matrix::Identity(3, 3), 1e-8);
    CHECK_FALSE(eye.is_etf);
    CHECK(eye.max_pairwise_cosine == doctest::Approx(0.0));

    Matrix zero_col = make_etf(4, 3, 1.0, 1).matrix;
    zero_col.col(1).setZero();
    CHECK_THROWS_AS(verify_etf(zero_col, 1e-8), DegenerateColumnError);
    CHECK_THROWS_AS(verify_etf(Matrix::Ones(3, 1), 1e-8), DomainError);
}

TEST_CASE("verify_etf accepts any alpha but rejects unequal norms") {
    Matrix W = make_etf(8, 5, 3.5, 2).matrix;
    CHECK(verify_etf(W).is_etf);
    W.col(0) *= 1.01;
    const EtfCheckReport r = verify_etf(W);
    CHECK_FALSE(r.is_etf);
    CHECK(r.max_norm_deviation > 1e-3);
}

TEST_CASE("max_pairwise_cosine") {
    CHECK(max_pairwise_cosine(make_etf(7, 5, 1.0, 3).matrix) == doctest::Approx(-0.25).epsilon(1e-10));
    Matrix twins(3, 2);
    twins << 1, 1, 2, 2, 0, 0;
    CHECK(max_pairwise_cosine(twins) == doctest::Approx(1.0));
    Matrix zero = Matrix::Zero(3, 2);
    CHECK_THROWS_AS(max_pairwise_cosine(zero), DegenerateColumnError);
}

TEST_CASE("max_pairwise_cosine agrees with brute force and respects the separation bound") {
    std::mt19937_64 gen(2024);
    for (int t = 0; t < 1000; ++t) {
        const Matrix W = oracle::random_unit_columns(6, 4, gen);
        const double m = max_pairwise_cosine(W);
        CHECK(m == doctest::Approx(oracle::brute_max_cosine(W)).epsilon(1e-12));
        CHECK(m >= -1.0 / 3.0);
    }
}

TEST_CASE("frame report is invariant under rotation") {
    std::mt19937_64 gen(5);
    for (int t = 0; t < 10; ++t) {
        Matrix W = make_etf(9, 6, 1.5, t).matrix;
        W += 1e-3 * oracle::random_matrix(9, 6, gen);
        const Matrix R = oracle::random_orthogonal(9, gen);
        const EtfCheckReport a = verify_etf(W, 1e-8);
        const EtfCheckReport b = verify_etf(R * W, 1e-8);
        CHECK(std::abs(a.max_norm_deviation - b.max_norm_deviation) <= 1e-10);
        CHECK(std::abs(a.max_offdiag_deviation - b.max_offdiag_deviation) <= 1e-10);
        CHECK(std::abs(a.max_pairwise_cosine - b.max_pairwise_cosine) <= 1e-10);
        CHECK(a.is_etf == b.is_etf);
    }
}

TEST_CASE("pairwise squared distances of a unit frame") {
    for (int K : {2, 3, 10}) {
        const Matrix D = pairwise_squared_distances(make_etf(K + 2, K, 1.0, 4).matrix);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
                if (i != j) CHECK(std::abs(D(i, j) - 2.0 * K / (K - 1)) <= 1e-10);
    }
}

TEST_CASE("frame text round trip") {
    const EtfFrame f = make_etf(6, 4, 1.25, 8);
    std::stringstream ss;
    write_frame(ss, f);
    const EtfFrame g = read_frame(ss);
    CHECK(g.alpha == f.alpha);
    CHECK(g.matrix == f.matrix);
}

TEST_CASE("frame reader reports the bad line") {
    std::stringstream ss("3 2 1\n1 2\n3 x\n5 6\n");
    try {
        read_frame(ss);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::stringstream truncated("3 2 1\n1 2\n");
    CHECK_THROWS_AS(read_frame(truncated), ParseError);
}
