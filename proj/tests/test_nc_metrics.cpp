#include "oracle.hpp"

#include "ceco/errors.hpp"
#include "ceco/etf.hpp"
#include "ceco/nc_metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

using namespace ceco;

namespace {

FeatureBatch make_batch(std::initializer_list<std::initializer_list<double>> rows, std::vector<int> labels, int K) {
    FeatureBatch b;
    b.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (double v : r) b.features(i, j++) = v;
        ++i;
    }
    b.labels = std::move(labels);
    b.num_classes = K;
    return b;
}

Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    return make_batch(rows, std::vector<int>(rows.size(), 0), 1).features;
}

// Every pairwise cosine, enumerated the slow way.
std::vector<double> all_pair_cosines(const Matrix& rows) {
    std::vector<double> c;
    for (Index a = 0; a < rows.rows(); ++a)
        for (Index b = a + 1; b < rows.rows(); ++b)
            c.push_back(oracle::cosine(rows.row(a).transpose(), rows.row(b).transpose()));
    return c;
}

} // namespace

TEST_CASE("class_stats arithmetic") {
    const FeatureBatch b = make_batch({{1, 1}, {3, 3}, {0, 2}}, {0, 0, 1}, 3);
    const ClassStats s = class_stats(b);
    CHECK(s.counts == std::vector<Index>{2, 1, 0});
    CHECK(s.present == std::vector<bool>{true, true, false});
    CHECK(s.num_present() == 2);
    CHECK(s.class_means(0, 0) == 2.0);
    CHECK(s.class_means(0, 1) == 2.0);
    CHECK(s.class_means(1, 0) == 0.0);
    CHECK(s.class_means(1, 1) == 2.0);
    CHECK(s.global_mean(0) == doctest::Approx(4.0 / 3.0));
    CHECK(s.global_mean(1) == doctest::Approx(2.0));
}

TEST_CASE("class_stats edge cases") {
    const ClassStats one = class_stats(make_batch({{1, 2}, {5, 0}}, {1, 1}, 2));
    CHECK(one.class_means.row(1) == one.global_mean.transpose());
    const ClassStats single = class_stats(make_batch({{4, -1}}, {2}, 3));
    CHECK(single.counts == std::vector<Index>{0, 0, 1});
    CHECK(single.class_means(2, 0) == 4.0);
    CHECK(single.class_means(2, 1) == -1.0);
}

TEST_CASE("FeatureBatch validation") {
    CHECK_THROWS(make_batch({{1, 1}}, {3}, 3).validate());
    CHECK_THROWS(make_batch({{1, 1}}, {-1}, 3).validate());
    CHECK_THROWS(make_batch({{1, 1}, {2, 2}}, {0}, 3).validate());
}

TEST_CASE("centered_normalized_means") {
    SUBCASE("two symmetric classes") {
        const NormalizedMeans m = centered_normalized_means(class_stats(make_batch({{1, 0}, {-1, 0}}, {0, 1}, 2)));
        CHECK(m.rows(0, 0) == doctest::Approx(1.0));
        CHECK(m.rows(1, 0) == doctest::Approx(-1.0));
        CHECK(m.classes == std::vector<int>{0, 1});
        CHECK(m.excluded.empty());
    }
    SUBCASE("class at the global mean is excluded") {
        const FeatureBatch b = make_batch({{1, 0}, {-1, 0}, {0, 0}, {0, 3}, {0, -3}}, {0, 1, 2, 3, 3}, 4);
        const NormalizedMeans m = centered_normalized_means(class_stats(b));
        CHECK(m.excluded == std::vector<int>{2, 3});
        CHECK(m.classes == std::vector<int>{0, 1});
    }
    SUBCASE("balanced K=2 gives antipodal rows") {
        std::mt19937_64 gen(3);
        for (int t = 0; t < 20; ++t) {
            FeatureBatch b;
            b.features = oracle::random_matrix(6, 4, gen);
            b.labels = {0, 1, 0, 1, 1, 0};
            b.num_classes = 2;
            const NormalizedMeans m = centered_normalized_means(class_stats(b));
            CHECK((m.rows.row(0) + m.rows.row(1)).norm() <= 1e-12);
        }
    }
    SUBCASE("fewer than two usable classes") {
        CHECK_THROWS_AS(centered_normalized_means(class_stats(make_batch({{1, 0}, {2, 0}}, {0, 0}, 2))),
                        InsufficientClassesError);
    }
}

TEST_CASE("equiangularity_std") {
    CHECK(equiangularity_std(Matrix::Identity(3, 3)) == doctest::Approx(0.0));
    const Matrix v = rows_of({{1, 0}, {0, 1}, {-1, 0}});
    // cosines {0, -1, 0}: mean -1/3, population variance 2/9
    CHECK(equiangularity_std(v) == doctest::Approx(std::sqrt(2.0) / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(equiangularity_std(rows_of({{1, 0}, {0, 2}})), NormalizationError);
    for (int K : {2, 3, 7, 12}) {
        const Matrix etf_rows = make_etf(K + 1, K, 1.0, K).matrix.transpose();
        CHECK(equiangularity_std(etf_rows) <= 1e-10);
        CHECK(max_angle_deviation(etf_rows) <= 1e-10);
    }
}

TEST_CASE("pairwise statistics match enumeration") {
    std::mt19937_64 gen(17);
    for (int t = 0; t < 30; ++t) {
        const Index K = 2 + t % 8;
        const Matrix v = oracle::random_unit_columns(5, K, gen).transpose();
        const std::vector<double> c = all_pair_cosines(v);
        const double mean = std::accumulate(c.begin(), c.end(), 0.0) / c.size();
        double var = 0.0, dev = 0.0;
        for (double x : c) {
            var += (x - mean) * (x - mean);
            dev += std::abs(x + 1.0 / (K - 1));
        }
        CHECK(equiangularity_std(v) == doctest::Approx(std::sqrt(var / c.size())).epsilon(1e-10));
        CHECK(max_angle_deviation(v) == doctest::Approx(dev / c.size()).epsilon(1e-10));
    }
}

TEST_CASE("max_angle_deviation") {
    CHECK(max_angle_deviation(Matrix::Identity(3, 3)) == doctest::Approx(0.5));
    CHECK(max_angle_deviation(rows_of({{0, 1}, {0, -1}})) == doctest::Approx(0.0));
}

TEST_CASE("pairwise statistics are rotation invariant") {
    std::mt19937_64 gen(99);
    for (int t = 0; t < 20; ++t) {
        const Matrix v = oracle::random_unit_columns(6, 5, gen).transpose();
        const Matrix R = oracle::random_orthogonal(6, gen);
        const Matrix rotated = v * R.transpose();
        CHECK(std::abs(equiangularity_std(v) - equiangularity_std(rotated)) <= 1e-10);
        CHECK(std::abs(max_angle_deviation(v) - max_angle_deviation(rotated)) <= 1e-10);
    }
}

TEST_CASE("self_duality_gap") {
    std::mt19937_64 gen(4);
    NormalizedMeans m;
    m.rows = oracle::random_unit_columns(5, 4, gen).transpose();
    m.classes = {0, 1, 2, 3};
    const Matrix W = 3.0 * m.rows.transpose();
    CHECK(self_duality_gap(W, m) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(self_duality_gap(-W, m) == doctest::Approx(2.0).epsilon(1e-12));
    const Matrix noisy = W + 0.1 * oracle::random_matrix(5, 4, gen);
    const double gap = self_duality_gap(noisy, m);
    CHECK(gap > 0.0);
    CHECK(gap <= 2.0);
    Matrix degenerate = W;
    degenerate.col(2).setZero();
    CHECK_THROWS_AS(self_duality_gap(degenerate, m), DegenerateColumnError);
}

TEST_CASE("self_duality_gap pairs rows with their class column") {
    NormalizedMeans m;
    m.rows = rows_of({{1, 0}, {0, 1}});
    m.classes = {2, 0};
    Matrix W(2, 3);
    W << 0, 5, 1,
         1, 5, 0;
    CHECK(self_duality_gap(W, m) == doctest::Approx(0.0));
}

TEST_CASE("imbalance_factor") {
    const std::vector<Index> a{100, 10, 1}, b{5, 5, 5}, c{3, 0, 9};
    CHECK(imbalance_factor(a) == 100.0);
    CHECK(imbalance_factor(b) == 1.0);
    CHECK_THROWS_AS(imbalance_factor(c), ExcludedClassError);
}

TEST_CASE("imbalance_factor is permutation and scale invariant") {
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<Index> dist(1, 500);
    for (int t = 0; t < 50; ++t) {
        std::vector<Index> counts(2 + t % 9);
        for (auto& x : counts) x = dist(gen);
        const double base = imbalance_factor(counts);
        CHECK(base == doctest::Approx(static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                                      *std::min_element(counts.begin(), counts.end())));
        std::shuffle(counts.begin(), counts.end(), gen);
        CHECK(imbalance_factor(counts) == base);
        for (auto& x : counts) x *= 7;
        CHECK(imbalance_factor(counts) == doctest::Approx(base).epsilon(1e-15));
    }
}

TEST_CASE("pearson") {
    const std::vector<double> a{1, 2, 3}, up{2, 4, 6}, down{3, 2, 1}, flat{4, 4, 4};
    CHECK(pearson(a, up) == doctest::Approx(1.0));
    CHECK(pearson(a, down) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(pearson(a, flat), UndefinedCorrelationError);
    CHECK_THROWS_AS(pearson(flat, a), UndefinedCorrelationError);
    const std::vector<double> one{1};
    CHECK_THROWS(pearson(one, one));
}

TEST_CASE("pearson under affine maps") {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a(10), f(10), pos(10), neg(10);
        for (int i = 0; i < 10; ++i) {
            a[i] = nd(gen);
            f[i] = nd(gen) + 0.3 * a[i];
        }
        const double c = 0.5 + std::abs(nd(gen)), b = nd(gen);
        for (int i = 0; i < 10; ++i) {
            pos[i] = c * f[i] + b;
            neg[i] = -c * f[i] + b;
        }
        const double r = pearson(a, f);
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
        CHECK(std::abs(pearson(a, pos) - r) <= 1e-12);
        CHECK(std::abs(pearson(a, neg) + r) <= 1e-12);
    }
}

TEST_CASE("head_common_tail_split") {
    SUBCASE("K=9 strictly decreasing") {
        const std::vector<Index> c{90, 80, 70, 60, 50, 40, 30, 20, 10};
        const ClassSplit s = head_common_tail_split(c);
        CHECK(s.head == std::vector<int>{0, 1, 2});
        CHECK(s.common == std::vector<int>{3, 4, 5});
        CHECK(s.tail == std::vector<int>{6, 7, 8});
    }
    SUBCASE("K=200 mirrors 66/68/66") {
        std::vector<Index> c(200);
        std::iota(c.rbegin(), c.rend(), 1);
        const ClassSplit s = head_common_tail_split(c);
        CHECK(s.head.size() == 66);
        CHECK(s.common.size() == 68);
        CHECK(s.tail.size() == 66);
    }
    SUBCASE("K=4") {
        const std::vector<Index> c{1, 2, 3, 4};
        const ClassSplit s = head_common_tail_split(c);
        CHECK(s.head == std::vector<int>{3});
        CHECK(s.common == std::vector<int>{2, 1});
        CHECK(s.tail == std::vector<int>{0});
    }
    SUBCASE("ties by ascending index") {
        const std::vector<Index> c{5, 5, 5};
        const ClassSplit s = head_common_tail_split(c);
        CHECK(s.head == std::vector<int>{0});
        CHECK(s.common == std::vector<int>{1});
        CHECK(s.tail == std::vector<int>{2});
    }
    SUBCASE("too few classes") {
        const std::vector<Index> c{5, 4};
        CHECK_THROWS_AS(head_common_tail_split(c), SplitError);
    }
}

TEST_CASE("head_common_tail_split is a frequency-ordered partition") {
    std::mt19937_64 gen(21);
    std::uniform_int_distribution<Index> dist(1, 40);
    for (int K = 3; K <= 60; ++K) {
        std::vector<Index> c(K);
        for (auto& x : c) x = dist(gen);
        const ClassSplit s = head_common_tail_split(c);
        std::set<int> all;
        for (const auto* g : {&s.head, &s.common, &s.tail}) all.insert(g->begin(), g->end());
        CHECK(all.size() == static_cast<std::size_t>(K));
        CHECK(s.head.size() + s.common.size() + s.tail.size() == static_cast<std::size_t>(K));
        CHECK(*all.begin() == 0);
        CHECK(*all.rbegin() == K - 1);
        CHECK(s.head.size() == s.tail.size());
        for (int h : s.head)
            for (int t : s.tail) CHECK(c[h] >= c[t]);
    }
}

TEST_CASE("analyze_features and its JSON") {
    std::mt19937_64 gen(31);
    const int K = 5;
    FeatureBatch b;
    b.features = oracle::random_matrix(40, 6, gen);
    b.labels.resize(40);
    b.num_classes = K;
    for (int i = 0; i < 40; ++i) b.labels[i] = i % K;
    const Matrix W = oracle::random_matrix(6, K, gen);

    const NcReport plain = analyze_features(b);
    CHECK(plain.n_classes_used == K);
    CHECK_FALSE(plain.self_duality_gap.has_value());
    CHECK(to_json(plain).find("self_duality_gap") == std::string::npos);

    const NcReport full = analyze_features(b, &W);
    REQUIRE(full.self_duality_gap.has_value());
    CHECK(full.equiang_std_centers == plain.equiang_std_centers);
    const NcReport back = nc_report_from_json(to_json(full));
    CHECK(back.equiang_std_centers == full.equiang_std_centers);
    CHECK(back.maxangle_avg_centers == full.maxangle_avg_centers);
    CHECK(*back.equiang_std_classifier == *full.equiang_std_classifier);
    CHECK(*back.maxangle_avg_classifier == *full.maxangle_avg_classifier);
    CHECK(*back.self_duality_gap == *full.self_duality_gap);
    CHECK(back.n_classes_used == full.n_classes_used);
}

TEST_CASE("analyze_features on means that already form a frame") {
    const int K = 6;
    const Matrix M = make_etf(8, K, 2.0, 3).matrix;
    FeatureBatch b;
    b.features.resize(3 * K, 8);
    b.num_classes = K;
    for (int k = 0; k < K; ++k)
        for (int r = 0; r < 3; ++r) {
            b.features.row(3 * k + r) = M.col(k).transpose();
            b.labels.push_back(k);
        }
    const NcReport r = analyze_features(b, &M);
    CHECK(r.equiang_std_centers <= 1e-8);
    CHECK(r.maxangle_avg_centers <= 1e-8);
    CHECK(*r.self_duality_gap <= 1e-8);
}

TEST_CASE("feature dump round trip and errors") {
    FeatureBatch b;
    b.features = rows_of({{0.1, -2}, {3, 1e-9}, {5, 6}});
    b.labels = {2, 0, 1};
    b.num_classes = 3;
    std::stringstream ss;
    write_feature_dump(ss, b);
    CHECK(ss.str().rfind("3 2 3\n3 ", 0) == 0);
    const FeatureBatch back = read_feature_dump(ss);
    CHECK(back.features == b.features);
    CHECK(back.labels == b.labels);
    CHECK(back.num_classes == 3);

    auto line_of = [](const std::string& text) -> std::size_t {
        std::stringstream in(text);
        try {
            read_feature_dump(in);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 0;
    };
    CHECK(line_of("2 2 2\n1 0 0\n") == 3);
    CHECK(line_of("2 2 2\n1 0 0\n3 1 1\n") == 3);
    CHECK(line_of("2 2 2\n1 0\n2 1 1\n") == 2);
    CHECK(line_of("2 2 2\n1 0 nan?\n2 1 1\n") == 2);
    CHECK(line_of("two 2 2\n") == 1);
}
