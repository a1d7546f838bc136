#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "mfals/data.hpp"
#include "mfals/error.hpp"
#include "mfals/gram.hpp"
#include "oracle.hpp"

using namespace mfals;

namespace {

SparseRatings random_ratings(std::size_t m, std::size_t n, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(density);
    std::uniform_real_distribution<float> val(1.0f, 5.0f);
    std::vector<RatingTriple> t;
    for (index_t u = 0; u < m; ++u) {
        for (index_t v = 0; v < n; ++v) {
            if (keep(rng)) {
                t.push_back({u, v, val(rng)});
            }
        }
    }
    return SparseRatings::build(t, m, n);
}

oracle::Mat as_dense(const GramSystem& g) {
    return oracle::dense_from_row_major(g.dense(), g.f());
}

}  // namespace

TEST(Hermitian, SingleUnitOuterProduct) {
    const std::vector<RatingTriple> t{{0, 0, 4.0f}};
    const SparseRatings r = SparseRatings::build(t, 1, 1);
    const FactorMatrix theta(1, 3, {1.0f, 0.0f, 0.0f});
    const GramSystem a = get_hermitian(r.by_row(), 0, theta, 0.05f);
    const std::vector<float> want{1.05f, 0, 0, 0, 0.05f, 0, 0, 0, 0.05f};
    EXPECT_EQ(a.dense(), want);
    EXPECT_EQ(a.count(), 1u);
    EXPECT_EQ(a.lower().size(), 6u);
}

TEST(Hermitian, SelectedRowsMatchDenseOracle) {
    const std::vector<RatingTriple> t{{0, 0, 1.0f}, {0, 2, 2.0f}, {0, 4, 3.0f}};
    const SparseRatings r = SparseRatings::build(t, 1, 5);
    const FactorMatrix theta = FactorMatrix::random_uniform(5, 3, 1.0f, 17);
    const float lambda = 0.05f;
    const GramSystem a = get_hermitian(r.by_row(), 0, theta, lambda);
    const std::vector<index_t> rows{0, 2, 4};
    const oracle::Mat want = oracle::dense_gram(theta, rows, 3.0 * lambda);
    EXPECT_LE(oracle::rel_frobenius(as_dense(a), want), 1e-6);
}

TEST(Hermitian, PlainRegularization) {
    const std::vector<RatingTriple> t{{0, 0, 1.0f}, {0, 1, 1.0f}};
    const SparseRatings r = SparseRatings::build(t, 1, 2);
    const FactorMatrix theta(2, 1, {1.0f, 2.0f});
    EXPECT_FLOAT_EQ(get_hermitian(r.by_row(), 0, theta, 0.5f, {1, 1}, Precision::fp32,
                                  Regularization::plain)
                        .a(0, 0),
                    5.5f);
    EXPECT_FLOAT_EQ(get_hermitian(r.by_row(), 0, theta, 0.5f, {1, 1}).a(0, 0), 6.0f);
}

TEST(Hermitian, TileGridAgainstDenseOracle) {
    for (std::size_t f : {1u, 5u, 16u, 37u}) {
        const SparseRatings r = random_ratings(12, 90, 0.4, f);
        const FactorMatrix theta = FactorMatrix::random_uniform(90, f, 1.0f, 100 + f);
        const CompressedView rows = r.by_row();
        for (std::size_t tile : {std::size_t{1}, std::size_t{4}, f}) {
            if (tile > f) {
                continue;
            }
            for (std::size_t batch : {1u, 8u, 32u}) {
                const TileConfig cfg{tile, batch};
                for (std::size_t u = 0; u < r.rows(); ++u) {
                    const GramSystem a = get_hermitian(rows, u, theta, 0.05f, cfg);
                    const oracle::Mat want =
                        oracle::dense_gram(theta, rows.inner_of(u), 0.05 * rows.count(u));
                    EXPECT_LE(oracle::rel_frobenius(as_dense(a), want), 1e-5)
                        << "f=" << f << " tile=" << tile << " batch=" << batch;
                }
            }
        }
    }
}

TEST(Hermitian, TileAndBatchInvariance) {
    const std::size_t f = 24;
    const SparseRatings r = random_ratings(6, 200, 0.5, 3);
    const FactorMatrix theta = FactorMatrix::random_uniform(200, f, 1.0f, 4);
    for (std::size_t u = 0; u < r.rows(); ++u) {
        const GramSystem ref = get_hermitian(r.by_row(), u, theta, 0.05f, {f, 64});
        for (std::size_t tile : {1u, 3u, 8u, 24u}) {
            for (std::size_t batch : {1u, 7u, 32u}) {
                const GramSystem a = get_hermitian(r.by_row(), u, theta, 0.05f, {tile, batch});
                EXPECT_LE(oracle::rel_frobenius(as_dense(a), as_dense(ref)), 1e-6);
            }
        }
    }
}

TEST(Hermitian, PositiveDefiniteWithShift) {
    // Fewer ratings than factors: the data term is rank deficient.
    const std::size_t f = 20;
    const SparseRatings r = random_ratings(10, 30, 0.2, 8);
    const FactorMatrix theta = FactorMatrix::random_uniform(30, f, 1.0f, 9);
    for (std::size_t u = 0; u < r.rows(); ++u) {
        const std::size_t nu = r.by_row().count(u);
        if (nu == 0) {
            continue;
        }
        const GramSystem a = get_hermitian(r.by_row(), u, theta, 0.05f);
        Eigen::SelfAdjointEigenSolver<oracle::Mat> es(as_dense(a));
        EXPECT_GE(es.eigenvalues().minCoeff(), 0.05 * static_cast<double>(nu) * (1 - 1e-4));
    }
}

TEST(Hermitian, EmptyRowFlagged) {
    const std::vector<RatingTriple> t{{1, 0, 1.0f}};
    const SparseRatings r = SparseRatings::build(t, 2, 1);
    const FactorMatrix theta(1, 4, {1, 2, 3, 4});
    const GramSystem a = get_hermitian(r.by_row(), 0, theta, 0.05f);
    EXPECT_TRUE(a.empty());
}

TEST(Hermitian, WeightsAndBase) {
    const std::size_t f = 6;
    const FactorMatrix fixed = FactorMatrix::random_uniform(10, f, 1.0f, 2);
    const std::vector<index_t> cols{1, 4, 7};
    const std::vector<float> w{0.5f, 2.0f, 3.0f};
    std::vector<float> base(packed_size(f));
    for (std::size_t i = 0; i < base.size(); ++i) {
        base[i] = 0.01f * static_cast<float>(i);
    }
    GramAssembler asmb(f, {4, 2});
    GramSystem out(f);
    asmb.assemble(cols, w, fixed, base, 0.25f, Precision::fp32, out);

    const oracle::Mat t = oracle::to_mat(fixed);
    oracle::Mat want = 0.25 * oracle::Mat::Identity(f, f);
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const oracle::Vec v = t.row(cols[k]).transpose();
        want += w[k] * v * v.transpose();
    }
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            want(i, j) += base[packed_index(i, j)];
            if (i != j) {
                want(j, i) += base[packed_index(i, j)];
            }
        }
    }
    EXPECT_LE(oracle::rel_frobenius(as_dense(out), want), 1e-6);
    EXPECT_EQ(out.count(), 3u);
}

TEST(Hermitian, RejectsBadConfig) {
    EXPECT_THROW((GramAssembler(8, {0, 8})), ConfigError);
    EXPECT_EQ(GramAssembler(3, {8, 8}).config().tile, 3u);
    EXPECT_THROW((GramAssembler(8, {4, 0})), ConfigError);
    const SparseRatings r = random_ratings(2, 2, 1.0, 1);
    EXPECT_THROW(get_hermitian(r.by_row(), 0, FactorMatrix(2, 2), -1.0f), ConfigError);
}

TEST(Bias, Examples) {
    const std::vector<RatingTriple> t{{1, 0, 2.0f}};
    const SparseRatings r = SparseRatings::build(t, 2, 1);
    const FactorMatrix theta(1, 3, {1.0f, 0.0f, 1.0f});
    EXPECT_EQ(get_bias(r.by_row(), 0, theta), (std::vector<float>{0, 0, 0}));
    EXPECT_EQ(get_bias(r.by_row(), 1, theta), (std::vector<float>{2, 0, 2}));
}

TEST(Bias, RandomRowMatchesDenseMatvec) {
    const std::size_t f = 32;
    const SparseRatings r = random_ratings(5, 300, 0.3, 21);
    const FactorMatrix theta = FactorMatrix::random_uniform(300, f, 1.0f, 22);
    const oracle::Mat t = oracle::to_mat(theta);
    for (std::size_t u = 0; u < r.rows(); ++u) {
        oracle::Vec ru = oracle::Vec::Zero(300);
        const auto cols = r.by_row().inner_of(u);
        const auto vals = r.by_row().values_of(u);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            ru(cols[k]) = vals[k];
        }
        const oracle::Vec want = t.transpose() * ru;
        EXPECT_LE(oracle::rel_diff(oracle::to_vec(get_bias(r.by_row(), u, theta)), want), 1e-6);
    }
}

TEST(HalfStorage, HalvesBytesAndRoundsEntries) {
    const std::size_t f = 100;
    const SparseRatings r = random_ratings(1, 400, 0.5, 5);
    const FactorMatrix theta = FactorMatrix::random_uniform(400, f, 1.0f, 6);
    const GramSystem a32 = get_hermitian(r.by_row(), 0, theta, 0.05f, {}, Precision::fp32);
    const GramSystem a16 = get_hermitian(r.by_row(), 0, theta, 0.05f, {}, Precision::fp16);
    EXPECT_EQ(a32.a_bytes(), 20200u);
    EXPECT_EQ(a16.a_bytes(), 10100u);
    EXPECT_EQ(a16.lower_half().size(), 5050u);
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            EXPECT_EQ(a16.a(i, j), half_to_float(float_to_half(a32.a(i, j))));
        }
    }
}

TEST(HalfStorage, OverflowRejected) {
    const std::vector<float> full{70000.0f, 0.0f, 0.0f, 1.0f};
    const std::vector<float> b{1.0f, 1.0f};
    EXPECT_THROW(GramSystem::from_dense(2, full, b, Precision::fp16), NumericalError);
}

TEST(Roofline, DegenerateDimension) {
    const HalfUpdateCost c = half_update_cost(10, 123, 1, 6);
    EXPECT_EQ(c.hermitian_flops, 2.0 * 123);
    EXPECT_EQ(c.bias_flops, 2.0 * 123);
}

TEST(Roofline, CountingOracleOnSmallInstance) {
    // Naive Gram and bias loops with every multiply and add counted.
    const std::size_t m = 50, n = 40, f = 7;
    const SparseRatings r = random_ratings(m, n, 0.3, 31);
    const FactorMatrix theta = FactorMatrix::random_uniform(n, f, 1.0f, 32);
    const CompressedView rows = r.by_row();
    double herm = 0.0, bias = 0.0, words_read = 0.0;
    for (std::size_t u = 0; u < m; ++u) {
        std::vector<double> a(packed_size(f), 0.0), b(f, 0.0);
        const auto cols = rows.inner_of(u);
        const auto vals = rows.values_of(u);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto t = theta.row(cols[k]);
            words_read += static_cast<double>(f) + 2.0;  // theta_v, index, value
            for (std::size_t i = 0; i < f; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    a[packed_index(i, j)] += static_cast<double>(t[i]) * t[j];
                    herm += 2.0;
                }
                b[i] += vals[k] * t[i];
                bias += 2.0;
            }
        }
        words_read += static_cast<double>(packed_size(f));  // storing A_u
    }
    const HalfUpdateCost c = half_update_cost(m, r.nnz(), f, 6);
    EXPECT_EQ(c.hermitian_flops, herm);
    EXPECT_EQ(c.bias_flops, bias);
    EXPECT_EQ(c.hermitian_bytes, 4.0 * words_read);
}

TEST(Roofline, ComputeToMemoryRatioTracksF) {
    // Netflix-sized update-X.
    const std::size_t f = 100;
    const RooflineEstimate e = roofline_estimate(480189, 17770, 99072112, f);
    const double cm = e.update_x.hermitian_intensity();
    EXPECT_GT(cm, 0.5 * f);
    EXPECT_LT(cm, 1.5 * f);
    // With many ratings per row the ratio approaches f + 1.
    const HalfUpdateCost dense = half_update_cost(10, 10000000, f, 6);
    EXPECT_NEAR(dense.hermitian_intensity(), f + 1.0, 0.1 * f);
    // SGD stays O(1) flops per word.
    EXPECT_LT(e.sgd_intensity(), 4.0);
}

TEST(Roofline, SolveCostFormulas) {
    const HalfUpdateCost c32 = half_update_cost(10000, 1, 100, 6, Precision::fp32);
    const HalfUpdateCost c16 = half_update_cost(10000, 1, 100, 6, Precision::fp16);
    EXPECT_DOUBLE_EQ(c32.solve_flops_cg, 10000.0 * 6 * (2 * 1e4 + 1e3));
    EXPECT_DOUBLE_EQ(c32.solve_flops_exact, 10000.0 * 1e6 / 3.0);
    EXPECT_DOUBLE_EQ(c16.solve_bytes_cg * 2.0, c32.solve_bytes_cg);
    EXPECT_THROW(roofline_estimate(0, 1, 1, 1), ConfigError);
}
