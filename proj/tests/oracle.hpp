#pragma once

// Independent reference computations for the unit and acceptance tests.
// Everything here runs in double precision through Eigen and never calls the
// library code paths it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfals/data.hpp"
#include "mfals/factor_matrix.hpp"

namespace mfals::oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// SPD matrix Q diag(l) Q^T with eigenvalues log-spaced in [1, cond] and Q a
// random orthogonal matrix.
inline Mat random_spd(std::size_t f, double cond, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    Mat g(f, f);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        g.data()[i] = gauss(rng);
    }
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
    Vec l(f);
    for (std::size_t i = 0; i < f; ++i) {
        const double t = f == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(f - 1);
        l(static_cast<Eigen::Index>(i)) = std::pow(cond, t);
    }
    return q * l.asDiagonal() * q.transpose();
}

// Same construction with eigenvalues uniform in [1, cond]; both ends pinned so
// the condition number is exactly `cond`.
inline Mat random_spd_uniform(std::size_t f, double cond, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> uni(1.0, cond);
    Mat g(f, f);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        g.data()[i] = gauss(rng);
    }
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
    Vec l(f);
    for (std::size_t i = 0; i < f; ++i) {
        l(static_cast<Eigen::Index>(i)) = i == 0 ? 1.0 : (i + 1 == f ? cond : uni(rng));
    }
    return q * l.asDiagonal() * q.transpose();
}

inline Vec random_vec(std::size_t f, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    Vec v(f);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = gauss(rng);
    }
    return v;
}

inline std::vector<float> to_floats(const Mat& m) {
    std::vector<float> out(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
        }
    }
    return out;
}

inline std::vector<float> to_floats(const Vec& v) {
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
    }
    return out;
}

inline Vec to_vec(std::span<const float> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        out(static_cast<Eigen::Index>(i)) = v[i];
    }
    return out;
}

inline Mat to_mat(const FactorMatrix& f) {
    Mat out(f.rows(), f.f());
    for (std::size_t i = 0; i < f.rows(); ++i) {
        for (std::size_t k = 0; k < f.f(); ++k) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f(i, k);
        }
    }
    return out;
}

inline Mat dense_from_row_major(std::span<const float> full, std::size_t f) {
    Mat out(f, f);
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = full[i * f + j];
        }
    }
    return out;
}

inline double rel_diff(const Vec& a, const Vec& b) { return (a - b).norm() / b.norm(); }
inline double rel_frobenius(const Mat& a, const Mat& b) { return (a - b).norm() / b.norm(); }

// Theta_S^T Theta_S + shift I for the rows listed in `rows`.
inline Mat dense_gram(const FactorMatrix& theta, std::span<const index_t> rows, double shift) {
    const Mat t = to_mat(theta);
    Mat a = Mat::Zero(theta.f(), theta.f());
    for (index_t r : rows) {
        const Vec v = t.row(r).transpose();
        a += v * v.transpose();
    }
    a += shift * Mat::Identity(theta.f(), theta.f());
    return a;
}

// Weighted-lambda objective evaluated from scratch in double.
inline double dense_objective(const FactorMatrix& x, const FactorMatrix& theta,
                              std::span<const RatingTriple> train, double lambda) {
    std::vector<double> nx(x.rows(), 0.0);
    std::vector<double> nt(theta.rows(), 0.0);
    double loss = 0.0;
    for (const RatingTriple& t : train) {
        double pred = 0.0;
        for (std::size_t k = 0; k < x.f(); ++k) {
            pred += static_cast<double>(x(t.user, k)) * theta(t.item, k);
        }
        loss += (t.rating - pred) * (t.rating - pred);
        nx[t.user] += 1;
        nt[t.item] += 1;
    }
    double reg = 0.0;
    for (std::size_t u = 0; u < x.rows(); ++u) {
        double sq = 0.0;
        for (float v : x.row(u)) {
            sq += static_cast<double>(v) * v;
        }
        reg += nx[u] * sq;
    }
    for (std::size_t v = 0; v < theta.rows(); ++v) {
        double sq = 0.0;
        for (float w : theta.row(v)) {
            sq += static_cast<double>(w) * w;
        }
        reg += nt[v] * sq;
    }
    return loss + lambda * reg;
}

// Implicit-feedback row solve with the dense confidence and preference
// matrices materialized: (sum_v c_uv theta_v theta_v^T + lambda I) x = sum_v c_uv p_uv theta_v.
inline Vec dense_implicit_row(const Mat& theta, const Vec& ratings_row, double alpha,
                              double lambda) {
    const Eigen::Index f = theta.cols();
    Mat a = lambda * Mat::Identity(f, f);
    Vec b = Vec::Zero(f);
    for (Eigen::Index v = 0; v < theta.rows(); ++v) {
        const double r = ratings_row(v);
        const double p = r > 0.0 ? 1.0 : 0.0;
        const double c = 1.0 + alpha * r;
        const Vec t = theta.row(v).transpose();
        a += c * t * t.transpose();
        b += c * p * t;
    }
    return a.llt().solve(b);
}

// Dense implicit objective: sum over every cell of c (p - x.theta)^2 plus
// lambda (|X|^2 + |Theta|^2).
inline double dense_implicit_objective(const Mat& x, const Mat& theta, const Mat& r,
                                       double alpha, double lambda) {
    const Mat pred = x * theta.transpose();
    double total = 0.0;
    for (Eigen::Index u = 0; u < r.rows(); ++u) {
        for (Eigen::Index v = 0; v < r.cols(); ++v) {
            const double p = r(u, v) > 0.0 ? 1.0 : 0.0;
            const double c = 1.0 + alpha * r(u, v);
            total += c * (p - pred(u, v)) * (p - pred(u, v));
        }
    }
    return total + lambda * (x.squaredNorm() + theta.squaredNorm());
}

}  // namespace mfals::oracle
