#include "mfals/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mfals/error.hpp"

#if defined(__F16C__)
#include <immintrin.h>
#endif

namespace mfals {

namespace {

float dot_simd(const float* a, const float* b, std::size_t n) {
    float s = 0.0f;
#pragma omp simd reduction(+ : s)
    for (std::size_t k = 0; k < n; ++k) {
        s += a[k] * b[k];
    }
    return s;
}

// y = A p over a packed lower triangle: row i contributes L_i . p[0..i] to y_i
// and p_i * L_i[0..i) to y[0..i).
void matvec_packed(const float* lower, const float* p, float* y, std::size_t f) {
    std::fill(y, y + f, 0.0f);
    for (std::size_t i = 0; i < f; ++i) {
        const float* row = lower + packed_index(i, 0);
        const float pi = p[i];
        float s = 0.0f;
#pragma omp simd reduction(+ : s)
        for (std::size_t j = 0; j < i; ++j) {
            s += row[j] * p[j];
            y[j] += row[j] * pi;
        }
        y[i] += s + row[i] * pi;
    }
}

void widen_row(const half_bits* src, float* dst, std::size_t n) {
    std::size_t k = 0;
#if defined(__F16C__)
    for (; k + 8 <= n; k += 8) {
        const __m128i h = _mm_loadu_si128(reinterpret_cast<const __m128i*>(src + k));
        _mm256_storeu_ps(dst + k, _mm256_cvtph_ps(h));
    }
#endif
    for (; k < n; ++k) {
        dst[k] = half_to_float(src[k]);
    }
}

// Same traversal as matvec_packed; each row is widened into a small fp32
// buffer right before use so A is only ever read in its 2-byte form.
void matvec_packed_half(const half_bits* lower, const float* p, float* y, float* row_buf,
                        std::size_t f) {
    std::fill(y, y + f, 0.0f);
    for (std::size_t i = 0; i < f; ++i) {
        widen_row(lower + packed_index(i, 0), row_buf, i + 1);
        const float pi = p[i];
        float s = 0.0f;
#pragma omp simd reduction(+ : s)
        for (std::size_t j = 0; j < i; ++j) {
            s += row_buf[j] * p[j];
            y[j] += row_buf[j] * pi;
        }
        y[i] += s + row_buf[i] * pi;
    }
}

template <typename MatVec>
CgResult cg_loop(MatVec&& matvec, std::span<float> x, std::span<const float> b, std::size_t f,
                 std::size_t f_s, float eps) {
    if (x.size() != f || b.size() != f) {
        throw ConfigError("CG vector length does not match f");
    }
    // Small stack-friendly scratch; f is at most a few hundred in practice.
    std::vector<float> r(f), p(f), ap(f);
    matvec(x.data(), ap.data());
    for (std::size_t k = 0; k < f; ++k) {
        r[k] = b[k] - ap[k];
    }
    std::copy(r.begin(), r.end(), p.begin());
    float rs_old = dot_simd(r.data(), r.data(), f);

    CgResult result;
    result.residual_norm = std::sqrt(rs_old);
    if (result.residual_norm < eps || rs_old == 0.0f) {
        return result;
    }
    for (std::size_t it = 0; it < f_s; ++it) {
        matvec(p.data(), ap.data());
        const float pap = dot_simd(p.data(), ap.data(), f);
        if (!(pap > 0.0f)) {
            result.breakdown = true;
            break;
        }
        const float alpha = rs_old / pap;
#pragma omp simd
        for (std::size_t k = 0; k < f; ++k) {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        const float rs_new = dot_simd(r.data(), r.data(), f);
        result.iterations = it + 1;
        result.residual_norm = std::sqrt(rs_new);
        if (result.residual_norm < eps || rs_new == 0.0f) {
            break;
        }
        const float beta = rs_new / rs_old;
#pragma omp simd
        for (std::size_t k = 0; k < f; ++k) {
            p[k] = r[k] + beta * p[k];
        }
        rs_old = rs_new;
    }
    return result;
}

}  // namespace

void SolverConfig::validate() const {
    if (method == SolverMethod::cg && cg_iters < 1) {
        throw ConfigError("cg_iters must be at least 1");
    }
    if (!(cg_tol >= 0.0f)) {
        throw ConfigError("cg_tol must be non-negative");
    }
    if (method == SolverMethod::exact && precision == Precision::fp16) {
        throw ConfigError("fp16 storage is only supported by the CG solver");
    }
}

void exact_solve(const GramSystem& a, std::span<const float> b, std::span<float> x) {
    if (a.precision() != Precision::fp32) {
        throw ConfigError("exact_solve needs fp32 storage of A");
    }
    const std::size_t f = a.f();
    if (b.size() != f || x.size() != f) {
        throw ConfigError("exact_solve vector length does not match f");
    }
    // In-place Cholesky (row-oriented) on a copy of the packed lower triangle.
    std::vector<float> l(a.lower().begin(), a.lower().end());
    for (std::size_t i = 0; i < f; ++i) {
        float* li = l.data() + packed_index(i, 0);
        for (std::size_t j = 0; j < i; ++j) {
            const float* lj = l.data() + packed_index(j, 0);
            li[j] = (li[j] - dot_simd(li, lj, j)) / lj[j];
        }
        const float d = li[i] - dot_simd(li, li, i);
        if (!(d > 0.0f)) {
            throw SingularSystemError(a.row(), "non-positive pivot " + std::to_string(d) +
                                                   " at index " + std::to_string(i));
        }
        li[i] = std::sqrt(d);
    }
    // L y = b
    std::vector<float> y(f);
    for (std::size_t i = 0; i < f; ++i) {
        const float* li = l.data() + packed_index(i, 0);
        y[i] = (b[i] - dot_simd(li, y.data(), i)) / li[i];
    }
    // L^T x = y, consuming rows of L from the bottom.
    for (std::size_t i = f; i-- > 0;) {
        const float* li = l.data() + packed_index(i, 0);
        const float xi = y[i] / li[i];
        x[i] = xi;
#pragma omp simd
        for (std::size_t j = 0; j < i; ++j) {
            y[j] -= xi * li[j];
        }
    }
}

void symmetric_matvec(const GramSystem& a, std::span<const float> p, std::span<float> y) {
    const std::size_t f = a.f();
    if (a.precision() == Precision::fp32) {
        matvec_packed(a.lower().data(), p.data(), y.data(), f);
    } else {
        std::vector<float> buf(f);
        matvec_packed_half(a.lower_half().data(), p.data(), y.data(), buf.data(), f);
    }
}

CgResult cg_solve(const GramSystem& a, std::span<float> x, std::span<const float> b,
                  std::size_t f_s, float eps) {
    if (a.precision() != Precision::fp32) {
        throw ConfigError("cg_solve needs fp32 storage; use cg_solve_half");
    }
    const float* lower = a.lower().data();
    const std::size_t f = a.f();
    return cg_loop([&](const float* p, float* y) { matvec_packed(lower, p, y, f); }, x, b, f,
                   f_s, eps);
}

CgResult cg_solve_half(const GramSystem& a, std::span<float> x, std::span<const float> b,
                       std::size_t f_s, float eps) {
    if (a.precision() != Precision::fp16) {
        throw ConfigError("cg_solve_half needs fp16 storage; use cg_solve");
    }
    const half_bits* lower = a.lower_half().data();
    const std::size_t f = a.f();
    std::vector<float> buf(f);
    return cg_loop(
        [&](const float* p, float* y) { matvec_packed_half(lower, p, y, buf.data(), f); }, x, b,
        f, f_s, eps);
}

CgResult solve_system(const GramSystem& a, std::span<float> x, const SolverConfig& cfg) {
    if (cfg.method == SolverMethod::exact) {
        exact_solve(a, a.b(), x);
        return {};
    }
    const float bnorm = std::sqrt(dot_simd(a.b().data(), a.b().data(), a.f()));
    const float eps = cfg.cg_tol * bnorm;
    return a.precision() == Precision::fp16 ? cg_solve_half(a, x, a.b(), cfg.cg_iters, eps)
                                            : cg_solve(a, x, a.b(), cfg.cg_iters, eps);
}

BatchSolveReport batch_solve(std::span<const GramSystem> systems, std::span<float> x,
                             const SolverConfig& cfg, int workers) {
    cfg.validate();
    BatchSolveReport report;
    report.systems = systems.size();
    if (systems.empty()) {
        return report;
    }
    const std::size_t f = systems.front().f();
    for (const GramSystem& s : systems) {
        if (s.f() != f) {
            throw ConfigError("batch_solve: systems disagree on f");
        }
    }
    if (x.size() != systems.size() * f) {
        throw ConfigError("batch_solve: x must hold systems.size() * f values");
    }

    const auto start = std::chrono::steady_clock::now();
    std::vector<CgResult> results(systems.size());
    std::vector<std::string> errors(systems.size());
    const auto count = static_cast<std::ptrdiff_t>(systems.size());

#pragma omp parallel for schedule(dynamic, 16) num_threads(std::max(workers, 1))
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const GramSystem& sys = systems[static_cast<std::size_t>(i)];
        if (sys.empty()) {
            continue;
        }
        const std::span<float> xi = x.subspan(static_cast<std::size_t>(i) * f, f);
        try {
            results[static_cast<std::size_t>(i)] = solve_system(sys, xi, cfg);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }

    for (std::size_t i = 0; i < systems.size(); ++i) {
        report.cg_iterations += results[i].iterations;
        if (results[i].breakdown) {
            report.breakdown_rows.push_back(systems[i].row());
        }
        if (!errors[i].empty()) {
            report.failures.push_back({systems[i].row(), errors[i]});
        }
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace mfals
