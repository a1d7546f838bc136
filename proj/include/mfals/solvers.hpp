#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfals/gram.hpp"

namespace mfals {

enum class SolverMethod { exact, cg };

struct SolverConfig {
    SolverMethod method = SolverMethod::cg;
    // f_s: maximum CG iterations per system.
    std::size_t cg_iters = 6;
    // Early exit when ||r|| < cg_tol * ||b||.
    float cg_tol = 1e-4f;
    // Storage precision of A handed to the solver.
    Precision precision = Precision::fp32;

    void validate() const;
};

struct CgResult {
    std::size_t iterations = 0;
    float residual_norm = 0.0f;
    // p^T A p <= 0 was hit; x holds the iterate from before that step.
    bool breakdown = false;
};

// Cholesky solve of an fp32 system. Throws SingularSystemError (naming
// A.row()) on a non-positive pivot.
void exact_solve(const GramSystem& a, std::span<const float> b, std::span<float> x);

// Truncated conjugate gradient, warm-started from the contents of x:
//   r = b - A x; p = r
//   repeat up to f_s times:
//     ap = A p; alpha = r.r / p.ap
//     x += alpha p; r -= alpha ap
//     stop if ||r|| < eps
//     p = r + (r.r_new / r.r_old) p
// Uses fp32 storage of A; cg_solve_half reads binary16 storage and promotes
// each entry to fp32 inside the matrix-vector product.
CgResult cg_solve(const GramSystem& a, std::span<float> x, std::span<const float> b,
                  std::size_t f_s, float eps);
CgResult cg_solve_half(const GramSystem& a, std::span<float> x, std::span<const float> b,
                       std::size_t f_s, float eps);

// y = A p for either storage precision.
void symmetric_matvec(const GramSystem& a, std::span<const float> p, std::span<float> y);

// Solves a.b() with the configured method, warm-starting CG from x. Throws
// on failure; does not check a.empty().
CgResult solve_system(const GramSystem& a, std::span<float> x, const SolverConfig& cfg);

struct SolveFailure {
    std::size_t row = 0;
    std::string what;
};

struct BatchSolveReport {
    double seconds = 0.0;
    std::size_t systems = 0;
    std::size_t cg_iterations = 0;
    std::vector<std::size_t> breakdown_rows;
    std::vector<SolveFailure> failures;
};

// Solves every non-empty system; x holds systems.size() * f warm starts on
// entry and solutions on exit. Empty systems leave their slot untouched.
// Per-system failures are collected rather than thrown.
BatchSolveReport batch_solve(std::span<const GramSystem> systems, std::span<float> x,
                             const SolverConfig& cfg, int workers = 1);

}  // namespace mfals
