#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mfals/als.hpp"

namespace mfals {

struct ImplicitConfig {
    std::size_t f = 100;
    float alpha = 40.0f;
    float lambda = 0.05f;
    std::size_t epochs = 10;
    SolverConfig solver{};
    float init_scale = 0.1f;
    std::uint64_t seed = 1;
    TileConfig tile{};
    int threads = 1;

    void validate() const;
};

// F^T F as a packed lower triangle (f(f+1)/2 floats), fp32 accumulation.
std::vector<float> precompute_gram(const FactorMatrix& f, TileConfig cfg = {});

// Per row u, with c = 1 + alpha * r over positive ratings only:
//   A_u = F^T F + sum alpha r_uv theta_v theta_v^T + lambda I
//   b_u = sum (1 + alpha r_uv) theta_v
// Every row is solved, including rows without positives (b = 0).
SideStats implicit_update_side(const CompressedView& view, const FactorMatrix& fixed,
                               std::span<const float> gram, FactorMatrix& target, float alpha,
                               float lambda, const SolverConfig& solver,
                               const UpdateOptions& options = {});

// sum over all (u, v) of c_uv (p_uv - x_u . theta_v)^2 + lambda (|X|^2 + |Theta|^2),
// evaluated in double without materializing the dense matrix.
double implicit_objective(const FactorMatrix& x, const FactorMatrix& theta,
                          const SparseRatings& train, double alpha, double lambda);

// Mean over test positives of the item's rank percentile among all items for
// that user (0 = top of the list); training items are not excluded.
double mean_percentile_rank(const FactorMatrix& x, const FactorMatrix& theta,
                            std::span<const RatingTriple> test);

// Throws DataError if any rating is negative.
void check_implicit_ratings(const SparseRatings& ratings);

// Alternating loop; `test` (optional) feeds the mean percentile rank.
TrainResult implicit_train(const SparseRatings& train, std::span<const RatingTriple> test,
                           const ImplicitConfig& cfg);

}  // namespace mfals
