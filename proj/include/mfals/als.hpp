#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "mfals/data.hpp"
#include "mfals/factor_matrix.hpp"
#include "mfals/gram.hpp"
#include "mfals/report.hpp"
#include "mfals/solvers.hpp"

namespace mfals {

struct AlsConfig {
    std::size_t f = 100;
    float lambda = 0.05f;
    std::size_t epochs = 10;
    SolverConfig solver{};
    float init_scale = 0.1f;
    std::uint64_t seed = 1;
    std::optional<double> target_rmse;
    TileConfig tile{};
    Regularization regularization = Regularization::weighted;
    int threads = 1;
    // Objective after update-X costs one extra pass over the ratings.
    bool track_half_objective = true;

    void validate() const;
};

struct UpdateOptions {
    TileConfig tile{};
    Regularization regularization = Regularization::weighted;
    int threads = 1;
    // Rows assembled and solved together by one worker.
    std::size_t chunk = 64;
};

// Recomputes every target row that has ratings in `view` by solving its
// normal equations against `fixed`; rows without ratings keep their values.
// CG warm-starts from the current target row. Throws SingularSystemError for
// the lowest failing row.
SideStats update_side(const CompressedView& view, const FactorMatrix& fixed, FactorMatrix& target,
                      float lambda, const SolverConfig& solver, const UpdateOptions& options = {});

// Sum of squared training errors plus lambda * (sum_u n_u |x_u|^2 + sum_v n_v |theta_v|^2),
// evaluated in double.
double objective(const FactorMatrix& x, const FactorMatrix& theta, const SparseRatings& train,
                 double lambda);

// Root mean squared error over `test`; predictions are not clamped. Throws
// ConfigError on an empty set.
double rmse(const FactorMatrix& x, const FactorMatrix& theta, std::span<const RatingTriple> test);
double rmse(const FactorMatrix& x, const FactorMatrix& theta, const SparseRatings& ratings);

struct TrainResult {
    FactorMatrix x;
    FactorMatrix theta;
    TrainReport report;
};

// Alternates update-X and update-Theta for cfg.epochs epochs, evaluating after
// each. Stops early once test RMSE <= target_rmse. `test` may be empty.
TrainResult train(const SparseRatings& train, std::span<const RatingTriple> test,
                  const AlsConfig& cfg);

const char* to_string(SolverMethod method);
const char* to_string(Precision precision);

// Per-epoch (both half-updates) flop and byte estimates for a solver setup.
std::pair<double, double> als_epoch_cost(std::size_t m, std::size_t n, std::size_t nnz,
                                         std::size_t f, const SolverConfig& solver);

}  // namespace mfals
