#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "mfals/als.hpp"

namespace mfals {

enum class SgdMode { serial, hogwild };

struct SgdConfig {
    std::size_t f = 100;
    float lambda = 0.05f;
    std::size_t epochs = 20;
    // alpha_k = learning_rate / (1 + decay * k), k = 0-based epoch.
    float learning_rate = 0.01f;
    float decay = 0.0f;
    SgdMode mode = SgdMode::serial;
    std::uint64_t seed = 1;
    int workers = 1;
    float init_scale = 0.1f;
    std::optional<double> target_rmse;

    void validate() const;
    float rate_at(std::size_t epoch) const;
};

// One sample, both vectors updated from their pre-step values:
//   e = x.theta - r
//   x     -= alpha (e theta + lambda x)
//   theta -= alpha (e x     + lambda theta)
// Returns e. Throws NumericalError if any updated entry is not finite.
float sgd_step(std::span<float> x, std::span<float> theta, float r, float alpha, float lambda);

// One pass over `triples` in a seeded permutation for `epoch`. Hogwild splits
// the permutation into contiguous blocks, one per worker, with lock-free
// relaxed-atomic row access.
void sgd_epoch(std::span<const RatingTriple> triples, FactorMatrix& x, FactorMatrix& theta,
               const SgdConfig& cfg, std::size_t epoch);

// Epoch loop reporting the weighted objective and RMSE in the ALS schema.
TrainResult sgd_train(const SparseRatings& train, std::span<const RatingTriple> test,
                      const SgdConfig& cfg);

const char* to_string(SgdMode mode);

}  // namespace mfals
