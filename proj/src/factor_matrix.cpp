#include "mfals/factor_matrix.hpp"

#include <cmath>
#include <random>

#include "mfals/error.hpp"

namespace mfals {

FactorMatrix::FactorMatrix(std::size_t rows, std::size_t f, std::vector<float> data)
    : rows_(rows), f_(f), data_(std::move(data)) {
    if (data_.size() != rows_ * f_) {
        throw ConfigError("factor matrix data size does not match rows * f");
    }
}

FactorMatrix FactorMatrix::random_uniform(std::size_t rows, std::size_t f, float scale,
                                          std::uint64_t seed) {
    if (!(scale > 0.0f)) {
        throw ConfigError("init scale must be positive");
    }
    FactorMatrix out(rows, f);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-scale, scale);
    for (float& v : out.data_) {
        v = dist(rng);
    }
    return out;
}

bool FactorMatrix::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

FactorMatrix init_factors(std::size_t rows, std::size_t f, float init_scale, std::uint64_t seed) {
    return FactorMatrix::random_uniform(rows, f, init_scale, seed);
}

float dot(std::span<const float> a, std::span<const float> b) {
    float s = 0.0f;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}

}  // namespace mfals
