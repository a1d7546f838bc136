#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mfals {

// Dense row-major latent-factor matrix (rows x f), single precision.
class FactorMatrix {
public:
    FactorMatrix() = default;
    FactorMatrix(std::size_t rows, std::size_t f) : rows_(rows), f_(f), data_(rows * f, 0.0f) {}
    FactorMatrix(std::size_t rows, std::size_t f, std::vector<float> data);

    // Entries i.i.d. uniform[-scale, scale]; bitwise reproducible per seed.
    static FactorMatrix random_uniform(std::size_t rows, std::size_t f, float scale,
                                       std::uint64_t seed);

    std::size_t rows() const { return rows_; }
    std::size_t f() const { return f_; }

    std::span<float> row(std::size_t i) { return {data_.data() + i * f_, f_}; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * f_, f_}; }

    float& operator()(std::size_t i, std::size_t k) { return data_[i * f_ + k]; }
    float operator()(std::size_t i, std::size_t k) const { return data_[i * f_ + k]; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    bool all_finite() const;

    friend bool operator==(const FactorMatrix&, const FactorMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t f_ = 0;
    std::vector<float> data_;
};

// Same as FactorMatrix::random_uniform; kept as the ALS-facing name.
FactorMatrix init_factors(std::size_t rows, std::size_t f, float init_scale, std::uint64_t seed);

float dot(std::span<const float> a, std::span<const float> b);

}  // namespace mfals
