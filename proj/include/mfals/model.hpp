#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "mfals/factor_matrix.hpp"

namespace mfals {

// "CMFM", u32 version, u64 m, u64 n, u32 f, X row-major fp32, Theta row-major
// fp32; little-endian throughout.
inline constexpr std::uint32_t kModelVersion = 1;

struct Model {
    FactorMatrix x;
    FactorMatrix theta;

    std::size_t f() const { return x.f(); }
};

void write_model(std::ostream& out, const FactorMatrix& x, const FactorMatrix& theta);
Model read_model(std::istream& in);
void save_model(const std::string& path, const FactorMatrix& x, const FactorMatrix& theta);
Model load_model(const std::string& path);

}  // namespace mfals
