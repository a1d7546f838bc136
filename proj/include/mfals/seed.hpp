#pragma once

#include <cstdint>

namespace mfals {

// splitmix64 finalizer; derives independent stream seeds from one root seed.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream ids used by the engines.
inline constexpr std::uint64_t kSeedX = 0;
inline constexpr std::uint64_t kSeedTheta = 1;
inline constexpr std::uint64_t kSeedShuffle = 2;

}  // namespace mfals
