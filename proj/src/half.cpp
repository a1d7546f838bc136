#include "mfals/half.hpp"

#include <bit>
#include <string>

#include "mfals/error.hpp"

#if defined(__F16C__)
#include <immintrin.h>
#endif

namespace mfals {

half_bits float_to_half(float value) {
    constexpr std::uint32_t kF32Inf = 255u << 23;
    constexpr std::uint32_t kF16Overflow = (127u + 16u) << 23;
    constexpr std::uint32_t kDenormMagic = ((127u - 15u) + (23u - 10u) + 1u) << 23;

    std::uint32_t u = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = u & 0x80000000u;
    u ^= sign;

    std::uint32_t out;
    if (u >= kF16Overflow) {
        out = u > kF32Inf ? 0x7e00u : 0x7c00u;
    } else if (u < (113u << 23)) {
        // Subnormal or zero: let the FPU do the rounding shift.
        const float shifted = std::bit_cast<float>(u) + std::bit_cast<float>(kDenormMagic);
        out = std::bit_cast<std::uint32_t>(shifted) - kDenormMagic;
    } else {
        const std::uint32_t mant_odd = (u >> 13) & 1u;
        u += (static_cast<std::uint32_t>(15 - 127) << 23) + 0xfffu;
        u += mant_odd;
        out = u >> 13;
    }
    return static_cast<half_bits>(out | (sign >> 16));
}

float half_to_float(half_bits bits) {
    constexpr std::uint32_t kShiftedExp = 0x7c00u << 13;
    constexpr float kMagic = std::bit_cast<float>(113u << 23);

    std::uint32_t u = (static_cast<std::uint32_t>(bits) & 0x7fffu) << 13;
    const std::uint32_t exp = kShiftedExp & u;
    u += (127u - 15u) << 23;
    if (exp == kShiftedExp) {
        u += (128u - 16u) << 23;
    } else if (exp == 0) {
        u += 1u << 23;
        u = std::bit_cast<std::uint32_t>(std::bit_cast<float>(u) - kMagic);
    }
    u |= (static_cast<std::uint32_t>(bits) & 0x8000u) << 16;
    return std::bit_cast<float>(u);
}

void convert_to_half(std::span<const float> in, std::span<half_bits> out) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        const half_bits h = float_to_half(in[i]);
        if ((h & 0x7c00u) == 0x7c00u) {
            throw NumericalError("value " + std::to_string(in[i]) +
                                 " does not fit in binary16; rescale the ratings");
        }
        out[i] = h;
    }
}

void convert_to_float(std::span<const half_bits> in, std::span<float> out) {
    std::size_t i = 0;
#if defined(__F16C__)
    for (; i + 8 <= in.size(); i += 8) {
        const __m128i h = _mm_loadu_si128(reinterpret_cast<const __m128i*>(in.data() + i));
        _mm256_storeu_ps(out.data() + i, _mm256_cvtph_ps(h));
    }
#endif
    for (; i < in.size(); ++i) {
        out[i] = half_to_float(in[i]);
    }
}

}  // namespace mfals
