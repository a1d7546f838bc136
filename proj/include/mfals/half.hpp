#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace mfals {

// IEEE binary16 bit pattern.
using half_bits = std::uint16_t;

inline constexpr float kHalfMax = 65504.0f;

// Round-to-nearest-even. Magnitudes that round past kHalfMax become infinity.
half_bits float_to_half(float value);
float half_to_float(half_bits bits);

// Converts a buffer; every output is finite or NumericalError is thrown.
void convert_to_half(std::span<const float> in, std::span<half_bits> out);
void convert_to_float(std::span<const half_bits> in, std::span<float> out);

}  // namespace mfals
