#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mfals/error.hpp"
#include "mfals/half.hpp"

#if defined(__F16C__)
#include <immintrin.h>
#endif

using namespace mfals;

namespace {

// Value of a finite binary16 pattern, decoded from the bit fields in double.
double decode(half_bits h) {
    const int sign = (h >> 15) ? -1 : 1;
    const int exp = (h >> 10) & 0x1f;
    const int mant = h & 0x3ff;
    if (exp == 0) {
        return sign * std::ldexp(mant, -24);
    }
    if (exp == 31) {
        return mant ? std::numeric_limits<double>::quiet_NaN()
                    : sign * std::numeric_limits<double>::infinity();
    }
    return sign * std::ldexp(1024 + mant, exp - 25);
}

// Brute-force nearest finite half with ties to even mantissa.
half_bits nearest_half(float value) {
    const double v = value;
    half_bits best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::uint32_t h = 0; h < 0x7c00u; ++h) {
        const half_bits cand = static_cast<half_bits>(h | (std::signbit(value) ? 0x8000u : 0u));
        const double err = std::abs(decode(cand) - v);
        if (err < best_err || (err == best_err && (cand & 1u) == 0)) {
            best = cand;
            best_err = err;
        }
    }
    return best;
}

}  // namespace

TEST(Half, DecodeMatchesReferenceForEveryPattern) {
    for (std::uint32_t h = 0; h <= 0xffffu; ++h) {
        const double want = decode(static_cast<half_bits>(h));
        const float got = half_to_float(static_cast<half_bits>(h));
        if (std::isnan(want)) {
            EXPECT_TRUE(std::isnan(got)) << h;
        } else {
            EXPECT_EQ(static_cast<double>(got), want) << h;
        }
    }
}

TEST(Half, EncodeMatchesBruteForceNearest) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> mag(-30.0f, 16.0f);
    std::vector<float> samples{0.0f, -0.0f, 1.0f, 65504.0f, 65519.0f, 6.0e-8f, 2.98e-8f, 1.0e-9f};
    for (int i = 0; i < 400; ++i) {
        const float v = std::exp2(mag(rng)) * (i % 2 ? 1.0f : -1.0f);
        samples.push_back(v);
    }
    // Exact ties between adjacent halves near 1.
    samples.push_back(1.0f + std::ldexp(1.0f, -11));
    samples.push_back(1.0f + 3.0f * std::ldexp(1.0f, -11));
    for (float v : samples) {
        EXPECT_EQ(float_to_half(v), nearest_half(v)) << v;
    }
}

TEST(Half, OneIsExact) {
    EXPECT_EQ(float_to_half(1.0f), 0x3c00u);
    EXPECT_EQ(half_to_float(float_to_half(1.0f)), 1.0f);
}

TEST(Half, RelativeErrorBoundOnUnitBinade) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(1.0f, 2.0f);
    const float bound = std::ldexp(1.0f, -11);
    for (int i = 0; i < 100000; ++i) {
        const float v = u(rng);
        EXPECT_LE(std::abs(half_to_float(float_to_half(v)) - v) / v, bound);
    }
}

TEST(Half, OverflowAndSpecials) {
    EXPECT_EQ(float_to_half(65520.0f), 0x7c00u);
    EXPECT_EQ(float_to_half(-1.0e6f), 0xfc00u);
    EXPECT_EQ(float_to_half(std::numeric_limits<float>::infinity()), 0x7c00u);
    EXPECT_TRUE(std::isnan(half_to_float(float_to_half(std::nanf("")))));
}

TEST(Half, BufferRoundTrip) {
    // Packed size of a 100 x 100 lower triangle.
    std::vector<float> in(5050);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-100.0f, 100.0f);
    for (float& v : in) {
        v = u(rng);
    }
    std::vector<half_bits> h(in.size());
    std::vector<float> back(in.size());
    convert_to_half(in, h);
    convert_to_float(h, back);
    for (std::size_t i = 0; i < in.size(); ++i) {
        EXPECT_EQ(h[i], float_to_half(in[i]));
        EXPECT_EQ(back[i], half_to_float(h[i]));
        EXPECT_LE(std::abs(back[i] - in[i]), std::abs(in[i]) * std::ldexp(1.0f, -11) + 3.0e-8f);
    }
}

TEST(Half, BufferOverflowThrows) {
    std::vector<float> in{1.0f, 2.0f, 70000.0f};
    std::vector<half_bits> out(3);
    EXPECT_THROW(convert_to_half(in, out), NumericalError);
    in[2] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(convert_to_half(in, out), NumericalError);
}

#if defined(__F16C__)
TEST(Half, HardwareConversionAgrees) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> mag(-26.0f, 15.9f);
    for (int i = 0; i < 20000; ++i) {
        const float v = std::exp2(mag(rng)) * (i % 3 ? 1.0f : -1.0f);
        const auto hw = static_cast<half_bits>(_cvtss_sh(v, _MM_FROUND_TO_NEAREST_INT));
        EXPECT_EQ(float_to_half(v), hw) << v;
        EXPECT_EQ(half_to_float(hw), _cvtsh_ss(hw));
    }
}
#endif
