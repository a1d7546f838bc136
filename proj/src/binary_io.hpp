#pragma once

// Little-endian stream helpers shared by the ratings cache and model files.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mfals/error.hpp"

namespace mfals::detail {

template <typename T>
T byteswap_value(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
        std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = byteswap_value(v);
    }
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void write_le_array(std::ostream& out, std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (T v : values) {
            write_le(out, v);
        }
    }
}

template <typename T>
T read_le(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) {
        v = byteswap_value(v);
    }
    return v;
}

template <typename T>
std::vector<T> read_le_array(std::istream& in, std::uint64_t count, const char* what) {
    std::vector<T> out;
    // Grow in chunks so a corrupt count cannot trigger one huge allocation.
    constexpr std::uint64_t kChunk = 1u << 20;
    std::uint64_t done = 0;
    while (done < count) {
        const std::uint64_t take = std::min(kChunk, count - done);
        out.resize(done + take);
        if (!in.read(reinterpret_cast<char*>(out.data() + done),
                     static_cast<std::streamsize>(take * sizeof(T)))) {
            throw FormatError(std::string("truncated file while reading ") + what);
        }
        done += take;
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (T& v : out) {
            v = byteswap_value(v);
        }
    }
    return out;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* kind) {
    char got[4] = {};
    if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
        throw FormatError(std::string("not a ") + kind + " file (bad magic)");
    }
}

}  // namespace mfals::detail
