#include "mfals/model.hpp"

#include <fstream>
#include <limits>

#include "binary_io.hpp"
#include "mfals/error.hpp"

namespace mfals {

void write_model(std::ostream& out, const FactorMatrix& x, const FactorMatrix& theta) {
    if (x.f() != theta.f()) {
        throw ConfigError("model factor dimensions differ");
    }
    if (x.f() > std::numeric_limits<std::uint32_t>::max()) {
        throw ConfigError("factor dimension does not fit the model format");
    }
    out.write("CMFM", 4);
    detail::write_le<std::uint32_t>(out, kModelVersion);
    detail::write_le<std::uint64_t>(out, x.rows());
    detail::write_le<std::uint64_t>(out, theta.rows());
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.f()));
    detail::write_le_array<float>(out, x.data());
    detail::write_le_array<float>(out, theta.data());
    if (!out) {
        throw DataError("write error in model file");
    }
}

Model read_model(std::istream& in) {
    detail::expect_magic(in, "CMFM", "model");
    const auto version = detail::read_le<std::uint32_t>(in, "model version");
    if (version != kModelVersion) {
        throw FormatError("unsupported model version " + std::to_string(version));
    }
    const auto m = detail::read_le<std::uint64_t>(in, "model m");
    const auto n = detail::read_le<std::uint64_t>(in, "model n");
    const auto f = detail::read_le<std::uint32_t>(in, "model f");
    if (f == 0) {
        throw FormatError("model has f = 0");
    }
    auto xs = detail::read_le_array<float>(in, m * f, "X");
    auto ts = detail::read_le_array<float>(in, n * f, "Theta");
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after model payload");
    }
    Model model{FactorMatrix(m, f, std::move(xs)), FactorMatrix(n, f, std::move(ts))};
    if (!model.x.all_finite() || !model.theta.all_finite()) {
        throw FormatError("model contains non-finite factors");
    }
    return model;
}

void save_model(const std::string& path, const FactorMatrix& x, const FactorMatrix& theta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    write_model(out, x, theta);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    try {
        return read_model(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace mfals
