#include "mfals/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "mfals/error.hpp"

namespace mfals {

using nlohmann::json;

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path + " for hashing");
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                 &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw DataError("SHA-256 initialisation failed");
    }
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        const auto got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(got)) != 1) {
            throw DataError("SHA-256 update failed");
        }
    }
    if (in.bad()) {
        throw DataError("read error while hashing " + path);
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
        throw DataError("SHA-256 finalisation failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

DatasetFingerprint fingerprint_file(const std::string& role, const std::string& path) {
    DatasetFingerprint fp;
    fp.role = role;
    fp.path = path;
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    fp.bytes = static_cast<std::uint64_t>(in.tellg());
    fp.sha256 = sha256_file(path);
    return fp;
}

json to_json(const RunManifest& m) {
    json inputs = json::array();
    for (const DatasetFingerprint& d : m.inputs) {
        inputs.push_back({{"role", d.role},
                          {"path", d.path},
                          {"bytes", d.bytes},
                          {"nnz", d.nnz},
                          {"rows", d.rows},
                          {"cols", d.cols},
                          {"sha256", d.sha256}});
    }
    return json{{"tool_version", m.tool_version},
                {"command", m.command},
                {"config", m.config},
                {"seed", m.seed},
                {"inputs", inputs},
                {"artifacts", m.artifacts}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    try {
        m.tool_version = j.value("tool_version", "");
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config");
        m.seed = j.value("seed", std::uint64_t{0});
        for (const json& d : j.value("inputs", json::array())) {
            DatasetFingerprint fp;
            fp.role = d.value("role", "");
            fp.path = d.at("path").get<std::string>();
            fp.bytes = d.value("bytes", std::uint64_t{0});
            fp.nnz = d.value("nnz", std::uint64_t{0});
            fp.rows = d.value("rows", std::uint64_t{0});
            fp.cols = d.value("cols", std::uint64_t{0});
            fp.sha256 = d.value("sha256", "");
            m.inputs.push_back(fp);
        }
        m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void save_manifest(const std::string& path, const RunManifest& manifest) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    out << to_json(manifest).dump(2) << '\n';
    if (!out) {
        throw DataError("write error in " + path);
    }
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return manifest_from_json(j);
}

}  // namespace mfals
