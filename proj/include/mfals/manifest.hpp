#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace mfals {

struct DatasetFingerprint {
    std::string role;  // "train", "test", "model", ...
    std::string path;
    std::uint64_t bytes = 0;
    std::uint64_t nnz = 0;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::string sha256;
};

// Written before a command touches any output. `config` holds every resolved
// option, so a run can be replayed from the manifest alone.
struct RunManifest {
    std::string tool_version;
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::vector<DatasetFingerprint> inputs;
    std::map<std::string, std::string> artifacts;
};

// Hex SHA-256 of a file's bytes; throws DataError if unreadable.
std::string sha256_file(const std::string& path);

// Fingerprint with size and hash; nnz/rows/cols are filled by the caller.
DatasetFingerprint fingerprint_file(const std::string& role, const std::string& path);

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);

void save_manifest(const std::string& path, const RunManifest& manifest);
RunManifest load_manifest(const std::string& path);

}  // namespace mfals
