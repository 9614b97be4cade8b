#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

namespace wa::cli {

inline constexpr const char* tool_version = "0.1.0";

/** Hex SHA-256 of a file's bytes; throws wa::IoError when the file cannot be read. */
std::string sha256_file(const std::string& path);

/**
 * Provenance record written with every output: the command, the fully resolved
 * configuration, the seed, input checksums, tool version and wall time.
 */
class RunManifest {
public:
    explicit RunManifest(std::string command);

    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; has_seed_ = true; }
    void add_input(const std::string& path);

    /** Snapshot including the elapsed wall time so far. */
    nlohmann::json to_json() const;

private:
    std::string command_;
    nlohmann::json config_ = nlohmann::json::object();
    std::uint64_t seed_ = 0;
    bool has_seed_ = false;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::chrono::steady_clock::time_point start_;
    std::string started_utc_;
};

}  // namespace wa::cli
