#include "manifest.hpp"

#include "whilealive/data_model.hpp"

#include <openssl/evp.h>

#include <array>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace wa::cli {

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for checksumming");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 initialisation failed");
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), buffer.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
    std::ostringstream hex;
    for (unsigned int k = 0; k < length; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
    return hex.str();
}

RunManifest::RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream out;
    out << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
    started_utc_ = out.str();
}

void RunManifest::add_input(const std::string& path) { inputs_.emplace_back(path, sha256_file(path)); }

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command_;
    j["tool_version"] = tool_version;
    j["config"] = config_;
    j["seed"] = has_seed_ ? nlohmann::json(seed_) : nlohmann::json(nullptr);
    j["inputs"] = nlohmann::json::array();
    for (const auto& [path, digest] : inputs_) j["inputs"].push_back({{"path", path}, {"sha256", digest}});
    j["started_utc"] = started_utc_;
    j["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return j;
}

}  // namespace wa::cli
