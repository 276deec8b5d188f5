#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "fracvar/error.hpp"
#include "fracvar/io.hpp"

namespace fracvar {

inline constexpr const char* artifact_version = "1.0.0";

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path + " for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 initialisation failed");
    }
    std::array<char, 1 << 16> buf{};
    while (is) {
        is.read(buf.data(), buf.size());
        if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md.data(), &len);
    EVP_MD_CTX_free(ctx);
    std::string out;
    char hex[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(hex, sizeof hex, "%02x", md[i]);
        out += hex;
    }
    return out;
}

/// Collects output files and per-stage wall-clock timings for one run directory.
class RunManifest {
public:
    explicit RunManifest(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& directory() const { return dir_; }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    /// Registers a file already written under the run directory.
    void add(const std::string& name) {
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    }

    void time(const std::string& stage, double seconds) { timings_.emplace_back(stage, seconds); }

    template <class F>
    auto stage(const std::string& name, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        struct Stop {
            RunManifest* m;
            std::string name;
            std::chrono::steady_clock::time_point t0;
            ~Stop() { m->time(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()); }
        } stop{this, name, t0};
        return f();
    }

    json files_json() const {
        std::vector<std::string> names = files_;
        std::sort(names.begin(), names.end());
        json out = json::array();
        for (const auto& n : names) {
            out.push_back({{"path", n}, {"sha256", sha256_file(path(n))}, {"bytes", std::filesystem::file_size(dir_ / n)}});
        }
        return out;
    }

    /// Writes manifest.json; the manifest itself is not part of its own inventory.
    void write(const std::string& command, const json& config, const std::string& status, const std::string& error = "") const {
        json j;
        j["artifact"] = "fracvar";
        j["version"] = artifact_version;
        j["command"] = command;
        j["status"] = status;
        if (!error.empty()) j["error"] = error;
        j["config"] = config;
        json t = json::object();
        for (const auto& [k, v] : timings_) t[k] = v;
        j["timings_seconds"] = t;
        j["files"] = files_json();
        write_json(path("manifest.json"), j);
    }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
    std::vector<std::pair<std::string, double>> timings_;
};

}  // namespace fracvar
