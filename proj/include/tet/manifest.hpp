#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tet {

// Key=value run manifest written next to every output artifact. Holds the
// fully resolved configuration so a run can be reproduced bit-for-bit
// (timestamps excepted).
struct RunManifest {
    std::vector<std::pair<std::string, std::string>> entries; // insertion order

    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
    void set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
    void set(const std::string& key, int value) { set(key, std::to_string(value)); }
    void set(const std::string& key, double value);

    const std::string* find(const std::string& key) const;

    std::string to_text() const;
    static RunManifest parse(const std::string& text);

    void write(const std::filesystem::path& path) const;
    static RunManifest read(const std::filesystem::path& path);
};

std::string tool_version();

// ISO-8601 UTC; only ever written into manifests, never into data artifacts
std::string timestamp_utc_now();

} // namespace tet
