#include "tet/manifest.hpp"

#include <cstdio>
#include <ctime>
#include <sstream>

#include "tet/errors.hpp"
#include "tet/fileio.hpp"

namespace tet {

void RunManifest::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries)
        if (k == key) {
            v = value;
            return;
        }
    entries.emplace_back(key, value);
}

void RunManifest::set(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    set(key, std::string(buf));
}

const std::string* RunManifest::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

std::string RunManifest::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    return out;
}

RunManifest RunManifest::parse(const std::string& text) {
    RunManifest m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw DataError("manifest: malformed line '" + line + "'");
        m.entries.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
    atomic_write_file(path, to_text());
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
    return parse(read_file_bytes(path));
}

std::string tool_version() { return "3et 0.1.0"; }

std::string timestamp_utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace tet
