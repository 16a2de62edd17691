#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tet {

// Which operand feeds a counted convolution/FC path.
enum class MacPath : int { input = 0, hidden = 1, fc = 2 };

inline const char* mac_path_name(MacPath p) {
    switch (p) {
        case MacPath::input: return "input";
        case MacPath::hidden: return "hidden";
        default: return "fc";
    }
}

struct MacCount {
    std::uint64_t dense = 0;     // MACs a fully dense execution would perform
    std::uint64_t effective = 0; // MACs performed after skipping zero operands

    MacCount& operator+=(const MacCount& o) {
        dense += o.dense;
        effective += o.effective;
        return *this;
    }
};

// Per-layer, per-path MAC ledger. One counter is owned by one evaluation
// context; primitives receive the slot they should charge.
struct OpsCounter {
    // insertion-ordered so reports are deterministic
    std::vector<std::pair<std::string, std::array<MacCount, 3>>> layers;

    MacCount& slot(std::string_view layer, MacPath path) {
        for (auto& [name, paths] : layers)
            if (name == layer) return paths[static_cast<int>(path)];
        layers.emplace_back(std::string(layer), std::array<MacCount, 3>{});
        return layers.back().second[static_cast<int>(path)];
    }

    MacCount total() const {
        MacCount t;
        for (const auto& [name, paths] : layers)
            for (const auto& p : paths) t += p;
        return t;
    }

    MacCount total(MacPath path) const {
        MacCount t;
        for (const auto& [name, paths] : layers) t += paths[static_cast<int>(path)];
        return t;
    }

    void merge(const OpsCounter& o) {
        for (const auto& [name, paths] : o.layers)
            for (int p = 0; p < 3; ++p) slot(name, static_cast<MacPath>(p)) += paths[p];
    }
};

} // namespace tet
