#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tet {

// zeros/element tallies for one tensor at one timestep
struct SparsityStepRecord {
    std::uint64_t zeros = 0;
    std::uint64_t elems = 0;
};

struct LayerTrace {
    std::string layer_id;
    std::vector<SparsityStepRecord> input;  // X_t fed to this layer
    std::vector<SparsityStepRecord> hidden; // recurrent input (H_{t-1} or delta)
};

// Per-layer, per-timestep zero fractions recorded during a forward run.
// FC layers only have an input path.
struct SparsityTrace {
    std::vector<LayerTrace> conv_layers;
    LayerTrace fc1{"fc1", {}, {}};
    LayerTrace fc2{"fc2", {}, {}};

    void clear() {
        for (auto& l : conv_layers) {
            l.input.clear();
            l.hidden.clear();
        }
        fc1.input.clear();
        fc2.input.clear();
    }
};

} // namespace tet
