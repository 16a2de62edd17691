#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tet/events.hpp"

namespace tet {

// A recorded stream plus per-frame labels, framed at delta_t_us. On disk a
// dataset is a directory:
//   events.evt  binary; magic "EVT3ET01", u16 width, u16 height, u32 reserved,
//               then 16-byte records (u16 x, u16 y, i8 p, 3 pad bytes, u64 t us)
//   labels.csv  header "frame_index,x,y", one row per frame, pixel units
//   meta.toml   key = value: delta_t_us, width, height, seed, frames
struct Dataset {
    int width = 0, height = 0;
    std::uint64_t delta_t_us = 0;
    std::uint64_t seed = 0;
    std::vector<Event> events;
    std::vector<Label> labels;
    std::vector<VoxelFrame> frames;
};

// Frames the events into labels.size() bins and validates bounds/ordering.
Dataset assemble_dataset(int width, int height, std::uint64_t delta_t_us, std::uint64_t seed,
                         std::vector<Event> events, std::vector<Label> labels);

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

// encode/decode of the individual files, exposed for tests
std::string encode_events(int width, int height, const std::vector<Event>& events);
std::vector<Event> decode_events(const std::string& bytes, int* width_out, int* height_out);
std::string encode_labels_csv(const std::vector<Label>& labels);
std::vector<Label> decode_labels_csv(const std::string& text);

} // namespace tet
