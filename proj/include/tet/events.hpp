#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tet/tensor.hpp"

namespace tet {

// One DVS event. Timestamps are microseconds; polarity is +1 or -1.
struct Event {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;
    std::uint64_t t = 0;
};

// Accumulated signed event counts for one time bin (t_start, t_end].
struct VoxelFrame {
    Tensor values; // [1, H, W]
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 0;
};

// Pupil center in frame pixel coordinates.
struct Label {
    double x = 0.0;
    double y = 0.0;
};

// T consecutive frames with per-frame labels; views into caller-owned storage.
struct SequenceSample {
    std::span<const VoxelFrame> frames;
    std::span<const Label> labels;
};

// Bins a sorted stream into frames of width delta_t_us starting at t0. Bin k
// covers (t0 + k*dt, t0 + (k+1)*dt]; events at or before t0 are out of range
// and dropped. n_bins < 0 sizes the output to cover the last in-range event;
// with an explicit n_bins, later events are dropped.
std::vector<VoxelFrame> frame_events(std::span<const Event> stream, std::uint64_t delta_t_us, int width,
                                     int height, std::uint64_t t0 = 0, std::int64_t n_bins = -1);

// Overlapping clips: clip i covers frames [i*stride, i*stride + T). Returns
// floor((N - T)/stride) + 1 clips for N >= T, none otherwise.
std::vector<SequenceSample> slice_clips(std::span<const VoxelFrame> frames, std::span<const Label> labels,
                                        int seq_len, int stride);

// Sum of polarities of events inside (t0, t0 + n_bins*dt]; n_bins < 0 means no
// upper cut. Used by the mass-conservation checks.
std::int64_t signed_event_mass(std::span<const Event> stream, std::uint64_t t0 = 0,
                               std::uint64_t delta_t_us = 0, std::int64_t n_bins = -1);

std::int64_t frame_mass(const VoxelFrame& f);

} // namespace tet
