#include "tet/events.hpp"

#include <string>

#include "tet/errors.hpp"

namespace tet {

std::vector<VoxelFrame> frame_events(std::span<const Event> stream, std::uint64_t delta_t_us, int width,
                                     int height, std::uint64_t t0, std::int64_t n_bins) {
    if (delta_t_us == 0) throw DataError("frame_events: delta_t must be positive");
    if (width <= 0 || height <= 0) throw DataError("frame_events: bad resolution");

    std::uint64_t prev_t = 0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const Event& e = stream[i];
        if (e.x >= width || e.y >= height)
            throw DataError("frame_events: event " + std::to_string(i) + " at (" + std::to_string(e.x) +
                            "," + std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                            std::to_string(height));
        if (i > 0 && e.t < prev_t)
            throw DataError("frame_events: timestamps not sorted at event " + std::to_string(i));
        prev_t = e.t;
    }

    std::int64_t bins = n_bins;
    if (bins < 0) {
        bins = 0;
        for (const Event& e : stream)
            if (e.t > t0) {
                const std::int64_t k = static_cast<std::int64_t>((e.t - t0 - 1) / delta_t_us);
                if (k + 1 > bins) bins = k + 1;
            }
    }

    std::vector<VoxelFrame> frames(static_cast<std::size_t>(bins));
    for (std::int64_t k = 0; k < bins; ++k) {
        frames[k].values = Tensor({1, height, width});
        frames[k].t_start = t0 + static_cast<std::uint64_t>(k) * delta_t_us;
        frames[k].t_end = frames[k].t_start + delta_t_us;
    }

    for (const Event& e : stream) {
        if (e.t <= t0) continue; // lower edge is open
        const std::int64_t k = static_cast<std::int64_t>((e.t - t0 - 1) / delta_t_us);
        if (k >= bins) continue;
        frames[k].values.at(0, e.y, e.x) += static_cast<float>(e.p);
    }
    return frames;
}

std::vector<SequenceSample> slice_clips(std::span<const VoxelFrame> frames, std::span<const Label> labels,
                                        int seq_len, int stride) {
    if (seq_len < 1 || stride < 1) throw DataError("slice_clips: seq_len and stride must be >= 1");
    if (frames.size() != labels.size())
        throw DataError("slice_clips: " + std::to_string(frames.size()) + " frames vs " +
                        std::to_string(labels.size()) + " labels");
    std::vector<SequenceSample> clips;
    if (frames.size() < static_cast<std::size_t>(seq_len)) return clips;
    const std::size_t count = (frames.size() - seq_len) / stride + 1;
    clips.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start = i * stride;
        clips.push_back({frames.subspan(start, seq_len), labels.subspan(start, seq_len)});
    }
    return clips;
}

std::int64_t signed_event_mass(std::span<const Event> stream, std::uint64_t t0, std::uint64_t delta_t_us,
                               std::int64_t n_bins) {
    std::int64_t mass = 0;
    for (const Event& e : stream) {
        if (e.t <= t0) continue;
        if (n_bins >= 0 && delta_t_us > 0) {
            const std::int64_t k = static_cast<std::int64_t>((e.t - t0 - 1) / delta_t_us);
            if (k >= n_bins) continue;
        }
        mass += e.p;
    }
    return mass;
}

std::int64_t frame_mass(const VoxelFrame& f) {
    std::int64_t m = 0;
    for (float v : f.values.data) m += static_cast<std::int64_t>(v);
    return m;
}

} // namespace tet
