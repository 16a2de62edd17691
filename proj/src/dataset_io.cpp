#include "tet/dataset_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

#include "tet/errors.hpp"
#include "tet/fileio.hpp"

namespace tet {

namespace {

constexpr char kEventMagic[] = "EVT3ET01";
constexpr std::size_t kHeaderBytes = 8 + 2 + 2 + 4;
constexpr std::size_t kRecordBytes = 16;

std::string format_label(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& what) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(what + ": malformed line '" + line + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::uint64_t kv_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                     const std::string& what) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(what + ": missing key '" + key + "'");
    return std::strtoull(it->second.c_str(), nullptr, 10);
}

} // namespace

std::string encode_events(int width, int height, const std::vector<Event>& events) {
    std::string buf;
    buf.reserve(kHeaderBytes + events.size() * kRecordBytes);
    buf.append(kEventMagic, 8);
    put_u16(buf, static_cast<std::uint16_t>(width));
    put_u16(buf, static_cast<std::uint16_t>(height));
    put_u32(buf, 0); // reserved
    for (const Event& e : events) {
        put_u16(buf, e.x);
        put_u16(buf, e.y);
        buf.push_back(static_cast<char>(e.p));
        buf.append(3, '\0');
        put_u64(buf, e.t);
    }
    return buf;
}

std::vector<Event> decode_events(const std::string& bytes, int* width_out, int* height_out) {
    if (bytes.size() < kHeaderBytes)
        throw DataError("events.evt: truncated header at byte offset " + std::to_string(bytes.size()) +
                        " (need " + std::to_string(kHeaderBytes) + ")");
    if (std::memcmp(bytes.data(), kEventMagic, 8) != 0)
        throw DataError("events.evt: bad magic, expected EVT3ET01");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const int width = get_u16(p + 8);
    const int height = get_u16(p + 10);
    if (width_out) *width_out = width;
    if (height_out) *height_out = height;

    const std::size_t payload = bytes.size() - kHeaderBytes;
    if (payload % kRecordBytes != 0)
        throw DataError("events.evt: truncated record at byte offset " +
                        std::to_string(kHeaderBytes + (payload / kRecordBytes) * kRecordBytes));

    std::vector<Event> events(payload / kRecordBytes);
    std::uint64_t prev_t = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const std::size_t off = kHeaderBytes + i * kRecordBytes;
        const auto* r = p + off;
        Event e;
        e.x = get_u16(r);
        e.y = get_u16(r + 2);
        e.p = static_cast<std::int8_t>(r[4]);
        e.t = get_u64(r + 8);
        if (e.p != 1 && e.p != -1)
            throw DataError("events.evt: invalid polarity " + std::to_string(int(e.p)) +
                            " at byte offset " + std::to_string(off));
        if (e.x >= width || e.y >= height)
            throw DataError("events.evt: event outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " at byte offset " + std::to_string(off));
        if (i > 0 && e.t < prev_t)
            throw DataError("events.evt: unsorted timestamp at byte offset " + std::to_string(off));
        prev_t = e.t;
        events[i] = e;
    }
    return events;
}

std::string encode_labels_csv(const std::vector<Label>& labels) {
    std::string out = "frame_index,x,y\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out += std::to_string(i) + "," + format_label(labels[i].x) + "," + format_label(labels[i].y) + "\n";
    return out;
}

std::vector<Label> decode_labels_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("labels.csv: empty file");
    if (line == "frame_index,x,y\r") line.pop_back();
    if (line != "frame_index,x,y")
        throw DataError("labels.csv: bad header '" + line + "', expected frame_index,x,y");
    std::vector<Label> labels;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::uint64_t idx = 0;
        double x = 0, y = 0;
        if (std::sscanf(line.c_str(), "%" SCNu64 ",%lf,%lf", &idx, &x, &y) != 3)
            throw DataError("labels.csv: malformed row " + std::to_string(row) + ": '" + line + "'");
        if (idx != row)
            throw DataError("labels.csv: frame_index " + std::to_string(idx) + " at row " +
                            std::to_string(row) + " is out of order");
        labels.push_back({x, y});
        ++row;
    }
    return labels;
}

Dataset assemble_dataset(int width, int height, std::uint64_t delta_t_us, std::uint64_t seed,
                         std::vector<Event> events, std::vector<Label> labels) {
    Dataset ds;
    ds.width = width;
    ds.height = height;
    ds.delta_t_us = delta_t_us;
    ds.seed = seed;
    ds.events = std::move(events);
    ds.labels = std::move(labels);

    // every event must fit inside the labeled frame range
    std::int64_t implied = 0;
    for (const Event& e : ds.events)
        if (e.t > 0) {
            const std::int64_t k = static_cast<std::int64_t>((e.t - 1) / delta_t_us);
            implied = std::max(implied, k + 1);
        }
    if (implied > static_cast<std::int64_t>(ds.labels.size()))
        throw DataError("dataset: events span " + std::to_string(implied) + " frames but labels.csv has " +
                        std::to_string(ds.labels.size()) + " rows");
    for (const Label& l : ds.labels)
        if (l.x < 0 || l.x >= width || l.y < 0 || l.y >= height)
            throw DataError("dataset: label outside frame bounds");

    ds.frames = frame_events(ds.events, delta_t_us, width, height, 0,
                             static_cast<std::int64_t>(ds.labels.size()));
    return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "events.evt", encode_events(ds.width, ds.height, ds.events));
    atomic_write_file(dir / "labels.csv", encode_labels_csv(ds.labels));
    std::string meta;
    meta += "delta_t_us = " + std::to_string(ds.delta_t_us) + "\n";
    meta += "width = " + std::to_string(ds.width) + "\n";
    meta += "height = " + std::to_string(ds.height) + "\n";
    meta += "seed = " + std::to_string(ds.seed) + "\n";
    meta += "frames = " + std::to_string(ds.labels.size()) + "\n";
    atomic_write_file(dir / "meta.toml", meta);
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const auto kv = parse_kv(read_file_bytes(dir / "meta.toml"), "meta.toml");
    const std::uint64_t delta_t_us = kv_u64(kv, "delta_t_us", "meta.toml");
    const int width = static_cast<int>(kv_u64(kv, "width", "meta.toml"));
    const int height = static_cast<int>(kv_u64(kv, "height", "meta.toml"));
    const std::uint64_t seed = kv_u64(kv, "seed", "meta.toml");
    const std::uint64_t meta_frames = kv_u64(kv, "frames", "meta.toml");
    if (delta_t_us == 0) throw DataError("meta.toml: delta_t_us must be positive");

    int evt_w = 0, evt_h = 0;
    std::vector<Event> events = decode_events(read_file_bytes(dir / "events.evt"), &evt_w, &evt_h);
    if (evt_w != width || evt_h != height)
        throw DataError("dataset: events.evt resolution " + std::to_string(evt_w) + "x" +
                        std::to_string(evt_h) + " disagrees with meta.toml " + std::to_string(width) +
                        "x" + std::to_string(height));

    std::vector<Label> labels = decode_labels_csv(read_file_bytes(dir / "labels.csv"));
    if (labels.size() != meta_frames)
        throw DataError("dataset: labels.csv has " + std::to_string(labels.size()) +
                        " rows but meta.toml declares " + std::to_string(meta_frames) + " frames");

    return assemble_dataset(width, height, delta_t_us, seed, std::move(events), std::move(labels));
}

} // namespace tet
