#pragma once

#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

#include "tet/fileio.hpp"
#include "tet/model.hpp"

// Weight file: magic "3ETW0001", u32 header length, plain-text header listing
// every parameter and BN running statistic (name, shape, payload byte offset),
// then little-endian float32 payloads in header order.

namespace tet {

namespace detail {

constexpr char kWeightMagic[] = "3ETW0001";

inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

inline float get_f32(const unsigned char* p) {
    const std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

struct WeightHeaderEntry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset = 0;
};

inline std::vector<WeightHeaderEntry> parse_weight_header(const std::string& text) {
    std::vector<WeightHeaderEntry> entries;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        WeightHeaderEntry e;
        int rank = 0;
        ls >> tag >> e.name >> rank;
        if (tag != "tensor" || rank <= 0 || rank > 8)
            throw DataError("weights: malformed header line '" + line + "'");
        e.shape.resize(rank);
        for (int i = 0; i < rank; ++i) ls >> e.shape[i];
        ls >> e.offset;
        if (!ls) throw DataError("weights: malformed header line '" + line + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

} // namespace detail

template <class T>
void save_weights(const Model<T>& model, const std::filesystem::path& path) {
    Model<T>& m = const_cast<Model<T>&>(model); // entries are read-only here
    std::vector<std::vector<T>> count_storage;
    std::vector<ParamEntry<T>> entries = collect_param_entries(m);
    const auto stats = collect_stat_entries(m, count_storage);
    entries.insert(entries.end(), stats.begin(), stats.end());

    std::string header;
    std::string payload;
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        header += "tensor " + e.name + " " + std::to_string(e.shape.size());
        for (int d : e.shape) header += " " + std::to_string(d);
        header += " " + std::to_string(offset) + "\n";
        for (std::size_t i = 0; i < e.n; ++i) detail::put_f32(payload, static_cast<float>(e.data[i]));
        offset += e.n * 4;
    }

    std::string out;
    out.append(detail::kWeightMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    out += payload;
    atomic_write_file(path, out);
}

template <class T>
Model<T> load_weights(const std::filesystem::path& path, const ModelConfig& cfg) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 12) throw DataError("weights: truncated header at byte offset " + std::to_string(bytes.size()));
    if (std::memcmp(bytes.data(), detail::kWeightMagic, 8) != 0)
        throw DataError("weights: bad magic, expected 3ETW0001");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t header_len = get_u32(p + 8);
    if (bytes.size() < 12 + header_len) throw DataError("weights: truncated header block");
    const std::string header(bytes.data() + 12, header_len);
    const auto file_entries = detail::parse_weight_header(header);
    const std::size_t payload_start = 12 + header_len;

    Model<T> m = build_model<T>(cfg, 0);
    std::vector<std::vector<T>> count_storage;
    std::vector<ParamEntry<T>> want = collect_param_entries(m);
    const auto stats = collect_stat_entries(m, count_storage);
    want.insert(want.end(), stats.begin(), stats.end());

    if (file_entries.size() != want.size())
        throw DataError("weights: file lists " + std::to_string(file_entries.size()) + " tensors, model needs " +
                        std::to_string(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
        const auto& fe = file_entries[i];
        const auto& we = want[i];
        if (fe.name != we.name || fe.shape != we.shape)
            throw DataError("weights: tensor '" + fe.name + "' " + shape_str(fe.shape) +
                            " does not match expected '" + we.name + "' " + shape_str(we.shape));
        const std::size_t need = payload_start + fe.offset + we.n * 4;
        if (bytes.size() < need)
            throw DataError("weights: truncated payload for '" + fe.name + "' at byte offset " +
                            std::to_string(bytes.size()));
        const unsigned char* src = p + payload_start + fe.offset;
        for (std::size_t k = 0; k < we.n; ++k) we.data[k] = static_cast<T>(detail::get_f32(src + 4 * k));
    }
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        m.layers[i].bn.batches_seen = static_cast<std::int64_t>(count_storage[i][0]);
    return m;
}

} // namespace tet
