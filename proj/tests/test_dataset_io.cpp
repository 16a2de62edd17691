#include <doctest.h>

#include <filesystem>

#include "tet/dataset_io.hpp"
#include "tet/fileio.hpp"
#include "tet/synth.hpp"

using namespace tet;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(std::uint64_t seed = 3) {
    SyntheticSceneConfig cfg;
    cfg.seed = seed;
    const std::uint64_t duration = 500'000; // 0.5 s
    const std::uint64_t dt = 4400;
    const auto stream = generate_synthetic_stream(cfg, duration);
    const std::size_t n_frames = duration / dt;
    std::vector<Event> events;
    for (const auto& e : stream.events)
        if (e.t <= n_frames * dt) events.push_back(e);
    std::vector<Label> labels(n_frames);
    for (std::size_t k = 0; k < n_frames; ++k)
        labels[k] = stream.trajectory.position_at((k + 1) * dt);
    return assemble_dataset(cfg.width, cfg.height, dt, seed, std::move(events), std::move(labels));
}

struct TempDir {
    fs::path path;
    TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("dataset round trip preserves events and labels") {
    TempDir dir("tet_ds_roundtrip");
    const Dataset ds = small_dataset();
    REQUIRE(!ds.events.empty());
    write_dataset(dir.path, ds);

    const Dataset back = read_dataset(dir.path);
    CHECK(back.width == ds.width);
    CHECK(back.height == ds.height);
    CHECK(back.delta_t_us == ds.delta_t_us);
    CHECK(back.seed == ds.seed);
    REQUIRE(back.events.size() == ds.events.size());
    for (std::size_t i = 0; i < ds.events.size(); ++i) {
        CHECK(back.events[i].x == ds.events[i].x);
        CHECK(back.events[i].y == ds.events[i].y);
        CHECK(back.events[i].p == ds.events[i].p);
        CHECK(back.events[i].t == ds.events[i].t);
    }
    REQUIRE(back.labels.size() == ds.labels.size());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        CHECK(back.labels[i].x == doctest::Approx(ds.labels[i].x).epsilon(1e-6));
        CHECK(back.labels[i].y == doctest::Approx(ds.labels[i].y).epsilon(1e-6));
    }
    CHECK(back.frames.size() == ds.frames.size());
}

TEST_CASE("write-read-write emits byte-identical files") {
    TempDir a("tet_ds_bytes_a"), b("tet_ds_bytes_b");
    const Dataset ds = small_dataset(11);
    write_dataset(a.path, ds);
    const Dataset back = read_dataset(a.path);
    write_dataset(b.path, back);
    for (const char* name : {"events.evt", "labels.csv", "meta.toml"})
        CHECK(read_file_bytes(a.path / name) == read_file_bytes(b.path / name));
}

TEST_CASE("truncated event file reports the byte offset") {
    TempDir dir("tet_ds_trunc");
    const Dataset ds = small_dataset(7);
    write_dataset(dir.path, ds);
    std::string bytes = read_file_bytes(dir.path / "events.evt");
    bytes.resize(bytes.size() - 5); // cut into the last record
    atomic_write_file(dir.path / "events.evt", bytes);
    try {
        read_dataset(dir.path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
}

TEST_CASE("bad magic is rejected") {
    CHECK_THROWS_AS(decode_events("XXXXXXXXxxxxxxxx", nullptr, nullptr), DataError);
}

TEST_CASE("invalid polarity is rejected with its offset") {
    std::string bytes = encode_events(4, 4, {{1, 1, 1, 10}});
    bytes[16 + 4] = 3; // polarity byte of record 0
    try {
        decode_events(bytes, nullptr, nullptr);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("16") != std::string::npos);
    }
}

TEST_CASE("label/frame count mismatch is rejected with both counts") {
    TempDir dir("tet_ds_mismatch");
    const Dataset ds = small_dataset(13);
    write_dataset(dir.path, ds);
    // drop the last label row
    std::string csv = read_file_bytes(dir.path / "labels.csv");
    csv.erase(csv.rfind('\n', csv.size() - 2) + 1);
    atomic_write_file(dir.path / "labels.csv", csv);
    try {
        read_dataset(dir.path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string what = e.what();
        CHECK(what.find(std::to_string(ds.labels.size())) != std::string::npos);
        CHECK(what.find(std::to_string(ds.labels.size() - 1)) != std::string::npos);
    }
}

TEST_CASE("events past the labeled range are rejected") {
    std::vector<Event> events = {{1, 1, 1, 95'000}}; // frame 21 at dt=4400
    std::vector<Label> labels(10, {2.0, 2.0});       // only 10 frames
    CHECK_THROWS_AS(assemble_dataset(8, 8, 4400, 1, std::move(events), std::move(labels)), DataError);
}

TEST_CASE("labels outside the frame are rejected") {
    std::vector<Label> labels(2, {9.5, 2.0});
    CHECK_THROWS_AS(assemble_dataset(8, 8, 4400, 1, {}, std::move(labels)), DataError);
}
