#include <doctest.h>

#include <map>

#include "tet/events.hpp"
#include "tet/rng.hpp"

using namespace tet;

TEST_CASE("single event lands at its pixel with its polarity") {
    const std::vector<Event> ev = {{3, 2, 1, 5}};
    const auto frames = frame_events(ev, 10, 8, 6);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].values.at(0, 2, 3) == 1.0f);
    CHECK(frame_mass(frames[0]) == 1);
    CHECK(frames[0].t_start == 0);
    CHECK(frames[0].t_end == 10);
}

TEST_CASE("opposite polarities at one pixel cancel") {
    const std::vector<Event> ev = {{3, 2, 1, 4}, {3, 2, -1, 6}};
    const auto frames = frame_events(ev, 10, 8, 6);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].values.at(0, 2, 3) == 0.0f);
}

TEST_CASE("bin boundaries: lower edge open, upper edge closed") {
    // t == t0 is out of range; t == t0 + dt belongs to bin 0
    const std::vector<Event> ev = {{0, 0, 1, 0}, {1, 0, 1, 10}, {2, 0, 1, 11}};
    const auto frames = frame_events(ev, 10, 8, 6, 0);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].values.at(0, 0, 0) == 0.0f); // t=0 dropped
    CHECK(frames[0].values.at(0, 0, 1) == 1.0f); // t=10 in bin 0
    CHECK(frames[1].values.at(0, 0, 2) == 1.0f); // t=11 in bin 1
}

TEST_CASE("random streams match a brute-force accumulation and conserve mass") {
    Rng rng(113);
    for (int trial = 0; trial < 20; ++trial) {
        const int W = 16, H = 12;
        const std::uint64_t dt = 50;
        std::vector<Event> ev(1000);
        std::uint64_t t = 0;
        for (auto& e : ev) {
            t += rng.index(3); // sorted, possibly equal timestamps
            e = {static_cast<std::uint16_t>(rng.index(W)), static_cast<std::uint16_t>(rng.index(H)),
                 rng.uniform() < 0.5 ? std::int8_t(1) : std::int8_t(-1), t};
        }
        const auto frames = frame_events(ev, dt, W, H);

        // brute force per pixel over all events
        std::map<std::tuple<std::size_t, int, int>, std::int64_t> want;
        std::size_t in_range = 0;
        for (const auto& e : ev) {
            if (e.t == 0) continue;
            const std::size_t k = (e.t - 1) / dt;
            want[{k, e.y, e.x}] += e.p;
            ++in_range;
        }
        for (const auto& [key, value] : want) {
            const auto [k, y, x] = key;
            REQUIRE(k < frames.size());
            CHECK(frames[k].values.at(0, y, x) == static_cast<float>(value));
        }

        std::int64_t total = 0;
        for (const auto& f : frames) total += frame_mass(f);
        CHECK(total == signed_event_mass(ev));

        // partition: every in-range event is assigned to exactly one bin
        std::size_t assigned = 0;
        for (const auto& e : ev) {
            if (e.t == 0) continue;
            const std::size_t k = (e.t - 1) / dt;
            std::size_t count = 0;
            for (std::size_t j = 0; j < frames.size(); ++j)
                if (e.t > frames[j].t_start && e.t <= frames[j].t_end) ++count;
            CHECK(count == 1);
            CHECK(e.t > frames[k].t_start);
            CHECK(e.t <= frames[k].t_end);
            ++assigned;
        }
        CHECK(assigned == in_range);
    }
}

TEST_CASE("out-of-bounds events are rejected") {
    const std::vector<Event> ev = {{8, 2, 1, 5}};
    CHECK_THROWS_AS(frame_events(ev, 10, 8, 6), DataError);
}

TEST_CASE("unsorted events are rejected") {
    const std::vector<Event> ev = {{1, 1, 1, 10}, {1, 1, 1, 5}};
    CHECK_THROWS_AS(frame_events(ev, 10, 8, 6), DataError);
}

TEST_CASE("slice_clips counts follow the closed form") {
    std::vector<VoxelFrame> frames(10);
    std::vector<Label> labels(10);
    CHECK(slice_clips(frames, labels, 5, 1).size() == 6);

    frames.resize(40);
    labels.resize(40);
    CHECK(slice_clips(frames, labels, 40, 1).size() == 1);
    CHECK(slice_clips(frames, labels, 41, 1).empty());

    frames.resize(11000);
    labels.resize(11000);
    CHECK(slice_clips(frames, labels, 40, 1).size() == 10961);
}

TEST_CASE("slice_clips windows are positioned by the stride") {
    std::vector<VoxelFrame> frames(9);
    std::vector<Label> labels(9);
    for (int i = 0; i < 9; ++i) labels[i].x = i;
    const auto clips = slice_clips(frames, labels, 3, 2);
    REQUIRE(clips.size() == 4); // floor((9-3)/2)+1
    for (std::size_t i = 0; i < clips.size(); ++i) {
        CHECK(clips[i].frames.size() == 3);
        CHECK(clips[i].labels[0].x == doctest::Approx(2.0 * i));
    }
}

TEST_CASE("slice_clips randomized formula sweep") {
    Rng rng(127);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = rng.index(60);
        const int seq = 1 + static_cast<int>(rng.index(20));
        const int stride = 1 + static_cast<int>(rng.index(5));
        std::vector<VoxelFrame> frames(n);
        std::vector<Label> labels(n);
        const auto clips = slice_clips(frames, labels, seq, stride);
        if (n < static_cast<std::size_t>(seq))
            CHECK(clips.empty());
        else
            CHECK(clips.size() == (n - seq) / stride + 1);
    }
}

TEST_CASE("slice_clips rejects mismatched label counts") {
    std::vector<VoxelFrame> frames(5);
    std::vector<Label> labels(4);
    CHECK_THROWS_AS(slice_clips(frames, labels, 2, 1), DataError);
}
