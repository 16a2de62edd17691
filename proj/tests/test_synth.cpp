#include <doctest.h>

#include <cmath>

#include "tet/events.hpp"
#include "tet/synth.hpp"

using namespace tet;

TEST_CASE("static scene with no noise emits no events") {
    SyntheticSceneConfig cfg;
    cfg.max_speed = 0;
    cfg.saccade_rate = 0;
    cfg.noise_rate = 0;
    cfg.pupil_radius_min = cfg.pupil_radius_max = 7.0; // no dilation either
    const auto out = generate_synthetic_stream(cfg, 2'000'000);
    CHECK(out.events.empty());
}

TEST_CASE("identical seeds give identical streams") {
    SyntheticSceneConfig cfg;
    cfg.seed = 99;
    const auto a = generate_synthetic_stream(cfg, 1'000'000);
    const auto b = generate_synthetic_stream(cfg, 1'000'000);
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        CHECK(a.events[i].x == b.events[i].x);
        CHECK(a.events[i].y == b.events[i].y);
        CHECK(a.events[i].p == b.events[i].p);
        CHECK(a.events[i].t == b.events[i].t);
    }
    CHECK(a.trajectory.points().size() == b.trajectory.points().size());

    SyntheticSceneConfig other = cfg;
    other.seed = 100;
    const auto c = generate_synthetic_stream(other, 1'000'000);
    CHECK(c.events.size() != a.events.size());
}

TEST_CASE("events are sorted, in bounds, and carry valid polarities") {
    SyntheticSceneConfig cfg;
    cfg.seed = 5;
    const auto out = generate_synthetic_stream(cfg, 2'000'000);
    REQUIRE(!out.events.empty());
    std::uint64_t prev = 0;
    for (const auto& e : out.events) {
        CHECK(e.x < cfg.width);
        CHECK(e.y < cfg.height);
        CHECK((e.p == 1 || e.p == -1));
        CHECK(e.t >= prev);
        CHECK(e.t >= 1);
        prev = e.t;
    }
}

TEST_CASE("trajectory stays inside the frame") {
    SyntheticSceneConfig cfg;
    cfg.seed = 17;
    cfg.max_speed = 120;
    cfg.saccade_rate = 3.0;
    const auto out = generate_synthetic_stream(cfg, 5'000'000);
    for (const auto& p : out.trajectory.points()) {
        CHECK(p.x >= 0.0);
        CHECK(p.x < cfg.width);
        CHECK(p.y >= 0.0);
        CHECK(p.y < cfg.height);
    }
}

TEST_CASE("event centroid tracks the moving disk center") {
    SyntheticSceneConfig cfg;
    cfg.seed = 23;
    cfg.noise_rate = 0;     // signal events only
    cfg.saccade_rate = 0;   // smooth motion
    cfg.max_speed = 60;
    const std::uint64_t duration = 4'000'000;
    const auto out = generate_synthetic_stream(cfg, duration);
    REQUIRE(out.events.size() > 500);

    const std::uint64_t dt = 4400;
    const auto frames = frame_events(out.events, dt, cfg.width, cfg.height);

    double err_sum = 0;
    std::size_t used = 0;
    std::size_t idx = 0;
    std::vector<std::size_t> starts(frames.size() + 1, out.events.size());
    // events are sorted; walk bins once
    for (std::size_t k = 0; k < frames.size(); ++k) {
        double cx = 0, cy = 0;
        std::size_t n = 0;
        while (idx < out.events.size() && out.events[idx].t <= frames[k].t_end) {
            cx += out.events[idx].x;
            cy += out.events[idx].y;
            ++n;
            ++idx;
        }
        if (n < 20) continue;
        cx /= n;
        cy /= n;
        const Label truth = out.trajectory.position_at(frames[k].t_end);
        err_sum += std::hypot(cx - truth.x, cy - truth.y);
        ++used;
    }
    REQUIRE(used > 100);
    const double mean_err = err_sum / used;
    CHECK(mean_err < 2.0);
}

TEST_CASE("invalid configs are rejected") {
    SyntheticSceneConfig cfg;
    cfg.pupil_radius_min = 40; // cannot fit in 80x60 with margin
    cfg.pupil_radius_max = 40;
    CHECK_THROWS_AS(generate_synthetic_stream(cfg, 1000), DataError);

    SyntheticSceneConfig bad;
    bad.event_threshold = 0;
    CHECK_THROWS_AS(generate_synthetic_stream(bad, 1000), DataError);
}
