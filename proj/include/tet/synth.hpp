#pragma once

#include <cstdint>
#include <vector>

#include "tet/events.hpp"

namespace tet {

// Scene model for the synthetic DVS pupil recording: a dark disk (the pupil)
// wandering over a brighter background. A pixel fires an event whenever its
// log-brightness has moved by more than event_threshold since that pixel's
// last event, polarity following the sign of the change.
struct SyntheticSceneConfig {
    int width = 80;
    int height = 60;
    double pupil_radius_min = 6.0;
    double pupil_radius_max = 9.0;
    double max_speed = 55.0;        // px/s bound on the smooth random walk
    double accel_sigma = 220.0;     // px/s^2 random-walk acceleration scale
    double saccade_rate = 0.4;      // saccades per second
    double saccade_amplitude = 16.0;// typical jump distance, px
    double event_threshold = 0.12;  // log-brightness units
    double noise_rate = 0.08;       // background events / pixel / second
    double background_brightness = 1.0;
    double pupil_brightness = 0.12;
    std::uint64_t sim_dt_us = 500;  // internal integration step
    std::uint64_t seed = 1;
};

// Continuous pupil-center path sampled at the simulation step; queries
// interpolate linearly.
class Trajectory {
public:
    struct Point {
        std::uint64_t t_us;
        double x, y;
    };

    void add(std::uint64_t t_us, double x, double y) { points_.push_back({t_us, x, y}); }
    Label position_at(std::uint64_t t_us) const;
    const std::vector<Point>& points() const { return points_; }

private:
    std::vector<Point> points_;
};

struct SyntheticStream {
    std::vector<Event> events; // sorted by t
    Trajectory trajectory;
};

SyntheticStream generate_synthetic_stream(const SyntheticSceneConfig& config, std::uint64_t duration_us);

} // namespace tet
