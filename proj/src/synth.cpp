#include "tet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "tet/errors.hpp"
#include "tet/rng.hpp"

namespace tet {

namespace {

// linear edge band of ~1px keeps event generation smooth as the disk moves
double disk_log_brightness(double px, double py, double cx, double cy, double radius,
                           double log_bg, double log_pupil) {
    const double d = std::hypot(px - cx, py - cy);
    double cov = radius + 0.5 - d;
    cov = std::clamp(cov, 0.0, 1.0);
    return log_bg + cov * (log_pupil - log_bg);
}

struct Motion {
    double x, y, vx, vy, radius, radius_v;
    double sacc_left = 0.0; // seconds of saccade remaining
    double sacc_vx = 0.0, sacc_vy = 0.0;
};

} // namespace

Label Trajectory::position_at(std::uint64_t t_us) const {
    if (points_.empty()) throw DataError("trajectory: empty");
    if (t_us <= points_.front().t_us) return {points_.front().x, points_.front().y};
    if (t_us >= points_.back().t_us) return {points_.back().x, points_.back().y};
    const auto it = std::lower_bound(points_.begin(), points_.end(), t_us,
                                     [](const Point& p, std::uint64_t t) { return p.t_us < t; });
    const Point& b = *it;
    const Point& a = *(it - 1);
    const double f = static_cast<double>(t_us - a.t_us) / static_cast<double>(b.t_us - a.t_us);
    return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
}

SyntheticStream generate_synthetic_stream(const SyntheticSceneConfig& cfg, std::uint64_t duration_us) {
    if (cfg.width <= 0 || cfg.height <= 0) throw DataError("synthetic: bad resolution");
    if (cfg.pupil_radius_min > cfg.pupil_radius_max || cfg.pupil_radius_min <= 0)
        throw DataError("synthetic: bad pupil radius range");
    if (cfg.event_threshold <= 0) throw DataError("synthetic: event threshold must be positive");
    const double margin = cfg.pupil_radius_max + 2.0;
    if (2 * margin >= cfg.width || 2 * margin >= cfg.height)
        throw DataError("synthetic: pupil does not fit the frame");

    Rng rng(sub_seed(cfg.seed, "synthetic-scene"));
    Rng noise_rng(sub_seed(cfg.seed, "synthetic-noise"));

    const double log_bg = std::log(cfg.background_brightness);
    const double log_pupil = std::log(cfg.pupil_brightness);
    const double dt = static_cast<double>(cfg.sim_dt_us) * 1e-6;
    const std::uint64_t steps = duration_us / cfg.sim_dt_us;

    Motion m;
    m.x = rng.uniform(margin, cfg.width - margin);
    m.y = rng.uniform(margin, cfg.height - margin);
    const double v0 = cfg.max_speed > 0 ? rng.uniform(0.3, 1.0) * cfg.max_speed : 0.0;
    const double a0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    m.vx = v0 * std::cos(a0);
    m.vy = v0 * std::sin(a0);
    m.radius = rng.uniform(cfg.pupil_radius_min, cfg.pupil_radius_max);
    m.radius_v = 0.0;

    // per-pixel log-brightness at the pixel's last event
    std::vector<double> ref(static_cast<std::size_t>(cfg.width) * cfg.height);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
            ref[static_cast<std::size_t>(y) * cfg.width + x] =
                disk_log_brightness(x, y, m.x, m.y, m.radius, log_bg, log_pupil);

    SyntheticStream out;
    out.trajectory.add(0, m.x, m.y);

    for (std::uint64_t step = 1; step <= steps; ++step) {
        const std::uint64_t t_us = step * cfg.sim_dt_us;
        const double prev_x = m.x, prev_y = m.y;

        if (m.sacc_left > 0.0) {
            m.vx = m.sacc_vx;
            m.vy = m.sacc_vy;
            m.sacc_left -= dt;
        } else {
            if (cfg.saccade_rate > 0 && rng.uniform() < cfg.saccade_rate * dt) {
                const double amp = cfg.saccade_amplitude * rng.uniform(0.6, 1.4);
                const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                const double sacc_time = 0.030;
                m.sacc_vx = amp * std::cos(ang) / sacc_time;
                m.sacc_vy = amp * std::sin(ang) / sacc_time;
                m.sacc_left = sacc_time;
            } else if (cfg.max_speed > 0) {
                m.vx += cfg.accel_sigma * rng.gaussian() * std::sqrt(dt);
                m.vy += cfg.accel_sigma * rng.gaussian() * std::sqrt(dt);
                const double speed = std::hypot(m.vx, m.vy);
                if (speed > cfg.max_speed) {
                    m.vx *= cfg.max_speed / speed;
                    m.vy *= cfg.max_speed / speed;
                }
            }
        }

        m.x += m.vx * dt;
        m.y += m.vy * dt;
        // reflect so the disk stays inside the frame
        if (m.x < margin) { m.x = 2 * margin - m.x; m.vx = -m.vx; m.sacc_vx = -m.sacc_vx; }
        if (m.x > cfg.width - margin) { m.x = 2 * (cfg.width - margin) - m.x; m.vx = -m.vx; m.sacc_vx = -m.sacc_vx; }
        if (m.y < margin) { m.y = 2 * margin - m.y; m.vy = -m.vy; m.sacc_vy = -m.sacc_vy; }
        if (m.y > cfg.height - margin) { m.y = 2 * (cfg.height - margin) - m.y; m.vy = -m.vy; m.sacc_vy = -m.sacc_vy; }

        m.radius_v += 2.0 * rng.gaussian() * std::sqrt(dt);
        m.radius_v = std::clamp(m.radius_v, -1.5, 1.5);
        m.radius += m.radius_v * dt;
        if (m.radius < cfg.pupil_radius_min) { m.radius = cfg.pupil_radius_min; m.radius_v = 0; }
        if (m.radius > cfg.pupil_radius_max) { m.radius = cfg.pupil_radius_max; m.radius_v = 0; }

        out.trajectory.add(t_us, m.x, m.y);

        // only pixels near the previous/current disk can change brightness
        const double reach = cfg.pupil_radius_max + 2.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(prev_x, m.x) - reach)));
        const int x1 = std::min(cfg.width - 1, static_cast<int>(std::ceil(std::max(prev_x, m.x) + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(prev_y, m.y) - reach)));
        const int y1 = std::min(cfg.height - 1, static_cast<int>(std::ceil(std::max(prev_y, m.y) + reach)));

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y) * cfg.width + x;
                const double level =
                    disk_log_brightness(x, y, m.x, m.y, m.radius, log_bg, log_pupil);
                const double diff = level - ref[idx];
                if (diff >= cfg.event_threshold || diff <= -cfg.event_threshold) {
                    const int n = static_cast<int>(std::floor(std::abs(diff) / cfg.event_threshold));
                    const std::int8_t pol = diff > 0 ? 1 : -1;
                    for (int k = 0; k < n; ++k)
                        out.events.push_back({static_cast<std::uint16_t>(x),
                                              static_cast<std::uint16_t>(y), pol, t_us});
                    ref[idx] += pol * n * cfg.event_threshold;
                }
            }
        }

        if (cfg.noise_rate > 0) {
            const double lambda = cfg.noise_rate * cfg.width * cfg.height * dt;
            const int n = noise_rng.poisson(lambda);
            for (int k = 0; k < n; ++k) {
                const std::uint16_t x = static_cast<std::uint16_t>(noise_rng.index(cfg.width));
                const std::uint16_t y = static_cast<std::uint16_t>(noise_rng.index(cfg.height));
                const std::int8_t pol = noise_rng.uniform() < 0.5 ? 1 : -1;
                out.events.push_back({x, y, pol, t_us});
            }
        }
    }
    return out;
}

} // namespace tet
