#include "mcs3d/scanner.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mcs3d/error.hpp"
#include "mcs3d/geohash.hpp"

namespace mcs3d {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

std::uint32_t SensorModel::confidence_for(double true_range) const {
    if (true_range <= 3.0) return 2;
    if (true_range <= reliable_range) return 1;
    return 0;
}

double Trajectory::length() const {
    double l = 0.0;
    for (std::size_t i = 1; i < waypoints.size(); ++i) l += (waypoints[i] - waypoints[i - 1]).norm();
    return l;
}

Trajectory street_trajectory(const SceneModel& scene, double length, std::uint64_t seed) {
    if (!(length > 0.0)) throw ParameterError("trajectory length must be positive");
    const int nx = static_cast<int>(std::floor((scene.extent.x() - kHalfStreet) / kStreetPitch));
    const int ny = static_cast<int>(std::floor((scene.extent.y() - kHalfStreet) / kStreetPitch));
    if (nx < 1 || ny < 1 || nx * ny < 2) throw ParameterError("scene needs at least two street intersections");
    std::mt19937_64 rng(seed);
    auto pick = [&rng](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    // Intersection lattice (i, j) in [1, nx] x [1, ny]; edges may also run out to a border street.
    int i = 1 + pick(nx), j = 1 + pick(ny);
    Trajectory t;
    t.waypoints.push_back({i * kStreetPitch, j * kStreetPitch});
    double walked = 0.0;
    int last_dir = -1;
    static constexpr int kDx[] = {1, 0, -1, 0};
    static constexpr int kDy[] = {0, 1, 0, -1};
    while (walked < length) {
        std::vector<int> options;
        for (int d = 0; d < 4; ++d) {
            const int ni = i + kDx[d], nj = j + kDy[d];
            if (ni < 1 || nj < 1 || ni > nx || nj > ny) continue;
            if (last_dir >= 0 && d == (last_dir + 2) % 4) continue;  // no U-turns
            options.push_back(d);
        }
        if (options.empty()) options.push_back((last_dir + 2) % 4);
        const int d = options[static_cast<std::size_t>(pick(static_cast<int>(options.size())))];
        const double step = std::min(kStreetPitch, length - walked);
        const Eigen::Vector2d from(i * kStreetPitch, j * kStreetPitch);
        const Eigen::Vector2d dir(kDx[d], kDy[d]);
        t.waypoints.push_back(from + dir * step);
        walked += step;
        i += kDx[d];
        j += kDy[d];
        last_dir = d;
    }
    return t;
}

std::vector<Pose> Trajectory::sample(const SensorModel& sensor, double mount_height) const {
    if (waypoints.empty()) throw ParameterError("trajectory has no waypoints");
    if (!(speed > 0.0) || !(sensor.frame_rate > 0.0)) throw ParameterError("speed and frame rate must be positive");
    const double step = speed / sensor.frame_rate;
    const double total = length();
    const auto frames = static_cast<std::size_t>(std::floor(total / step)) + 1;
    std::vector<Pose> poses;
    poses.reserve(frames);
    std::size_t seg = 0;
    double seg_start = 0.0;
    double base_heading = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
        const double s = std::min(static_cast<double>(f) * step, total);
        while (seg + 1 < waypoints.size() && seg_start + (waypoints[seg + 1] - waypoints[seg]).norm() < s) {
            seg_start += (waypoints[seg + 1] - waypoints[seg]).norm();
            ++seg;
        }
        Eigen::Vector2d xy = waypoints[seg];
        if (seg + 1 < waypoints.size()) {
            const Eigen::Vector2d d = waypoints[seg + 1] - waypoints[seg];
            const double len = d.norm();
            if (len > 0.0) {
                xy += d * std::clamp((s - seg_start) / len, 0.0, 1.0);
                base_heading = std::atan2(d.y(), d.x());
            }
        }
        const double t = static_cast<double>(f) / sensor.frame_rate;
        const double w = 2.0 * std::numbers::pi / sway_period;
        Pose p;
        p.position = {xy.x(), xy.y(), mount_height};
        const double wp = pan_period > 0.0 ? 2.0 * std::numbers::pi / pan_period : 0.0;
        p.heading = base_heading + sway_deg * kDeg * std::sin(w * t) + pan_deg * kDeg * std::sin(wp * t);
        p.pitch = sensor.pitch_deg * kDeg;
        p.yaw_rate = sway_deg * kDeg * w * std::cos(w * t) + pan_deg * kDeg * wp * std::cos(wp * t);
        p.time = t;
        poses.push_back(p);
    }
    return poses;
}

ScanContext::ScanContext(const SceneModel& scene, SensorModel sensor, std::uint64_t seed)
    : raycaster_(scene), sensor_(sensor), rng_(seed) {}

PointCloud ScanContext::frame(const Pose& pose) {
    PointCloud out(AttributeSchema::canonical(), Frame::SessionLocal);
    const auto rays = sensor_.rays_per_frame;
    out.reserve(rays);
    const double fov_h = sensor_.fov_h_deg * kDeg;
    const double fov_v = sensor_.fov_v_deg * kDeg;
    const auto cols = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(rays) * fov_h / fov_v))));
    const auto rows = (rays + cols - 1) / cols;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, sensor_.range_noise_sigma);
    const auto boxes = raycaster_.near(pose.position.head<2>(), sensor_.max_capture_range);
    const Eigen::Vector3f device = pose.position.cast<float>();
    const Eigen::Vector3f orient(static_cast<float>(pose.roll), static_cast<float>(pose.pitch),
                                 static_cast<float>(pose.heading));
    const Eigen::Vector3f angvel(0.0f, 0.0f, static_cast<float>(pose.yaw_rate));

    for (std::size_t k = 0; k < rays; ++k) {
        const auto r = k / cols, c = k % cols;
        const double az = pose.heading - fov_h / 2.0 + (static_cast<double>(c) + u(rng_)) * fov_h / static_cast<double>(cols);
        const double el = pose.pitch - fov_v / 2.0 + (static_cast<double>(r) + u(rng_)) * fov_v / static_cast<double>(rows);
        const Eigen::Vector3d dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        const double n = noise(rng_);
        const auto hit = raycaster_.cast_among(boxes, pose.position, dir, sensor_.max_capture_range);
        if (!hit) continue;
        const double measured = std::max(0.0, hit->range + n);
        out.position.push_back((pose.position + dir * measured).cast<float>());
        out.color.push_back(hit->color);
        out.confidence.push_back(sensor_.confidence_for(hit->range));
        out.depth.push_back(static_cast<float>(measured));
        out.orientation.push_back(orient);
        out.angular_velocity.push_back(angvel);
        out.device_position.push_back(device);
    }
    return out;
}

PassiveScanResult passive_scan(const SceneModel& scene, const Trajectory& trajectory, const SensorModel& sensor,
                               const PassiveScanConfig& cfg) {
    if (trajectory.waypoints.empty()) throw ParameterError("trajectory has no waypoints");
    for (const auto& w : trajectory.waypoints)
        if (w.x() < 0.0 || w.y() < 0.0 || w.x() > scene.extent.x() || w.y() > scene.extent.y())
            throw ParameterError("trajectory leaves the scene extent");
    if (cfg.chunk_threshold == 0) throw ParameterError("chunk threshold must be positive");

    PassiveScanResult result;
    result.poses = trajectory.sample(sensor, sensor.mount_height);
    ScanContext ctx(scene, sensor, cfg.seed);
    const LocalFrame geo = scene.frame();

    PointCloud buffer(AttributeSchema::canonical(), Frame::SessionLocal);
    double last_time = 0.0;
    auto flush = [&]() {
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto& d : buffer.device_position) c += d.cast<double>();
        c /= static_cast<double>(buffer.size());
        CloudMeta m;
        m.geohash = geohash_encode(geo.to_geo(c.head<2>()), cfg.geohash_precision).str();
        m.session_id = cfg.session_id;
        m.sequence = result.chunks.size();
        m.timestamp = last_time;
        m.origin = std::array<double, 2>{scene.anchor.lat, scene.anchor.lon};
        buffer.meta = m;
        result.chunks.push_back(std::move(buffer));
        buffer = PointCloud(AttributeSchema::canonical(), Frame::SessionLocal);
    };
    for (const auto& pose : result.poses) {
        const auto f = ctx.frame(pose);
        for (std::size_t i = 0; i < f.size(); ++i) buffer.push_from(f, i);
        last_time = pose.time;
        if (buffer.size() > cfg.chunk_threshold) flush();
    }
    if (!buffer.empty()) flush();
    return result;
}

std::vector<Eigen::Vector3d> visible_facade_strip(const SceneModel& scene, std::span<const Pose> poses,
                                                  const SensorModel& sensor, double spacing) {
    constexpr double kRangeMargin = 0.1;
    const SceneRaycaster caster(scene);
    const auto facades = scene.facades();
    struct Sample {
        Eigen::Vector3d p;
        Eigen::Vector2d outward;
        bool seen = false;
    };
    std::vector<std::vector<Sample>> samples(facades.size());
    for (std::size_t f = 0; f < facades.size(); ++f) {
        const auto& fc = facades[f];
        const double len = (fc.b - fc.a).norm();
        const int nu = std::max(1, static_cast<int>(std::ceil(len / spacing)));
        const int nv = std::max(1, static_cast<int>(std::ceil(fc.height / spacing)));
        for (int i = 0; i < nu; ++i)
            for (int j = 0; j < nv; ++j) {
                const Eigen::Vector2d xy = fc.a + (fc.b - fc.a) * ((i + 0.5) / nu);
                samples[f].push_back({{xy.x(), xy.y(), (j + 0.5) * fc.height / nv}, fc.outward});
            }
    }
    const double range = sensor.reliable_range - kRangeMargin;
    const double half_h = sensor.fov_h_deg * kDeg / 2.0;
    const double half_v = sensor.fov_v_deg * kDeg / 2.0;
    for (const auto& pose : poses) {
        const Eigen::Vector2d o2 = pose.position.head<2>();
        const auto boxes = caster.near(o2, range);
        for (std::size_t f = 0; f < facades.size(); ++f) {
            // Distance from the pose to the facade footprint segment.
            const Eigen::Vector2d ab = facades[f].b - facades[f].a;
            const double t = std::clamp((o2 - facades[f].a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
            if ((facades[f].a + t * ab - o2).norm() > range) continue;
            for (auto& s : samples[f]) {
                if (s.seen) continue;
                const Eigen::Vector3d d = s.p - pose.position;
                const double dist = d.norm();
                if (dist > range || s.outward.dot(-d.head<2>()) <= 0.0) continue;
                double az = std::atan2(d.y(), d.x()) - pose.heading;
                az = std::remainder(az, 2.0 * std::numbers::pi);
                const double el = std::asin(d.z() / dist) - pose.pitch;
                if (std::abs(az) > half_h || std::abs(el) > half_v) continue;
                const auto hit = caster.cast_among(boxes, pose.position, d / dist, dist + 0.05);
                if (hit && hit->range >= dist - 1e-3) s.seen = true;
            }
        }
    }
    std::vector<Eigen::Vector3d> out;
    for (const auto& fs : samples)
        for (const auto& s : fs)
            if (s.seen) out.push_back(s.p);
    return out;
}

}  // namespace mcs3d
