#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mcs3d/point_cloud.hpp"
#include "mcs3d/scene.hpp"

namespace mcs3d {

inline constexpr std::size_t kChunkThreshold = 200'000;

/// Handheld/wearable LiDAR model. Confidence follows the true range: level 2 up to 3 m,
/// level 1 up to the reliable range, level 0 beyond it.
struct SensorModel {
    double max_capture_range = 8.0;
    double reliable_range = 5.0;
    double fov_h_deg = 90.0;
    double fov_v_deg = 70.0;
    std::size_t rays_per_frame = 2048;
    double range_noise_sigma = 0.01;
    double frame_rate = 10.0;      // Hz
    double mount_height = 1.3;     // meters above ground
    double pitch_deg = -12.0;      // boresight elevation

    std::uint32_t confidence_for(double true_range) const;
};

struct Pose {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double heading = 0.0;  // yaw, radians
    double roll = 0.0;
    double pitch = 0.0;
    double yaw_rate = 0.0;
    double time = 0.0;
};

/// Walking path in the scene frame (meters). Must lie inside the scene extent.
struct Trajectory {
    std::vector<Eigen::Vector2d> waypoints;
    double speed = 1.4;          // m/s
    double sway_deg = 4.0;       // heading oscillation amplitude while walking
    double sway_period = 1.2;    // seconds per gait cycle
    /// Slow left-right panning of the handheld device toward the facades on both sides.
    double pan_deg = 60.0;
    double pan_period = 4.0;     // seconds per full sweep

    double length() const;
    /// Poses sampled at the sensor frame rate.
    std::vector<Pose> sample(const SensorModel& sensor, double mount_height) const;
};

/// Random walk of about `length` meters along street centrelines, turning at intersections.
/// Starts at a random intersection; throws ParameterError with fewer than two intersections.
Trajectory street_trajectory(const SceneModel& scene, double length, std::uint64_t seed);

/// Scene, sensor and RNG needed to synthesize frames; shared by passive scanning and the game.
class ScanContext {
public:
    ScanContext(const SceneModel& scene, SensorModel sensor, std::uint64_t seed);

    /// One frame of hits: full canonical schema, session-local frame (identical to scene frame).
    PointCloud frame(const Pose& pose);
    const SensorModel& sensor() const { return sensor_; }
    const SceneModel& scene() const { return raycaster_.scene(); }
    const SceneRaycaster& raycaster() const { return raycaster_; }

    /// Offset from game-cell-local coordinates to scene coordinates.
    Eigen::Vector2d cell_offset = Eigen::Vector2d::Zero();

private:
    SceneRaycaster raycaster_;
    SensorModel sensor_;
    std::mt19937_64 rng_;
};

struct PassiveScanConfig {
    std::size_t chunk_threshold = kChunkThreshold;
    int geohash_precision = 8;
    std::string session_id = "passive-0";
    std::uint64_t seed = 1;
};

struct PassiveScanResult {
    std::vector<PointCloud> chunks;
    std::vector<Pose> poses;  // every simulated frame
};

/// Walks the trajectory casting one frame per pose. A chunk is emitted as soon as the buffered
/// point count exceeds the threshold; the remainder, if any, becomes the final chunk.
PassiveScanResult passive_scan(const SceneModel& scene, const Trajectory& trajectory, const SensorModel& sensor,
                               const PassiveScanConfig& cfg = {});

/// Noise-free facade samples (pitch `spacing`) that some pose sees unoccluded, inside its field
/// of view and within the reliable range. Used as a coverage oracle.
std::vector<Eigen::Vector3d> visible_facade_strip(const SceneModel& scene, std::span<const Pose> poses,
                                                  const SensorModel& sensor, double spacing);

}  // namespace mcs3d
