#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mcs3d/geohash.hpp"
#include "mcs3d/point_cloud.hpp"

namespace mcs3d {

/// Street centrelines run along x = k * kStreetPitch and y = k * kStreetPitch (k >= 1); each
/// street is 2 * kHalfStreet wide.
inline constexpr double kStreetPitch = 34.0;
inline constexpr double kHalfStreet = 4.5;

struct Box {
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Zero();
    Rgba color{128, 128, 128, 255};

    bool operator==(const Box&) const = default;
};

/// A vertical axis-aligned rectangle: x in [x0,x1] at fixed y, or y in [y0,y1] at fixed x.
struct Facade {
    Eigen::Vector2d a = Eigen::Vector2d::Zero();  // footprint endpoints
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    double height = 0.0;
    Eigen::Vector2d outward = Eigen::Vector2d::Zero();
};

/// Desk-scale urban scene: a ground plane at z = 0 over [0,w]x[0,h], box buildings whose sides
/// are the facades, architectural details attached to buildings (pilasters, balconies, setback
/// tiers, rooftop units) and free-standing obstacles (street furniture, vehicles, poles, trees).
struct SceneModel {
    std::uint64_t seed = 0;
    Eigen::Vector2d extent = Eigen::Vector2d::Zero();
    LatLon anchor{35.9, 139.6};  // geographic position of the local origin
    Rgba ground_color{110, 110, 105, 255};
    std::vector<Box> buildings;
    std::vector<Box> details;
    std::vector<Box> obstacles;

    std::vector<Facade> facades() const;
    LocalFrame frame() const { return LocalFrame(anchor); }

    bool operator==(const SceneModel& o) const {
        return seed == o.seed && extent == o.extent && ground_color == o.ground_color && buildings == o.buildings &&
               details == o.details && obstacles == o.obstacles && anchor.lat == o.anchor.lat && anchor.lon == o.anchor.lon;
    }
};

SceneModel generate_scene(std::uint64_t seed, const Eigen::Vector2d& extent);

/// Stable digest of the surface lists (FNV-1a over the coordinates).
std::uint64_t scene_digest(const SceneModel& scene);

struct RayHit {
    double range = 0.0;
    Rgba color{};
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
};

/// Ray caster with a coarse 2-D bucket index over the boxes.
class SceneRaycaster {
public:
    explicit SceneRaycaster(const SceneModel& scene, double bucket = 8.0);

    /// First surface hit within `max_range` along unit direction `dir`.
    std::optional<RayHit> cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double max_range) const;
    /// Boxes whose footprint lies within `range` of `xy`; used to narrow per-frame casts.
    std::vector<const Box*> near(const Eigen::Vector2d& xy, double range) const;
    std::optional<RayHit> cast_among(std::span<const Box* const> boxes, const Eigen::Vector3d& origin,
                                     const Eigen::Vector3d& dir, double max_range) const;

    const SceneModel& scene() const { return *scene_; }

private:
    const SceneModel* scene_;
    double bucket_;
    int nx_ = 0, ny_ = 0;
    std::vector<std::vector<const Box*>> buckets_;
};

/// Dense noiseless surface sampling (jittered grid of pitch `spacing`) in the scene frame: position,
/// color, and a vantage point 2 m off each surface on its outer side as device_position, as if
/// scanned from the street. Optionally restricted to an xy window [lo, hi).
PointCloud sample_scene(const SceneModel& scene, double spacing, std::uint64_t seed,
                        std::optional<std::array<Eigen::Vector2d, 2>> window = std::nullopt);

}  // namespace mcs3d
