#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mcs3d/point_cloud.hpp"

namespace mcs3d {

/// Drops points too far from the sensor or below a confidence level.
struct FilterConfig {
    double max_depth = 5.0;         // meters
    std::uint32_t min_confidence = 1;  // keep levels >= this

    void validate() const;
};

struct FilterResult {
    PointCloud cloud;
    bool depth_applied = false;       // false when the cloud has no depth attribute
    bool confidence_applied = false;  // false when the cloud has no confidence attribute
    std::size_t removed = 0;
};

FilterResult filter_reliability(const PointCloud& cloud, const FilterConfig& cfg = {});

struct SorConfig {
    std::size_t k_neighbors = 20;
    double std_ratio = 2.0;
};

struct SorResult {
    PointCloud cloud;
    /// Set when the cloud had too few points for k neighbors and was returned unchanged.
    bool skipped = false;
    std::size_t removed = 0;
};

/// Removes points whose mean distance to their k nearest neighbors exceeds mean + ratio * stddev
/// of that statistic over the whole cloud.
SorResult statistical_outlier_removal(const PointCloud& cloud, const SorConfig& cfg = {});

/// One point per occupied origin-anchored voxel of side `voxel`, at the member centroid. Colors
/// and the remaining numeric attributes are averaged; confidence takes the member minimum. Output
/// is ordered by voxel key.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

struct NormalField {
    std::vector<Eigen::Vector3d> normals;
    std::vector<std::uint8_t> valid;
    /// Orientation could not be decided (normal orthogonal to the orientation cue).
    std::vector<std::uint8_t> ambiguous;

    std::size_t size() const { return normals.size(); }
    std::size_t valid_count() const;
};

/// Smallest-eigenvalue eigenvector of each point's neighborhood covariance (at most `max_nn`
/// points within `radius`, the point included). Normals face the device position when the cloud
/// carries one and +z otherwise. Neighborhoods of fewer than 3 points or of rank < 2 are invalid.
NormalField estimate_normals(const PointCloud& cloud, double radius, std::size_t max_nn);
NormalField estimate_normals(std::span<const Eigen::Vector3d> points, double radius, std::size_t max_nn,
                             std::span<const Eigen::Vector3d> viewpoints = {});

/// Concatenates clouds sharing one schema and frame. Empty input gives an empty cloud.
PointCloud merge(std::span<const PointCloud> clouds);

/// Mean distance from each point to its nearest neighbor.
double point_spacing(const PointCloud& cloud);
double point_spacing(std::span<const Eigen::Vector3d> points);

}  // namespace mcs3d
