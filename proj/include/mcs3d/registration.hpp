#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/kdtree.hpp"
#include "mcs3d/point_cloud.hpp"

namespace mcs3d {

/// p' = R p + t.
struct RigidTransform {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }
    static RigidTransform from_matrix(const Eigen::Matrix4d& m);
    /// Rotation of `angle` radians about +z through the origin, followed by translation `t`.
    static RigidTransform about_z(double angle, const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
    RigidTransform inverse() const;
    /// (*this) after `first`.
    RigidTransform compose(const RigidTransform& first) const;
    Eigen::Matrix4d matrix() const;
    /// Orthonormality and det(R) = +1 within `tol`.
    bool is_valid(double tol = 1e-9) const;
};

/// Angle of R_a R_b^T in degrees.
double rotation_error_deg(const RigidTransform& a, const RigidTransform& b);

/// Applies the transform to positions and device positions; other attributes are untouched.
PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& T);
std::vector<Eigen::Vector3d> transform_points(std::span<const Eigen::Vector3d> pts, const RigidTransform& T);

inline constexpr int kFpfhBins = 11;
inline constexpr int kFpfhDim = 3 * kFpfhBins;

struct FpfhConfig {
    double radius_factor = 5.0;  // radius = factor * point spacing
    std::size_t max_nn = 100;
};

struct FeatureSet {
    std::size_t count = 0;
    std::vector<double> data;         // count x kFpfhDim, row-major
    std::vector<std::uint8_t> valid;  // invalid rows are all zero and never matched
    double radius = 0.0;

    std::span<const double> row(std::size_t i) const { return {data.data() + i * kFpfhDim, kFpfhDim}; }
};

struct RansacConfig {
    std::size_t n = 3;
    double edge_similarity = 0.9;
    double distance_threshold = 0.9;  // meters; 1.5 * V by default in the pipeline
    std::size_t max_iterations = 100'000;
    double confidence = 0.999;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct IcpConfig {
    double max_correspondence_distance = 1.2;  // meters; 2 * V by default in the pipeline
    std::size_t max_iterations = 30;
    double relative_rmse_epsilon = 1e-6;
    double relative_fitness_epsilon = 1e-6;
};

enum class RegistrationStatus : std::uint8_t { Success, FailedGlobal, FailedLocal, PendingReview };

std::string_view status_name(RegistrationStatus s);
RegistrationStatus parse_status(std::string_view s);

inline constexpr double kInfiniteRmse = std::numeric_limits<double>::infinity();

struct StageTimings {
    double preprocess = 0.0;
    double features = 0.0;
    double matching = 0.0;
    double ransac = 0.0;
    double icp = 0.0;

    double sum() const { return preprocess + features + matching + ransac + icp; }
};

struct RegistrationResult {
    RigidTransform transform;
    double fitness = 0.0;
    double inlier_rmse = kInfiniteRmse;
    StageTimings timings;
    double total_seconds = 0.0;
    RegistrationStatus status = RegistrationStatus::FailedGlobal;

    std::size_t correspondences = 0;
    std::size_t ransac_iterations = 0;
    std::size_t icp_iterations = 0;
    /// Inlier RMSE of every accepted ICP iteration, starting at the initial transform.
    std::vector<double> icp_rmse_history;
};

struct Correspondence {
    std::size_t src;
    std::size_t dst;

    bool operator==(const Correspondence&) const = default;
};

// --- stages -----------------------------------------------------------------------------------

struct Preprocessed {
    PointCloud cloud;
    NormalField normals;
};

/// Outlier removal, voxel downsampling at `voxel`, and normals (radius 2V, 30 neighbors).
/// Throws DegenerateInputError when fewer than 10 points remain.
Preprocessed preprocess(const PointCloud& cloud, double voxel, const SorConfig& sor, bool apply_sor = true);

FeatureSet compute_fpfh(std::span<const Eigen::Vector3d> points, const NormalField& normals, double radius,
                        std::size_t max_nn);
/// Radius from the cloud's point spacing times cfg.radius_factor.
FeatureSet compute_fpfh(const PointCloud& cloud, const NormalField& normals, const FpfhConfig& cfg);

/// Mutual nearest neighbours in descriptor space; ties go to the lowest index.
std::vector<Correspondence> match_features(const FeatureSet& src, const FeatureSet& dst);

/// Least-squares rigid transform mapping src onto dst (Kabsch with reflection correction).
/// Throws DegenerateInputError for fewer than 3 pairs or collinear configurations.
RigidTransform estimate_rigid_transform(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst);

struct Evaluation {
    double fitness = 0.0;
    double inlier_rmse = kInfiniteRmse;
    std::size_t inliers = 0;
};

Evaluation evaluate(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                    const RigidTransform& T, double max_distance);
/// Reuses a prebuilt tree over dst.
Evaluation evaluate(std::span<const Eigen::Vector3d> src, const KdTree& dst_tree, const RigidTransform& T,
                    double max_distance);

RegistrationResult ransac_global(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                                 std::span<const Correspondence> corrs, const RansacConfig& cfg);

RegistrationResult icp_refine(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                              const RigidTransform& init, const IcpConfig& cfg);

// --- full pipeline ----------------------------------------------------------------------------

struct PipelineConfig {
    double voxel = 0.6;
    bool apply_sor = true;
    SorConfig sor;
    FpfhConfig fpfh;
    RansacConfig ransac;  // distance_threshold overridden by ransac_threshold_factor * voxel
    IcpConfig icp;        // max distance overridden by icp_distance_factor * voxel
    double ransac_threshold_factor = 1.5;
    double icp_distance_factor = 2.0;
    double min_fitness = 0.25;
    double max_rmse_factor = 1.0;  // accept when inlier_rmse <= factor * voxel
};

/// Preprocessed geometry plus descriptors for one side of a registration.
struct PreparedCloud {
    PointCloud cloud;
    std::vector<Eigen::Vector3d> points;
    NormalField normals;
    FeatureSet features;
};

/// Downsamples (with optional SOR), estimates normals and computes FPFH. Times go into `timings`.
PreparedCloud prepare(const PointCloud& cloud, const PipelineConfig& cfg, StageTimings* timings = nullptr,
                      bool already_downsampled = false);

/// Global + local registration of `src` onto `dst`; status is Success when the pipeline's
/// acceptance thresholds (fitness and RMSE) hold, FailedGlobal/FailedLocal otherwise.
RegistrationResult register_clouds(const PointCloud& src, const PointCloud& dst, const PipelineConfig& cfg);
RegistrationResult register_prepared(const PreparedCloud& src, const PreparedCloud& dst, const PipelineConfig& cfg);
/// Prepares `src` only; the target's preparation cost is not part of the result's timings.
RegistrationResult register_to_prepared(const PointCloud& src, const PreparedCloud& dst, const PipelineConfig& cfg);

}  // namespace mcs3d
