#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mcs3d/point_cloud.hpp"
#include "mcs3d/registration.hpp"
#include "mcs3d/scene.hpp"

namespace mcs3d::bench {

struct ExperimentConfig {
    Eigen::Vector2d region_extent{123.0, 152.0};
    Eigen::Vector2d subregion_extent{12.3, 15.2};
    std::vector<double> removal_ratios{0.2, 0.4, 0.6, 0.8};
    std::vector<std::size_t> n_values{3, 4, 5};
    std::vector<double> voxel_values{0.6, 0.8};
    std::size_t trials = 20;
    std::uint64_t seed = 7;
    /// Sampling pitch of the synthetic city; ignored for user-supplied sources.
    double sample_spacing = 0.25;
    /// Random rotation axis instead of z only.
    bool full_rotation = false;
    double success_rotation_deg = 5.0;
    double success_translation_factor = 1.0;  // times V
    /// RANSAC iteration cap per registration; the confidence bound usually stops far earlier.
    std::size_t ransac_max_iterations = 1'000'000;

    void validate() const;
};

struct TrialRecord {
    double ratio = 0.0;
    std::size_t n = 3;
    double voxel = 0.6;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    std::array<Eigen::Vector2d, 2> window{};  // subregion [lo, hi) in source coordinates
    RigidTransform planted;                   // applied to the masked subregion
    RegistrationResult result;
    bool success = false;  // ground-truth criterion
    double rotation_error_deg = 0.0;
    double translation_error = 0.0;
    std::size_t source_points = 0;
    std::size_t target_points = 0;
};

struct Aggregate {
    double ratio = 0.0;
    std::size_t n = 3;
    double voxel = 0.6;
    std::size_t trials = 0;
    std::size_t successes = 0;
    std::size_t pipeline_successes = 0;
    std::size_t disagreements = 0;
    double success_rate = 0.0;
    std::optional<double> mean_rmse;  // over trials where global registration found a candidate
    StageTimings mean_timings;
    double mean_total = 0.0;
};

struct ExperimentReport {
    std::vector<TrialRecord> records;
    std::vector<Aggregate> aggregates;
    /// Per voxel size: seconds spent preparing the region (downsampling, normals, FPFH). The
    /// region is prepared once per V and shared by every trial, so trial timings exclude it.
    std::vector<std::pair<double, double>> target_preparation;
};

/// Removes every point whose xy lies inside the rectangle centred on the window midpoint with
/// sides ratio * window sides. The window defaults to the cloud's xy bounding box.
PointCloud mask_subregion(const PointCloud& cloud, double ratio,
                          std::optional<std::array<Eigen::Vector2d, 2>> window = std::nullopt);

using Progress = std::function<void(const TrialRecord&)>;

/// Runs every (ratio, N, V) combination for cfg.trials trials. Trial t uses the same subregion
/// and perturbation in every combination.
ExperimentReport run_masking_experiment(const PointCloud& source, const ExperimentConfig& cfg,
                                        const Progress& progress = {});
ExperimentReport run_masking_experiment(const SceneModel& scene, const ExperimentConfig& cfg,
                                        const Progress& progress = {});

std::vector<Aggregate> aggregate(const std::vector<TrialRecord>& records);

/// CSV with one row per trial (kind=trial) and one per configuration (kind=aggregate).
void emit_report(const ExperimentReport& report, std::ostream& csv);
std::string summary_text(const ExperimentReport& report);

/// Column names of the CSV, in order.
const std::vector<std::string>& csv_columns();

}  // namespace mcs3d::bench
