#include "mcs3d/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/error.hpp"

namespace mcs3d::bench {

void ExperimentConfig::validate() const {
    if (!(region_extent.x() > 0.0 && region_extent.y() > 0.0)) throw ParameterError("region extent must be positive");
    if (!(subregion_extent.x() > 0.0 && subregion_extent.y() > 0.0) || subregion_extent.x() > region_extent.x() ||
        subregion_extent.y() > region_extent.y())
        throw ParameterError("subregion must fit inside the region");
    if (removal_ratios.empty() || n_values.empty() || voxel_values.empty()) throw ParameterError("empty parameter grid");
    for (double r : removal_ratios)
        if (!(r >= 0.0 && r < 1.0)) throw ParameterError("removal ratios must lie in [0, 1)");
    for (auto n : n_values)
        if (n < 3) throw ParameterError("N must be >= 3");
    for (double v : voxel_values)
        if (!(v > 0.0)) throw ParameterError("voxel sizes must be positive");
    if (trials == 0) throw ParameterError("need at least one trial");
    if (ransac_max_iterations == 0) throw ParameterError("RANSAC needs at least one iteration");
}

PointCloud mask_subregion(const PointCloud& cloud, double ratio, std::optional<std::array<Eigen::Vector2d, 2>> window) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ParameterError("mask ratio must lie in [0, 1]");
    if (cloud.empty() || ratio == 0.0) return cloud;
    std::array<Eigen::Vector2d, 2> w;
    if (window) {
        w = *window;
    } else {
        w[0] = w[1] = cloud.position[0].head<2>().cast<double>();
        for (const auto& p : cloud.position) {
            w[0] = w[0].cwiseMin(p.head<2>().cast<double>());
            w[1] = w[1].cwiseMax(p.head<2>().cast<double>());
        }
    }
    const Eigen::Vector2d mid = (w[0] + w[1]) / 2.0;
    const Eigen::Vector2d half = (w[1] - w[0]) * ratio / 2.0;
    std::vector<std::size_t> keep;
    keep.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector2d d = (cloud.position[i].head<2>().cast<double>() - mid).cwiseAbs();
        if (!(d.x() <= half.x() && d.y() <= half.y())) keep.push_back(i);
    }
    return cloud.select(keep);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct TrialSetup {
    std::uint64_t seed;
    std::array<Eigen::Vector2d, 2> window;
    RigidTransform planted;
};

TrialSetup draw_trial(const ExperimentConfig& cfg, const Eigen::Vector2d& region_lo, std::size_t trial) {
    TrialSetup s;
    s.seed = mix(cfg.seed ^ mix(trial + 1));
    std::mt19937_64 rng(s.seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const Eigen::Vector2d slack = cfg.region_extent - cfg.subregion_extent;
    s.window[0] = region_lo + Eigen::Vector2d(uni(0.0, slack.x()), uni(0.0, slack.y()));
    s.window[1] = s.window[0] + cfg.subregion_extent;

    const Eigen::Vector3d c(((s.window[0] + s.window[1]) / 2.0).x(), ((s.window[0] + s.window[1]) / 2.0).y(), 0.0);
    const double angle = uni(-std::numbers::pi, std::numbers::pi);
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    if (cfg.full_rotation) {
        std::normal_distribution<double> g(0.0, 1.0);
        axis = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
    }
    const Eigen::Vector3d target(region_lo.x() + uni(0.0, cfg.region_extent.x()),
                                 region_lo.y() + uni(0.0, cfg.region_extent.y()), 0.0);
    s.planted.R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    s.planted.t = target - s.planted.R * c;
    return s;
}

Eigen::Vector3d centroid(const PointCloud& c) {
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (const auto& p : c.position) m += p.cast<double>();
    return c.empty() ? m : Eigen::Vector3d(m / static_cast<double>(c.size()));
}

PointCloud window_of(const PointCloud& cloud, const std::array<Eigen::Vector2d, 2>& w) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.position[i];
        if (p.x() >= w[0].x() && p.x() < w[1].x() && p.y() >= w[0].y() && p.y() < w[1].y()) keep.push_back(i);
    }
    return cloud.select(keep);
}

}  // namespace

ExperimentReport run_masking_experiment(const PointCloud& source, const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    if (source.empty()) throw ParameterError("experiment source is empty");
    Eigen::Vector2d lo = source.position[0].head<2>().cast<double>();
    for (const auto& p : source.position) lo = lo.cwiseMin(p.head<2>().cast<double>());
    const PointCloud region = window_of(source, {lo, lo + cfg.region_extent});

    // Density check on one subregion-sized window before any trial runs.
    {
        const Eigen::Vector2d mid = lo + cfg.region_extent / 2.0;
        const PointCloud probe = window_of(region, {mid - cfg.subregion_extent / 2.0, mid + cfg.subregion_extent / 2.0});
        if (probe.size() < 2) throw ParameterError("source too sparse: fewer than two points in the probe window");
        const double spacing = point_spacing(probe);
        const double v_min = *std::min_element(cfg.voxel_values.begin(), cfg.voxel_values.end());
        if (spacing > v_min)
            throw ParameterError("source point spacing " + std::to_string(spacing) + " m exceeds voxel size " +
                                 std::to_string(v_min) + " m");
    }

    auto pipeline_for = [&cfg](double voxel, std::size_t n, std::uint64_t seed) {
        PipelineConfig pc;
        pc.voxel = voxel;
        pc.apply_sor = false;
        pc.ransac.n = n;
        pc.ransac.rng_seed = seed;
        pc.ransac.max_iterations = cfg.ransac_max_iterations;
        return pc;
    };

    ExperimentReport report;
    std::map<double, PreparedCloud> targets;
    for (double voxel : cfg.voxel_values) {
        if (targets.count(voxel)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        targets.emplace(voxel, prepare(region, pipeline_for(voxel, cfg.n_values.front(), 0)));
        report.target_preparation.emplace_back(
            voxel, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        const auto setup = draw_trial(cfg, lo, t);
        const PointCloud sub = window_of(region, setup.window);
        for (double ratio : cfg.removal_ratios) {
            const PointCloud masked = mask_subregion(sub, ratio, setup.window);
            const PointCloud moved = transform_cloud(masked, setup.planted);
            const RigidTransform truth = setup.planted.inverse();
            const Eigen::Vector3d c = centroid(moved);
            for (double voxel : cfg.voxel_values) {
                for (auto n : cfg.n_values) {
                    TrialRecord rec;
                    rec.ratio = ratio;
                    rec.n = n;
                    rec.voxel = voxel;
                    rec.trial = t;
                    rec.seed = setup.seed;
                    rec.window = setup.window;
                    rec.planted = setup.planted;
                    rec.source_points = moved.size();
                    rec.target_points = region.size();

                    const PipelineConfig pc = pipeline_for(voxel, n, setup.seed);
                    try {
                        rec.result = register_to_prepared(moved, targets.at(voxel), pc);
                    } catch (const DegenerateInputError&) {
                        rec.result.status = RegistrationStatus::FailedGlobal;
                    }
                    rec.rotation_error_deg = rotation_error_deg(rec.result.transform, truth);
                    rec.translation_error = (rec.result.transform.apply(c) - truth.apply(c)).norm();
                    rec.success = rec.result.status != RegistrationStatus::FailedGlobal &&
                                  rec.rotation_error_deg <= cfg.success_rotation_deg &&
                                  rec.translation_error <= cfg.success_translation_factor * voxel;
                    if (progress) progress(rec);
                    report.records.push_back(std::move(rec));
                }
            }
        }
    }
    report.aggregates = aggregate(report.records);
    return report;
}

ExperimentReport run_masking_experiment(const SceneModel& scene, const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    if (scene.extent.x() < cfg.region_extent.x() || scene.extent.y() < cfg.region_extent.y())
        throw ParameterError("scene smaller than the experiment region");
    return run_masking_experiment(sample_scene(scene, cfg.sample_spacing, scene.seed ^ 0x5eedULL), cfg, progress);
}

std::vector<Aggregate> aggregate(const std::vector<TrialRecord>& records) {
    std::map<std::tuple<double, std::size_t, double>, std::vector<const TrialRecord*>> groups;
    std::vector<std::tuple<double, std::size_t, double>> order;
    for (const auto& r : records) {
        const auto key = std::make_tuple(r.ratio, r.n, r.voxel);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<Aggregate> out;
    for (const auto& key : order) {
        const auto& g = groups[key];
        Aggregate a;
        std::tie(a.ratio, a.n, a.voxel) = key;
        a.trials = g.size();
        double rmse_sum = 0.0;
        std::size_t rmse_n = 0;
        for (const auto* r : g) {
            a.successes += r->success;
            const bool pipe = r->result.status == RegistrationStatus::Success;
            a.pipeline_successes += pipe;
            a.disagreements += pipe != r->success;
            if (r->result.status != RegistrationStatus::FailedGlobal && std::isfinite(r->result.inlier_rmse)) {
                rmse_sum += r->result.inlier_rmse;
                ++rmse_n;
            }
            a.mean_timings.preprocess += r->result.timings.preprocess;
            a.mean_timings.features += r->result.timings.features;
            a.mean_timings.matching += r->result.timings.matching;
            a.mean_timings.ransac += r->result.timings.ransac;
            a.mean_timings.icp += r->result.timings.icp;
            a.mean_total += r->result.total_seconds;
        }
        const double k = static_cast<double>(a.trials);
        a.success_rate = static_cast<double>(a.successes) / k;
        if (rmse_n > 0) a.mean_rmse = rmse_sum / static_cast<double>(rmse_n);
        a.mean_timings.preprocess /= k;
        a.mean_timings.features /= k;
        a.mean_timings.matching /= k;
        a.mean_timings.ransac /= k;
        a.mean_timings.icp /= k;
        a.mean_total /= k;
        out.push_back(a);
    }
    return out;
}

const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols{
        "kind",          "ratio",          "area_ratio",   "n",           "voxel",         "trial",
        "seed",          "trials",         "successes",    "success_rate", "pipeline_status", "pipeline_successes",
        "disagreements", "rotation_error_deg", "translation_error", "fitness", "inlier_rmse", "mean_rmse",
        "correspondences", "ransac_iterations", "icp_iterations", "source_points", "target_points",
        "t_preprocess",  "t_features",     "t_matching",   "t_ransac",    "t_icp",         "t_total",
        "planted_angle_deg", "planted_tx", "planted_ty",   "planted_tz"};
    return cols;
}

namespace {

std::string num(double v) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream s;
    s << std::setprecision(9) << v;
    return s.str();
}

}  // namespace

void emit_report(const ExperimentReport& report, std::ostream& csv) {
    if (report.records.empty()) throw ParameterError("no trial records to report");
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
    csv << "\n";
    for (const auto& r : report.records) {
        const auto& res = r.result;
        const double angle = std::acos(std::clamp((r.planted.R.trace() - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / std::numbers::pi;
        csv << "trial," << num(r.ratio) << "," << num(r.ratio * r.ratio) << "," << r.n << "," << num(r.voxel) << ","
            << r.trial << "," << r.seed << ",1," << (r.success ? 1 : 0) << "," << (r.success ? 1 : 0) << ","
            << status_name(res.status) << "," << (res.status == RegistrationStatus::Success ? 1 : 0) << ","
            << ((res.status == RegistrationStatus::Success) != r.success ? 1 : 0) << "," << num(r.rotation_error_deg)
            << "," << num(r.translation_error) << "," << num(res.fitness) << ","
            << (res.status == RegistrationStatus::FailedGlobal ? "NA" : num(res.inlier_rmse)) << ",,"
            << res.correspondences << "," << res.ransac_iterations << "," << res.icp_iterations << ","
            << r.source_points << "," << r.target_points << "," << num(res.timings.preprocess) << ","
            << num(res.timings.features) << "," << num(res.timings.matching) << "," << num(res.timings.ransac) << ","
            << num(res.timings.icp) << "," << num(res.total_seconds) << "," << num(angle) << ","
            << num(r.planted.t.x()) << "," << num(r.planted.t.y()) << "," << num(r.planted.t.z()) << "\n";
    }
    for (const auto& a : report.aggregates) {
        csv << "aggregate," << num(a.ratio) << "," << num(a.ratio * a.ratio) << "," << a.n << "," << num(a.voxel)
            << ",,," << a.trials << "," << a.successes << "," << num(a.success_rate) << ",," << a.pipeline_successes
            << "," << a.disagreements << ",,,,," << (a.mean_rmse ? num(*a.mean_rmse) : "NA") << ",,,,,,"
            << num(a.mean_timings.preprocess) << "," << num(a.mean_timings.features) << ","
            << num(a.mean_timings.matching) << "," << num(a.mean_timings.ransac) << "," << num(a.mean_timings.icp)
            << "," << num(a.mean_total) << ",,,,\n";
    }
}

std::string summary_text(const ExperimentReport& report) {
    std::ostringstream s;
    s << std::fixed;
    s << "ratio  N  V     success  rmse      preprocess features matching ransac   icp      total\n";
    for (const auto& a : report.aggregates) {
        s << std::setprecision(2) << std::setw(5) << a.ratio << "  " << a.n << "  " << std::setw(4) << a.voxel << "  "
          << std::setw(3) << a.successes << "/" << std::setw(3) << std::left << a.trials << std::right << "  ";
        if (a.mean_rmse)
            s << std::setprecision(4) << std::setw(8) << *a.mean_rmse;
        else
            s << std::setw(8) << "NA";
        s << std::setprecision(3) << "  " << std::setw(9) << a.mean_timings.preprocess << " " << std::setw(8)
          << a.mean_timings.features << " " << std::setw(8) << a.mean_timings.matching << " " << std::setw(8)
          << a.mean_timings.ransac << " " << std::setw(8) << a.mean_timings.icp << " " << std::setw(8) << a.mean_total
          << "\n";
        if (a.disagreements) s << "       pipeline and ground-truth success disagree on " << a.disagreements << " trials\n";
    }
    for (const auto& [v, secs] : report.target_preparation)
        s << std::setprecision(2) << "region preparation at V=" << v << ": " << std::setprecision(3) << secs
          << " s (once, shared by all trials)\n";
    return s.str();
}

}  // namespace mcs3d::bench
