#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "mcs3d/error.hpp"
#include "mcs3d/registration.hpp"
#include "mcs3d/scene.hpp"

using namespace mcs3d;

namespace {

RigidTransform random_transform(std::mt19937_64& rng, double max_t = 2.0) {
    std::normal_distribution<double> g(0, 1);
    Eigen::Vector3d axis(g(rng), g(rng), g(rng));
    axis.normalize();
    const double angle = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
    RigidTransform T;
    T.R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    std::uniform_real_distribution<double> u(-max_t, max_t);
    T.t = {u(rng), u(rng), u(rng)};
    return T;
}

std::vector<Eigen::Vector3d> random_points(std::mt19937_64& rng, std::size_t n, double scale = 5.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<Eigen::Vector3d> out(n);
    for (auto& p : out) p = {u(rng), u(rng), u(rng)};
    return out;
}

PointCloud city_block() {
    const auto scene = generate_scene(42, {123, 152});
    return sample_scene(scene, 0.15, 1, std::array<Eigen::Vector2d, 2>{Eigen::Vector2d(20, 20), Eigen::Vector2d(60, 60)});
}

}  // namespace

TEST_CASE("transform algebra") {
    std::mt19937_64 rng(1);
    const auto a = random_transform(rng), b = random_transform(rng);
    const Eigen::Vector3d p(1, 2, 3);
    CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
    CHECK(a.is_valid());
    CHECK((RigidTransform::from_matrix(a.matrix()).matrix() - a.matrix()).norm() < 1e-15);
    CHECK(rotation_error_deg(a, a) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(rotation_error_deg(RigidTransform::about_z(0.5), RigidTransform::identity()) ==
          doctest::Approx(0.5 * 180.0 / std::numbers::pi));
}

TEST_CASE("Kabsch recovers an exact rigid motion") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        const auto T = random_transform(rng);
        const auto src = random_points(rng, 3 + t);
        const auto dst = transform_points(src, T);
        const auto est = estimate_rigid_transform(src, dst);
        CHECK(est.is_valid());
        CHECK((est.matrix() - T.matrix()).norm() < 1e-9);
    }
}

TEST_CASE("Kabsch never returns a reflection") {
    std::vector<Eigen::Vector3d> src{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
    std::vector<Eigen::Vector3d> dst;
    for (const auto& p : src) dst.push_back({-p.x(), p.y(), p.z()});  // mirror image
    const auto est = estimate_rigid_transform(src, dst);
    CHECK(est.R.determinant() == doctest::Approx(1.0));
}

TEST_CASE("Kabsch rejects degenerate input") {
    std::vector<Eigen::Vector3d> two{{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(estimate_rigid_transform(two, two), DegenerateInputError);
    std::vector<Eigen::Vector3d> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    CHECK_THROWS_AS(estimate_rigid_transform(line, line), DegenerateInputError);
}

TEST_CASE("mutual matching agrees with a brute-force oracle") {
    std::mt19937_64 rng(3);
    auto make = [&](std::size_t n) {
        FeatureSet f;
        f.count = n;
        f.data.resize(n * kFpfhDim);
        f.valid.assign(n, 1);
        // Few distinct values so ties occur.
        for (auto& v : f.data) v = static_cast<double>(rng() % 3);
        for (std::size_t i = 0; i < n; i += 9) {
            f.valid[i] = 0;
            std::fill_n(f.data.begin() + static_cast<long>(i * kFpfhDim), kFpfhDim, 0.0);
        }
        return f;
    };
    const auto a = make(120), b = make(150);
    auto nearest = [](const FeatureSet& from, std::size_t i, const FeatureSet& to) {
        std::size_t best = to.count;
        double bd = 1e300;
        for (std::size_t j = 0; j < to.count; ++j) {
            if (!to.valid[j]) continue;
            double d = 0;
            for (int k = 0; k < kFpfhDim; ++k) d += (from.row(i)[k] - to.row(j)[k]) * (from.row(i)[k] - to.row(j)[k]);
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        return best;
    };
    std::vector<Correspondence> expect;
    for (std::size_t i = 0; i < a.count; ++i) {
        if (!a.valid[i]) continue;
        const auto j = nearest(a, i, b);
        if (j < b.count && nearest(b, j, a) == i) expect.push_back({i, j});
    }
    CHECK(match_features(a, b) == expect);
}

TEST_CASE("FPFH is invariant to rigid motion and zero where invalid") {
    std::mt19937_64 rng(4);
    const auto block = city_block();
    auto pre = preprocess(block, 0.6, SorConfig{}, false);
    const auto pts = positions_d(pre.cloud);
    // Radius small enough that max_nn never truncates a neighborhood.
    const auto f = compute_fpfh(pts, pre.normals, 1.5, 1000);
    const auto T = random_transform(rng, 10.0);
    const auto moved = transform_points(pts, T);
    NormalField rn = pre.normals;
    for (auto& n : rn.normals) n = T.R * n;
    const auto g = compute_fpfh(moved, rn, 1.5, 1000);
    REQUIRE(f.count == pts.size());
    double worst = 0;
    for (std::size_t i = 0; i < f.data.size(); ++i) worst = std::max(worst, std::abs(f.data[i] - g.data[i]));
    CHECK(worst < 1e-6);
    CHECK(f.valid == g.valid);
    for (std::size_t i = 0; i < f.count; ++i) {
        if (f.valid[i]) continue;
        for (double v : f.row(i)) CHECK(v == 0.0);
    }
    // Each SPFH histogram is normalized to 100, so the three histograms of a row carry equal mass
    // of at least the point's own 100.
    std::size_t valid = 0;
    for (std::size_t i = 0; i < f.count; ++i) {
        if (!f.valid[i]) continue;
        ++valid;
        std::array<double, 3> mass{};
        for (int h = 0; h < 3; ++h)
            for (int k = 0; k < kFpfhBins; ++k) {
                CHECK(f.row(i)[h * kFpfhBins + k] >= 0.0);
                mass[h] += f.row(i)[h * kFpfhBins + k];
            }
        CHECK(mass[0] >= 100.0 - 1e-9);
        CHECK(mass[1] == doctest::Approx(mass[0]));
        CHECK(mass[2] == doctest::Approx(mass[0]));
    }
    CHECK(valid > f.count / 2);
}

TEST_CASE("evaluate matches a brute-force oracle") {
    std::mt19937_64 rng(5);
    const auto src = random_points(rng, 200), dst = random_points(rng, 300);
    const auto T = RigidTransform::about_z(0.3, {0.1, 0, 0});
    const double maxd = 0.8;
    std::size_t inl = 0;
    double se = 0;
    for (const auto& p : src) {
        const auto q = T.apply(p);
        double best = 1e300;
        for (const auto& d : dst) best = std::min(best, (q - d).squaredNorm());
        if (best <= maxd * maxd) {
            ++inl;
            se += best;
        }
    }
    const auto ev = evaluate(src, dst, T, maxd);
    CHECK(ev.inliers == inl);
    CHECK(ev.fitness == doctest::Approx(double(inl) / src.size()));
    CHECK(ev.inlier_rmse == doctest::Approx(std::sqrt(se / inl)));
    const std::vector<Eigen::Vector3d> far{{1e6, 0, 0}};
    CHECK(std::isinf(evaluate(far, dst, T, maxd).inlier_rmse));
}

TEST_CASE("RANSAC finds the motion among outlier correspondences") {
    std::mt19937_64 rng(6);
    const auto src = random_points(rng, 400);
    const auto T = random_transform(rng);
    const auto dst = transform_points(src, T);
    std::vector<Correspondence> corrs;
    for (std::size_t i = 0; i < src.size(); ++i) corrs.push_back({i, i % 2 ? (i * 7919) % src.size() : i});
    RansacConfig cfg;
    cfg.distance_threshold = 0.05;
    cfg.rng_seed = 9;
    const auto r = ransac_global(src, dst, corrs, cfg);
    CHECK((r.transform.matrix() - T.matrix()).norm() < 1e-6);
    CHECK(r.fitness == doctest::Approx(1.0));
    CHECK(r.ransac_iterations < cfg.max_iterations);  // confidence bound stops early
    const auto again = ransac_global(src, dst, corrs, cfg);
    CHECK(again.transform.matrix() == r.transform.matrix());
    CHECK(again.ransac_iterations == r.ransac_iterations);
    RansacConfig bad = cfg;
    bad.n = 2;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("ICP RMSE never increases and recovers a small offset") {
    const auto block = city_block();
    const auto pts = positions_d(voxel_downsample(block, 0.3));
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    // 0.03 rad about the block centroid plus a 0.26 m shift.
    auto T = RigidTransform::about_z(0.03);
    T.t = c - T.R * c + Eigen::Vector3d(0.2, -0.15, 0.05);
    const auto src = transform_points(pts, T.inverse());
    IcpConfig cfg;
    cfg.max_correspondence_distance = 1.0;
    cfg.max_iterations = 50;
    const auto r = icp_refine(src, pts, RigidTransform::identity(), cfg);
    REQUIRE(r.icp_rmse_history.size() >= 2);
    for (std::size_t i = 1; i < r.icp_rmse_history.size(); ++i)
        CHECK(r.icp_rmse_history[i] <= r.icp_rmse_history[i - 1]);
    CHECK(r.icp_rmse_history.back() < r.icp_rmse_history.front());
    CHECK(rotation_error_deg(r.transform, T) < 1e-3);
    CHECK((r.transform.t - T.t).norm() < 1e-6);
}

TEST_CASE("full pipeline registers a rotated block and times its stages") {
    const auto block = city_block();
    const auto T = RigidTransform::about_z(0.7, {3.0, -2.0, 0.0});
    const auto src = transform_cloud(block, T);
    PipelineConfig cfg;
    cfg.voxel = 0.6;
    const auto r = register_clouds(src, block, cfg);
    CHECK(r.status == RegistrationStatus::Success);
    CHECK(rotation_error_deg(r.transform, T.inverse()) < 2.0);
    CHECK(r.inlier_rmse <= cfg.voxel);
    CHECK(std::abs(r.timings.sum() - r.total_seconds) <= 0.01 * r.total_seconds);
    CHECK(status_name(r.status) == "success");
    CHECK(parse_status("failed_global") == RegistrationStatus::FailedGlobal);
}

TEST_CASE("preprocess rejects clouds that are too sparse") {
    PointCloud c;
    c.resize(5);
    CHECK_THROWS_AS(preprocess(c, 0.5, SorConfig{}, true), DegenerateInputError);
}
