#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/error.hpp"
#include "support.hpp"

using namespace mcs3d;

TEST_CASE("reliability filter keeps exactly the qualifying points") {
    std::mt19937_64 rng(5);
    PointCloud c(AttributeSchema::canonical());
    c.resize(2000);
    std::uniform_real_distribution<float> d(0.0f, 8.0f);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c.position[i] = Eigen::Vector3f(float(i), 0, 0);
        c.depth[i] = i % 50 == 0 ? 5.0f : d(rng);  // include the boundary value
        c.confidence[i] = static_cast<std::uint32_t>(rng() % 3);
    }
    const auto r = filter_reliability(c);
    CHECK(r.depth_applied);
    CHECK(r.confidence_applied);
    std::set<float> kept;
    for (const auto& p : r.cloud.position) kept.insert(p.x());
    std::set<float> expect;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c.depth[i] <= 5.0f && c.confidence[i] >= 1) expect.insert(c.position[i].x());
    CHECK(kept == expect);
    CHECK(r.removed == c.size() - expect.size());
}

TEST_CASE("filter skips missing attributes and validates config") {
    PointCloud c;
    c.resize(4);
    const auto r = filter_reliability(c);
    CHECK_FALSE(r.depth_applied);
    CHECK_FALSE(r.confidence_applied);
    CHECK(r.cloud.size() == 4);
    FilterConfig bad;
    bad.max_depth = 0.0;
    CHECK_THROWS_AS(filter_reliability(c, bad), ParameterError);
}

TEST_CASE("all-zero confidence filters to empty") {
    PointCloud c(AttributeSchema::of({attr::position, attr::confidence}));
    c.resize(100);
    CHECK(filter_reliability(c).cloud.empty());
}

TEST_CASE("voxel downsample matches a grouping oracle") {
    std::mt19937_64 rng(8);
    PointCloud c(AttributeSchema::of({attr::position, attr::color, attr::confidence}));
    c.resize(3000);
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c.position[i] = {u(rng), u(rng), u(rng)};
        c.color[i] = {static_cast<std::uint8_t>(rng() % 256), 0, 0, 255};
        c.confidence[i] = static_cast<std::uint32_t>(rng() % 3);
    }
    const double v = 0.7;
    struct Acc {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        int n = 0;
        std::uint32_t conf = 9;
        double red = 0;
    };
    std::map<std::array<long, 3>, Acc> groups;
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::array<long, 3> k;
        for (int a = 0; a < 3; ++a) k[a] = static_cast<long>(std::floor(c.position[i][a] / v));
        auto& g = groups[k];
        g.sum += c.position[i].cast<double>();
        ++g.n;
        g.conf = std::min(g.conf, c.confidence[i]);
        g.red += c.color[i][0];
    }
    const auto out = voxel_downsample(c, v);
    REQUIRE(out.size() == groups.size());
    std::size_t i = 0;
    for (const auto& [k, g] : groups) {  // map order == lexicographic voxel key order
        const Eigen::Vector3d mean = g.sum / g.n;
        CHECK((out.position[i].cast<double>() - mean).norm() < 1e-5);
        CHECK(out.confidence[i] == g.conf);
        CHECK(out.color[i][0] == static_cast<std::uint8_t>(std::lround(g.red / g.n)));
        ++i;
    }
    CHECK_THROWS_AS(voxel_downsample(c, 0.0), ParameterError);
}

TEST_CASE("downsampled cloud has no two points in one voxel") {
    std::mt19937_64 rng(9);
    auto c = testing::random_cloud(rng, 2000);
    c.position.resize(c.size());
    const auto out = voxel_downsample(c, 250.0);
    std::set<std::array<long, 3>> seen;
    // Every output point is a member centroid, so it lies in its members' voxel.
    for (const auto& p : out.position) {
        std::array<long, 3> k;
        for (int a = 0; a < 3; ++a) k[a] = static_cast<long>(std::floor(p[a] / 250.0));
        CHECK(seen.insert(k).second);
    }
}

TEST_CASE("statistical outlier removal matches the mean-distance oracle") {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> g(0.0f, 0.2f);
    PointCloud c;
    c.resize(400);
    for (std::size_t i = 0; i < 390; ++i) c.position[i] = {g(rng), g(rng), g(rng)};
    for (std::size_t i = 390; i < 400; ++i) c.position[i] = {5.0f + float(i), 0, 0};
    SorConfig cfg;
    cfg.k_neighbors = 8;
    cfg.std_ratio = 1.5;
    std::vector<double> mean_d(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < c.size(); ++j)
            if (j != i) d.push_back((c.position[i] - c.position[j]).cast<double>().norm());
        std::sort(d.begin(), d.end());
        double s = 0;
        for (std::size_t k = 0; k < cfg.k_neighbors; ++k) s += d[k];
        mean_d[i] = s / cfg.k_neighbors;
    }
    double mu = 0, var = 0;
    for (double m : mean_d) mu += m;
    mu /= mean_d.size();
    for (double m : mean_d) var += (m - mu) * (m - mu);
    const double sigma = std::sqrt(var / mean_d.size());
    std::size_t expect = 0;
    for (double m : mean_d) expect += m <= mu + cfg.std_ratio * sigma;
    const auto r = statistical_outlier_removal(c, cfg);
    CHECK_FALSE(r.skipped);
    CHECK(r.cloud.size() == expect);
    for (const auto& p : r.cloud.position) CHECK(p.x() < 5.0f);

    PointCloud tiny;
    tiny.resize(3);
    CHECK(statistical_outlier_removal(tiny, cfg).skipped);
}

TEST_CASE("normals of a plane face the device") {
    PointCloud c(AttributeSchema::of({attr::position, attr::device_position}));
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            c.position.push_back({i * 0.1f, j * 0.1f, 0.0f});
            c.device_position.push_back({1.0f, 1.0f, -2.0f});  // below the plane
        }
    const auto f = estimate_normals(c, 0.35, 30);
    REQUIRE(f.size() == c.size());
    CHECK(f.valid_count() == c.size());
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f.normals[i].z() == doctest::Approx(-1.0));

    PointCloud up;
    up.position = c.position;
    const auto g = estimate_normals(up, 0.35, 30);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.normals[i].z() == doctest::Approx(1.0));
}

TEST_CASE("collinear and isolated neighborhoods are invalid normals") {
    std::vector<Eigen::Vector3d> line;
    for (int i = 0; i < 10; ++i) line.push_back({i * 0.1, 0, 0});
    line.push_back({50, 50, 50});
    const auto f = estimate_normals(line, 0.5, 30);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f.valid[i] == 0);
}

TEST_CASE("merge and point spacing") {
    PointCloud a, b;
    a.resize(2);
    b.resize(1);
    a.position[1] = {1, 0, 0};
    b.position[0] = {3, 0, 0};
    const std::vector<PointCloud> parts{a, b};
    const auto m = merge(parts);
    CHECK(m.size() == 3);
    CHECK(point_spacing(m) == doctest::Approx((1.0 + 1.0 + 2.0) / 3.0));
    PointCloud other(AttributeSchema::of({attr::position, attr::depth}));
    const std::vector<PointCloud> bad{a, other};
    CHECK_THROWS_AS(merge(bad), Error);
    CHECK(merge(std::span<const PointCloud>{}).empty());
}
