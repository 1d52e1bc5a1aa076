#include "mcs3d/cloud_ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "mcs3d/error.hpp"
#include "mcs3d/kdtree.hpp"

namespace mcs3d {

void FilterConfig::validate() const {
    if (!(max_depth > 0.0)) throw ParameterError("max_depth must be positive");
    if (min_confidence > 2) throw ParameterError("min_confidence must be in {0,1,2}");
}

FilterResult filter_reliability(const PointCloud& cloud, const FilterConfig& cfg) {
    cfg.validate();
    FilterResult r;
    r.depth_applied = cloud.has(attr::depth);
    r.confidence_applied = cloud.has(attr::confidence);
    std::vector<std::size_t> keep;
    keep.reserve(cloud.size());
    const auto max_depth = static_cast<float>(cfg.max_depth);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (r.depth_applied && !(cloud.depth[i] <= max_depth)) continue;
        if (r.confidence_applied && cloud.confidence[i] < cfg.min_confidence) continue;
        keep.push_back(i);
    }
    r.removed = cloud.size() - keep.size();
    r.cloud = cloud.select(keep);
    return r;
}

SorResult statistical_outlier_removal(const PointCloud& cloud, const SorConfig& cfg) {
    if (cfg.k_neighbors < 1) throw ParameterError("k_neighbors must be >= 1");
    if (!(cfg.std_ratio > 0.0)) throw ParameterError("std_ratio must be positive");
    SorResult r;
    const auto n = cloud.size();
    if (n < cfg.k_neighbors + 1) {
        r.cloud = cloud;
        r.skipped = true;
        return r;
    }
    const auto pts = positions_d(cloud);
    const KdTree tree(pts);
    std::vector<double> mean_dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto nn = tree.knn(pts[i], cfg.k_neighbors + 1);
        // Drop the point itself; with duplicates it may not come first.
        auto self = std::find_if(nn.begin(), nn.end(), [&](const Neighbor& x) { return x.index == i; });
        if (self != nn.end()) nn.erase(self);
        else nn.pop_back();
        double s = 0.0;
        for (const auto& x : nn) s += std::sqrt(x.dist2);
        mean_dist[i] = s / static_cast<double>(nn.size());
    }
    const double mu = std::accumulate(mean_dist.begin(), mean_dist.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double d : mean_dist) var += (d - mu) * (d - mu);
    const double sigma = std::sqrt(var / static_cast<double>(n));
    const double limit = mu + cfg.std_ratio * sigma;

    std::vector<std::size_t> keep;
    keep.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(mean_dist[i] > limit)) keep.push_back(i);
    r.removed = n - keep.size();
    r.cloud = cloud.select(keep);
    return r;
}

namespace {

using VoxelKey = std::array<std::int64_t, 3>;

Eigen::Vector3f mean3(const std::vector<Eigen::Vector3f>& col, std::span<const std::size_t> members) {
    Eigen::Vector3d s = Eigen::Vector3d::Zero();
    for (auto i : members) s += col[i].cast<double>();
    return (s / static_cast<double>(members.size())).cast<float>();
}

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
    if (!(voxel > 0.0) || !std::isfinite(voxel)) throw ParameterError("voxel size must be positive");
    const auto n = cloud.size();
    std::vector<VoxelKey> keys(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a)
            keys[i][a] = static_cast<std::int64_t>(std::floor(static_cast<double>(cloud.position[i][a]) / voxel));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

    PointCloud out(cloud.schema, cloud.frame);
    out.meta = cloud.meta;
    std::size_t begin = 0;
    while (begin < n) {
        std::size_t end = begin + 1;
        while (end < n && keys[order[end]] == keys[order[begin]]) ++end;
        const std::span<const std::size_t> m(order.data() + begin, end - begin);
        const double count = static_cast<double>(m.size());

        out.position.push_back(mean3(cloud.position, m));
        if (!cloud.color.empty()) {
            std::array<double, 4> s{};
            for (auto i : m)
                for (int c = 0; c < 4; ++c) s[c] += cloud.color[i][c];
            Rgba rgba{};
            for (int c = 0; c < 4; ++c) rgba[c] = static_cast<std::uint8_t>(std::lround(s[c] / count));
            out.color.push_back(rgba);
        }
        if (!cloud.confidence.empty()) {
            std::uint32_t lo = cloud.confidence[m[0]];
            for (auto i : m) lo = std::min(lo, cloud.confidence[i]);
            out.confidence.push_back(lo);
        }
        if (!cloud.depth.empty()) {
            double s = 0.0;
            for (auto i : m) s += cloud.depth[i];
            out.depth.push_back(static_cast<float>(s / count));
        }
        if (!cloud.orientation.empty()) out.orientation.push_back(mean3(cloud.orientation, m));
        if (!cloud.angular_velocity.empty()) out.angular_velocity.push_back(mean3(cloud.angular_velocity, m));
        if (!cloud.device_position.empty()) out.device_position.push_back(mean3(cloud.device_position, m));
        for (std::size_t c = 0; c < cloud.opaque.size(); ++c) {
            double s = 0.0;
            for (auto i : m) s += cloud.opaque[c].values[i];
            out.opaque[c].values.push_back(static_cast<float>(s / count));
        }
        begin = end;
    }
    return out;
}

std::size_t NormalField::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

NormalField estimate_normals(std::span<const Eigen::Vector3d> points, double radius, std::size_t max_nn,
                             std::span<const Eigen::Vector3d> viewpoints) {
    if (!(radius > 0.0)) throw ParameterError("normal radius must be positive");
    if (max_nn < 1) throw ParameterError("max_nn must be >= 1");
    if (!viewpoints.empty() && viewpoints.size() != points.size())
        throw ParameterError("viewpoint count must match point count");
    const auto n = points.size();
    NormalField f;
    f.normals.assign(n, Eigen::Vector3d::Zero());
    f.valid.assign(n, 0);
    f.ambiguous.assign(n, 0);
    const KdTree tree(points);
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < n; ++i) {
        const auto nn = tree.knn(points[i], max_nn, r2);
        if (nn.size() < 3) continue;
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto& x : nn) c += points[x.index];
        c /= static_cast<double>(nn.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& x : nn) {
            const Eigen::Vector3d d = points[x.index] - c;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(nn.size());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        if (es.info() != Eigen::Success) continue;
        const auto& ev = es.eigenvalues();  // ascending
        if (!(ev[1] > 1e-12 * std::max(ev[2], 1e-300))) continue;  // collinear or coincident
        Eigen::Vector3d nrm = es.eigenvectors().col(0).normalized();

        double cue = 0.0;
        double scale = 1.0;
        if (!viewpoints.empty()) {
            const Eigen::Vector3d to_view = viewpoints[i] - points[i];
            cue = nrm.dot(to_view);
            scale = to_view.norm();
        } else {
            cue = nrm.z();
        }
        if (cue < 0.0) nrm = -nrm;
        f.ambiguous[i] = std::abs(cue) <= 1e-3 * scale ? 1 : 0;
        f.normals[i] = nrm;
        f.valid[i] = 1;
    }
    return f;
}

NormalField estimate_normals(const PointCloud& cloud, double radius, std::size_t max_nn) {
    const auto pts = positions_d(cloud);
    if (cloud.has(attr::device_position)) {
        std::vector<Eigen::Vector3d> views;
        views.reserve(cloud.size());
        for (const auto& v : cloud.device_position) views.push_back(v.cast<double>());
        return estimate_normals(pts, radius, max_nn, views);
    }
    return estimate_normals(pts, radius, max_nn);
}

PointCloud merge(std::span<const PointCloud> clouds) {
    if (clouds.empty()) return PointCloud{};
    const auto& first = clouds.front();
    std::size_t total = 0;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        if (!(clouds[i].schema == first.schema)) throw MergeError("schema mismatch", i);
        if (clouds[i].frame != first.frame) throw MergeError("frame mismatch", i);
        total += clouds[i].size();
    }
    PointCloud out(first.schema, first.frame);
    out.meta = first.meta;
    out.reserve(total);
    for (const auto& c : clouds)
        for (std::size_t i = 0; i < c.size(); ++i) out.push_from(c, i);
    return out;
}

double point_spacing(std::span<const Eigen::Vector3d> points) {
    if (points.size() < 2) throw ParameterError("point spacing needs at least 2 points");
    const KdTree tree(points);
    double s = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto nn = tree.knn(points[i], 2);
        const auto& other = nn[0].index == i ? nn[1] : nn[0];
        s += std::sqrt(other.dist2);
    }
    return s / static_cast<double>(points.size());
}

double point_spacing(const PointCloud& cloud) { return point_spacing(positions_d(cloud)); }

}  // namespace mcs3d
