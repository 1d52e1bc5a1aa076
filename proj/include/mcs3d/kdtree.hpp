#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mcs3d {

struct Neighbor {
    std::size_t index;
    double dist2;  // squared Euclidean distance

    bool operator<(const Neighbor& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index); }
    bool operator==(const Neighbor&) const = default;
};

/// Balanced k-d tree over points of any fixed dimension, split at the median of the widest
/// axis. Results are ordered by (distance, index), so equidistant points resolve to the lowest
/// index. The tree copies the coordinates it indexes.
class KdTree {
public:
    KdTree() = default;
    /// `coords` holds `coords.size() / dim` points, row-major.
    KdTree(std::span<const double> coords, std::size_t dim);
    explicit KdTree(std::span<const Eigen::Vector3d> points);

    std::size_t size() const { return n_; }
    std::size_t dim() const { return dim_; }

    /// The min(k, size()) nearest points within `max_dist2` (squared).
    std::vector<Neighbor> knn(std::span<const double> query, std::size_t k,
                              double max_dist2 = std::numeric_limits<double>::infinity()) const;
    std::vector<Neighbor> knn(const Eigen::Vector3d& q, std::size_t k,
                              double max_dist2 = std::numeric_limits<double>::infinity()) const;

    /// All points with distance <= radius, sorted.
    std::vector<Neighbor> radius(std::span<const double> query, double radius) const;
    std::vector<Neighbor> radius(const Eigen::Vector3d& q, double radius) const;

    /// Nearest point; index == size() when the tree is empty or nothing lies within max_dist2.
    Neighbor nearest(std::span<const double> query,
                     double max_dist2 = std::numeric_limits<double>::infinity()) const;
    Neighbor nearest(const Eigen::Vector3d& q, double max_dist2 = std::numeric_limits<double>::infinity()) const;

private:
    struct Node {
        std::uint32_t begin = 0;
        std::uint32_t end = 0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint32_t axis = 0;
        double split = 0.0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);
    double dist2_to(std::size_t point, const double* q) const;

    template <typename Visitor>
    void search(std::int32_t node, const double* q, Visitor& v) const;

    std::size_t dim_ = 0;
    std::size_t n_ = 0;
    std::vector<double> coords_;
    std::vector<std::uint32_t> perm_;
    std::vector<Node> nodes_;
};

}  // namespace mcs3d
