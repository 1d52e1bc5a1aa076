#include "mcs3d/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

#include "mcs3d/error.hpp"

namespace mcs3d {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(std::span<const double> coords, std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ParameterError("k-d tree dimension must be positive");
    if (coords.size() % dim != 0) throw ParameterError("coordinate count not a multiple of dimension");
    n_ = coords.size() / dim;
    coords_.assign(coords.begin(), coords.end());
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), 0u);
    if (n_ > 0) {
        nodes_.reserve(2 * (n_ / kLeafSize + 1));
        build(0, static_cast<std::uint32_t>(n_));
    }
}

KdTree::KdTree(std::span<const Eigen::Vector3d> points)
    : KdTree(std::span<const double>(points.empty() ? nullptr : points.data()->data(), points.size() * 3), 3) {}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    std::uint32_t best_axis = 0;
    double best_spread = -1.0;
    for (std::uint32_t a = 0; a < dim_; ++a) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (auto i = begin; i < end; ++i) {
            const double v = coords_[perm_[i] * dim_ + a];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo > best_spread) {
            best_spread = hi - lo;
            best_axis = a;
        }
    }
    if (best_spread <= 0.0) return id;  // all duplicates: keep as leaf

    const auto mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                         return coords_[x * dim_ + best_axis] < coords_[y * dim_ + best_axis];
                     });
    const double split = coords_[perm_[mid] * dim_ + best_axis];
    nodes_[id].axis = best_axis;
    nodes_[id].split = split;
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

double KdTree::dist2_to(std::size_t point, const double* q) const {
    const double* p = coords_.data() + point * dim_;
    double d = 0.0;
    for (std::size_t a = 0; a < dim_; ++a) {
        const double t = p[a] - q[a];
        d += t * t;
    }
    return d;
}

// Visitor: bound() returns the current squared pruning radius; offer(index, d2) records a point.
template <typename Visitor>
void KdTree::search(std::int32_t node_id, const double* q, Visitor& v) const {
    const Node& node = nodes_[node_id];
    if (node.left < 0) {
        for (auto i = node.begin; i < node.end; ++i) {
            const auto idx = perm_[i];
            const double d2 = dist2_to(idx, q);
            if (d2 <= v.bound()) v.offer(idx, d2);
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const auto near = diff < 0.0 ? node.left : node.right;
    const auto far = diff < 0.0 ? node.right : node.left;
    search(near, q, v);
    if (diff * diff <= v.bound()) search(far, q, v);
}

namespace {

struct KnnVisitor {
    std::size_t k;
    double max_d2;
    std::priority_queue<Neighbor> heap;  // max-heap by (dist2, index)

    double bound() const { return heap.size() < k ? max_d2 : heap.top().dist2; }
    void offer(std::size_t idx, double d2) {
        Neighbor n{idx, d2};
        if (heap.size() < k) {
            heap.push(n);
        } else if (n < heap.top()) {
            heap.pop();
            heap.push(n);
        }
    }
};

struct RadiusVisitor {
    double r2;
    std::vector<Neighbor> out;

    double bound() const { return r2; }
    void offer(std::size_t idx, double d2) { out.push_back({idx, d2}); }
};

struct NearestVisitor {
    Neighbor best;
    double bound() const { return best.dist2; }
    void offer(std::size_t idx, double d2) {
        Neighbor n{idx, d2};
        if (n < best) best = n;
    }
};

}  // namespace

std::vector<Neighbor> KdTree::knn(std::span<const double> query, std::size_t k, double max_dist2) const {
    if (query.size() != dim_) throw ParameterError("query dimension mismatch");
    if (k == 0 || n_ == 0) return {};
    KnnVisitor v{k, max_dist2, {}};
    search(0, query.data(), v);
    std::vector<Neighbor> out(v.heap.size());
    for (auto i = out.size(); i-- > 0;) {
        out[i] = v.heap.top();
        v.heap.pop();
    }
    return out;
}

std::vector<Neighbor> KdTree::knn(const Eigen::Vector3d& q, std::size_t k, double max_dist2) const {
    return knn(std::span<const double>(q.data(), 3), k, max_dist2);
}

std::vector<Neighbor> KdTree::radius(std::span<const double> query, double radius) const {
    if (query.size() != dim_) throw ParameterError("query dimension mismatch");
    if (n_ == 0) return {};
    RadiusVisitor v{radius * radius, {}};
    search(0, query.data(), v);
    std::sort(v.out.begin(), v.out.end());
    return std::move(v.out);
}

std::vector<Neighbor> KdTree::radius(const Eigen::Vector3d& q, double radius) const {
    return this->radius(std::span<const double>(q.data(), 3), radius);
}

Neighbor KdTree::nearest(std::span<const double> query, double max_dist2) const {
    if (query.size() != dim_) throw ParameterError("query dimension mismatch");
    NearestVisitor v{Neighbor{n_, max_dist2}};
    if (n_ > 0) search(0, query.data(), v);
    return v.best;
}

Neighbor KdTree::nearest(const Eigen::Vector3d& q, double max_dist2) const {
    return nearest(std::span<const double>(q.data(), 3), max_dist2);
}

}  // namespace mcs3d
