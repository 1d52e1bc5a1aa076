#include "mcs3d/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "mcs3d/error.hpp"
#include "mcs3d/kdtree.hpp"

namespace mcs3d {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

// --- RigidTransform ---------------------------------------------------------------------------

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::about_z(double angle, const Eigen::Vector3d& t) {
    return {Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix(), t};
}

RigidTransform RigidTransform::inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

RigidTransform RigidTransform::compose(const RigidTransform& first) const { return {R * first.R, R * first.t + t}; }

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
}

bool RigidTransform::is_valid(double tol) const {
    return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol && t.allFinite();
}

double rotation_error_deg(const RigidTransform& a, const RigidTransform& b) {
    const Eigen::Matrix3d d = a.R * b.R.transpose();
    const double c = std::clamp((d.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& T) {
    PointCloud out = cloud;
    for (auto& p : out.position) p = T.apply(p.cast<double>()).cast<float>();
    for (auto& p : out.device_position) p = T.apply(p.cast<double>()).cast<float>();
    return out;
}

std::vector<Eigen::Vector3d> transform_points(std::span<const Eigen::Vector3d> pts, const RigidTransform& T) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(T.apply(p));
    return out;
}

std::string_view status_name(RegistrationStatus s) {
    switch (s) {
        case RegistrationStatus::Success: return "success";
        case RegistrationStatus::FailedGlobal: return "failed_global";
        case RegistrationStatus::FailedLocal: return "failed_local";
        case RegistrationStatus::PendingReview: return "pending_review";
    }
    return "?";
}

RegistrationStatus parse_status(std::string_view s) {
    if (s == "success") return RegistrationStatus::Success;
    if (s == "failed_global") return RegistrationStatus::FailedGlobal;
    if (s == "failed_local") return RegistrationStatus::FailedLocal;
    if (s == "pending_review") return RegistrationStatus::PendingReview;
    throw ParameterError("unknown registration status: " + std::string(s));
}

void RansacConfig::validate() const {
    if (n < 3) throw ParameterError("RANSAC sample size must be >= 3");
    if (!(edge_similarity > 0.0 && edge_similarity <= 1.0)) throw ParameterError("edge similarity must be in (0,1]");
    if (!(distance_threshold > 0.0)) throw ParameterError("RANSAC distance threshold must be positive");
    if (max_iterations == 0) throw ParameterError("RANSAC needs at least one iteration");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ParameterError("RANSAC confidence must be in (0,1)");
}

// --- rigid estimation -------------------------------------------------------------------------

RigidTransform estimate_rigid_transform(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst) {
    if (src.size() != dst.size()) throw ParameterError("point sets differ in length");
    if (src.size() < 3) throw DegenerateInputError("rigid estimation needs at least 3 pairs");
    const double n = static_cast<double>(src.size());
    Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs /= n;
    cd /= n;
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) H += (src[i] - cs) * (dst[i] - cd).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) throw DegenerateInputError("correspondences are collinear");
    const Eigen::Matrix3d& U = svd.matrixU();
    const Eigen::Matrix3d& V = svd.matrixV();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;
    RigidTransform T;
    T.R = V * D * U.transpose();
    T.t = cd - T.R * cs;
    return T;
}

// --- evaluation -------------------------------------------------------------------------------

namespace {

struct Association {
    std::vector<Eigen::Vector3d> src;  // transformed source points with a partner
    std::vector<Eigen::Vector3d> dst;
    double sq_sum = 0.0;
};

Association associate(std::span<const Eigen::Vector3d> src, const KdTree& tree, std::span<const Eigen::Vector3d> dst,
                      const RigidTransform& T, double max_distance, bool keep_pairs) {
    Association a;
    const double max_d2 = max_distance * max_distance;
    for (const auto& p : src) {
        const Eigen::Vector3d q = T.apply(p);
        const auto nn = tree.nearest(q, max_d2);
        if (nn.index >= tree.size()) continue;
        a.sq_sum += nn.dist2;
        if (keep_pairs) {
            a.src.push_back(q);
            a.dst.push_back(dst[nn.index]);
        } else {
            a.src.emplace_back();  // only the count matters
        }
    }
    return a;
}

Evaluation summarize(const Association& a, std::size_t n_src) {
    Evaluation e;
    e.inliers = a.src.size();
    e.fitness = n_src == 0 ? 0.0 : static_cast<double>(e.inliers) / static_cast<double>(n_src);
    e.inlier_rmse = e.inliers == 0 ? kInfiniteRmse : std::sqrt(a.sq_sum / static_cast<double>(e.inliers));
    return e;
}

}  // namespace

Evaluation evaluate(std::span<const Eigen::Vector3d> src, const KdTree& dst_tree, const RigidTransform& T,
                    double max_distance) {
    if (!(max_distance > 0.0)) throw ParameterError("max_distance must be positive");
    return summarize(associate(src, dst_tree, {}, T, max_distance, false), src.size());
}

Evaluation evaluate(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                    const RigidTransform& T, double max_distance) {
    const KdTree tree(dst);
    return evaluate(src, tree, T, max_distance);
}

// --- FPFH -------------------------------------------------------------------------------------

namespace {

constexpr double kTieEps = 1e-9;

// Darboux-frame pair features (theta, alpha, phi) of an oriented point pair, with the source
// of the frame chosen as the point whose normal is closer to the connecting line.
bool pair_features(const Eigen::Vector3d& p1, const Eigen::Vector3d& n1, const Eigen::Vector3d& p2,
                   const Eigen::Vector3d& n2, std::array<double, 3>& f) {
    Eigen::Vector3d dp = p2 - p1;
    const double d = dp.norm();
    if (d == 0.0) return false;
    Eigen::Vector3d ns = n1, nt = n2;
    const double a1 = n1.dot(dp) / d;
    const double a2 = n2.dot(dp) / d;
    // Near-ties keep the query point as source so the choice does not depend on rounding.
    if (std::abs(a1) < std::abs(a2) - kTieEps) {
        ns = n2;
        nt = n1;
        dp = -dp;
        f[2] = -a2;
    } else {
        f[2] = a1;
    }
    Eigen::Vector3d v = dp.cross(ns);
    const double vn = v.norm();
    if (vn == 0.0) return false;
    v /= vn;
    const Eigen::Vector3d w = ns.cross(v);
    f[1] = v.dot(nt);
    // theta is circular: snap the seam at +-pi to one side.
    double wy = w.dot(nt);
    if (std::abs(wy) < kTieEps) wy = 0.0;
    f[0] = std::atan2(wy, ns.dot(nt));
    return true;
}

int bin_of(double value, double lo, double hi) {
    const int b = static_cast<int>(std::floor(kFpfhBins * (value - lo) / (hi - lo)));
    return std::clamp(b, 0, kFpfhBins - 1);
}

}  // namespace

FeatureSet compute_fpfh(std::span<const Eigen::Vector3d> points, const NormalField& normals, double radius,
                        std::size_t max_nn) {
    if (normals.size() != points.size()) throw ParameterError("normal field does not match the cloud");
    if (!(radius > 0.0)) throw ParameterError("FPFH radius must be positive");
    const auto n = points.size();
    FeatureSet fs;
    fs.count = n;
    fs.radius = radius;
    fs.data.assign(n * kFpfhDim, 0.0);
    fs.valid.assign(n, 0);
    if (n == 0) return fs;

    const KdTree tree(points);
    const double r2 = radius * radius;
    std::vector<std::vector<Neighbor>> hood(n);
    std::vector<double> spfh(n * kFpfhDim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!normals.valid[i]) continue;
        auto nn = tree.knn(points[i], max_nn + 1, r2);
        std::erase_if(nn, [&](const Neighbor& x) { return x.index == i || !normals.valid[x.index] || x.dist2 == 0.0; });
        if (nn.size() > max_nn) nn.resize(max_nn);
        double* h = spfh.data() + i * kFpfhDim;
        std::size_t pairs = 0;
        for (const auto& x : nn) {
            std::array<double, 3> f{};
            if (!pair_features(points[i], normals.normals[i], points[x.index], normals.normals[x.index], f)) continue;
            h[bin_of(f[0], -std::numbers::pi, std::numbers::pi)] += 1.0;
            h[kFpfhBins + bin_of(f[1], -1.0, 1.0)] += 1.0;
            h[2 * kFpfhBins + bin_of(f[2], -1.0, 1.0)] += 1.0;
            ++pairs;
        }
        if (pairs > 0) {
            const double scale = 100.0 / static_cast<double>(pairs);
            for (int k = 0; k < kFpfhDim; ++k) h[k] *= scale;
        }
        hood[i] = std::move(nn);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!normals.valid[i] || hood[i].empty()) continue;
        double* out = fs.data.data() + i * kFpfhDim;
        const double* own = spfh.data() + i * kFpfhDim;
        for (int k = 0; k < kFpfhDim; ++k) out[k] = own[k];
        const double inv_k = 1.0 / static_cast<double>(hood[i].size());
        for (const auto& x : hood[i]) {
            const double w = inv_k / std::sqrt(x.dist2);
            const double* other = spfh.data() + x.index * kFpfhDim;
            for (int k = 0; k < kFpfhDim; ++k) out[k] += w * other[k];
        }
        fs.valid[i] = 1;
    }
    return fs;
}

FeatureSet compute_fpfh(const PointCloud& cloud, const NormalField& normals, const FpfhConfig& cfg) {
    if (!(cfg.radius_factor > 0.0)) throw ParameterError("FPFH radius factor must be positive");
    const auto pts = positions_d(cloud);
    const double spacing = pts.size() >= 2 ? point_spacing(pts) : 1.0;
    return compute_fpfh(pts, normals, cfg.radius_factor * spacing, cfg.max_nn);
}

// --- matching ---------------------------------------------------------------------------------

std::vector<Correspondence> match_features(const FeatureSet& src, const FeatureSet& dst) {
    std::vector<std::size_t> src_ids, dst_ids;
    std::vector<double> src_rows, dst_rows;
    for (std::size_t i = 0; i < src.count; ++i)
        if (src.valid[i]) {
            src_ids.push_back(i);
            const auto r = src.row(i);
            src_rows.insert(src_rows.end(), r.begin(), r.end());
        }
    for (std::size_t j = 0; j < dst.count; ++j)
        if (dst.valid[j]) {
            dst_ids.push_back(j);
            const auto r = dst.row(j);
            dst_rows.insert(dst_rows.end(), r.begin(), r.end());
        }
    std::vector<Correspondence> out;
    if (src_ids.empty() || dst_ids.empty()) return out;
    const KdTree src_tree(src_rows, kFpfhDim);
    const KdTree dst_tree(dst_rows, kFpfhDim);

    std::vector<std::size_t> forward(src_ids.size());
    for (std::size_t a = 0; a < src_ids.size(); ++a)
        forward[a] = dst_tree.nearest(std::span<const double>(src_rows.data() + a * kFpfhDim, kFpfhDim)).index;
    // Only destinations that some source picked can be mutual.
    std::vector<std::size_t> backward(dst_ids.size(), dst_ids.size() + src_ids.size());
    for (std::size_t a = 0; a < src_ids.size(); ++a) {
        const auto b = forward[a];
        if (backward[b] == dst_ids.size() + src_ids.size())
            backward[b] = src_tree.nearest(std::span<const double>(dst_rows.data() + b * kFpfhDim, kFpfhDim)).index;
        if (backward[b] == a) out.push_back({src_ids[a], dst_ids[b]});
    }
    return out;
}

// --- RANSAC -----------------------------------------------------------------------------------

RegistrationResult ransac_global(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                                 std::span<const Correspondence> corrs, const RansacConfig& cfg) {
    cfg.validate();
    if (corrs.size() < cfg.n)
        throw InsufficientCorrespondenceError("RANSAC needs at least " + std::to_string(cfg.n) + " correspondences, got " +
                                              std::to_string(corrs.size()));
    for (const auto& c : corrs)
        if (c.src >= src.size() || c.dst >= dst.size()) throw ParameterError("correspondence index out of range");

    const auto t0 = Clock::now();
    std::mt19937_64 rng(cfg.rng_seed);
    std::uniform_int_distribution<std::size_t> pick(0, corrs.size() - 1);
    const double thr2 = cfg.distance_threshold * cfg.distance_threshold;

    RegistrationResult best;
    best.correspondences = corrs.size();
    std::size_t best_count = 0;
    double best_rmse = kInfiniteRmse;
    bool found = false;
    std::size_t needed = cfg.max_iterations;

    std::vector<std::size_t> sample(cfg.n);
    std::vector<Eigen::Vector3d> s_src(cfg.n), s_dst(cfg.n);
    std::size_t it = 0;
    for (; it < std::min(needed, cfg.max_iterations); ++it) {
        for (std::size_t k = 0; k < cfg.n; ++k) {
            std::size_t c;
            do {
                c = pick(rng);
            } while (std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(k), c) !=
                     sample.begin() + static_cast<std::ptrdiff_t>(k));
            sample[k] = c;
            s_src[k] = src[corrs[c].src];
            s_dst[k] = dst[corrs[c].dst];
        }
        bool similar = true;
        for (std::size_t a = 0; a < cfg.n && similar; ++a)
            for (std::size_t b = a + 1; b < cfg.n && similar; ++b) {
                const double es = (s_src[a] - s_src[b]).norm();
                const double ed = (s_dst[a] - s_dst[b]).norm();
                const double hi = std::max(es, ed);
                if (!(hi > 0.0) || std::min(es, ed) / hi < cfg.edge_similarity) similar = false;
            }
        if (!similar) continue;

        RigidTransform T;
        try {
            T = estimate_rigid_transform(s_src, s_dst);
        } catch (const DegenerateInputError&) {
            continue;
        }
        bool sample_ok = true;
        for (std::size_t k = 0; k < cfg.n && sample_ok; ++k)
            if ((T.apply(s_src[k]) - s_dst[k]).squaredNorm() > thr2) sample_ok = false;
        if (!sample_ok) continue;

        std::size_t count = 0;
        double sq = 0.0;
        for (const auto& c : corrs) {
            const double d2 = (T.apply(src[c.src]) - dst[c.dst]).squaredNorm();
            if (d2 <= thr2) {
                ++count;
                sq += d2;
            }
        }
        const double rmse = count ? std::sqrt(sq / static_cast<double>(count)) : kInfiniteRmse;
        if (!found || count > best_count || (count == best_count && rmse < best_rmse)) {
            found = true;
            best_count = count;
            best_rmse = rmse;
            best.transform = T;
            const double w = static_cast<double>(count) / static_cast<double>(corrs.size());
            const double wn = std::pow(w, static_cast<double>(cfg.n));
            if (wn >= 1.0) {
                needed = it + 1;
            } else if (wn > 0.0) {
                const double k = std::log(1.0 - cfg.confidence) / std::log(1.0 - wn);
                if (std::isfinite(k)) needed = std::min(cfg.max_iterations, static_cast<std::size_t>(std::ceil(k)));
            }
        }
    }
    best.ransac_iterations = it;
    if (!found) {
        best.status = RegistrationStatus::FailedGlobal;
        best.timings.ransac = seconds_since(t0);
        best.total_seconds = best.timings.ransac;
        return best;
    }
    const auto e = evaluate(src, dst, best.transform, cfg.distance_threshold);
    best.fitness = e.fitness;
    best.inlier_rmse = e.inlier_rmse;
    best.status = RegistrationStatus::Success;
    best.timings.ransac = seconds_since(t0);
    best.total_seconds = best.timings.ransac;
    return best;
}

// --- ICP --------------------------------------------------------------------------------------

namespace {

// Fraction `frac` of a rigid step: rotation angle and translation scaled together.
RigidTransform scaled_step(const RigidTransform& step, double frac) {
    if (frac == 1.0) return step;
    Eigen::AngleAxisd aa(step.R);
    RigidTransform out;
    out.R = Eigen::AngleAxisd(aa.angle() * frac, aa.axis()).toRotationMatrix();
    out.t = step.t * frac;
    return out;
}

}  // namespace

RegistrationResult icp_refine(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
                              const RigidTransform& init, const IcpConfig& cfg) {
    if (src.empty() || dst.empty()) throw ParameterError("ICP needs nonempty clouds");
    if (!(cfg.max_correspondence_distance > 0.0)) throw ParameterError("ICP distance must be positive");
    const auto t0 = Clock::now();
    const KdTree tree(dst);
    RegistrationResult r;
    r.transform = init;

    auto assoc = associate(src, tree, dst, init, cfg.max_correspondence_distance, true);
    auto ev = summarize(assoc, src.size());
    if (ev.inliers == 0) {
        r.status = RegistrationStatus::FailedLocal;
        r.timings.icp = seconds_since(t0);
        r.total_seconds = r.timings.icp;
        return r;
    }
    r.icp_rmse_history.push_back(ev.inlier_rmse);
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        RigidTransform update;
        try {
            update = estimate_rigid_transform(assoc.src, assoc.dst);
        } catch (const DegenerateInputError&) {
            break;
        }
        // Only steps that do not worsen the inlier RMSE are accepted; a rejected step is retried
        // at half length a few times before giving up.
        RigidTransform next;
        decltype(assoc) next_assoc;
        Evaluation next_ev;
        bool accepted = false;
        double frac = 1.0;
        for (int half = 0; half <= 3 && !accepted; ++half, frac *= 0.5) {
            next = scaled_step(update, frac).compose(r.transform);
            next_assoc = associate(src, tree, dst, next, cfg.max_correspondence_distance, true);
            next_ev = summarize(next_assoc, src.size());
            accepted = next_ev.inliers > 0 && next_ev.inlier_rmse <= ev.inlier_rmse;
        }
        if (!accepted) break;
        const double d_rmse = std::abs(ev.inlier_rmse - next_ev.inlier_rmse) / std::max(ev.inlier_rmse, 1e-300);
        const double d_fit = std::abs(ev.fitness - next_ev.fitness) / std::max(ev.fitness, 1e-300);
        r.transform = next;
        assoc = std::move(next_assoc);
        ev = next_ev;
        r.icp_rmse_history.push_back(ev.inlier_rmse);
        ++r.icp_iterations;
        if ((d_rmse < cfg.relative_rmse_epsilon || ev.inlier_rmse < 1e-12) && d_fit < cfg.relative_fitness_epsilon) break;
    }
    r.fitness = ev.fitness;
    r.inlier_rmse = ev.inlier_rmse;
    r.status = RegistrationStatus::Success;
    r.timings.icp = seconds_since(t0);
    r.total_seconds = r.timings.icp;
    return r;
}

// --- pipeline ---------------------------------------------------------------------------------

Preprocessed preprocess(const PointCloud& cloud, double voxel, const SorConfig& sor, bool apply_sor) {
    if (cloud.empty()) throw DegenerateInputError("cannot preprocess an empty cloud");
    PointCloud c = apply_sor ? statistical_outlier_removal(cloud, sor).cloud : cloud;
    c = voxel_downsample(c, voxel);
    if (c.size() < 10)
        throw DegenerateInputError("only " + std::to_string(c.size()) + " points after preprocessing; too sparse to register");
    auto normals = estimate_normals(c, 2.0 * voxel, 30);
    return {std::move(c), std::move(normals)};
}

PreparedCloud prepare(const PointCloud& cloud, const PipelineConfig& cfg, StageTimings* timings,
                      bool already_downsampled) {
    auto t0 = Clock::now();
    PreparedCloud p;
    if (already_downsampled) {
        if (cloud.size() < 10) throw DegenerateInputError("cloud too sparse to register");
        p.cloud = cloud;
        p.normals = estimate_normals(cloud, 2.0 * cfg.voxel, 30);
    } else {
        auto pre = preprocess(cloud, cfg.voxel, cfg.sor, cfg.apply_sor);
        p.cloud = std::move(pre.cloud);
        p.normals = std::move(pre.normals);
    }
    p.points = positions_d(p.cloud);
    if (timings) timings->preprocess += seconds_since(t0);

    t0 = Clock::now();
    const double spacing = point_spacing(p.points);
    p.features = compute_fpfh(p.points, p.normals, cfg.fpfh.radius_factor * spacing, cfg.fpfh.max_nn);
    if (timings) timings->features += seconds_since(t0);
    return p;
}

namespace {

RegistrationResult run_prepared(const PreparedCloud& src, const PreparedCloud& dst, const PipelineConfig& cfg,
                                StageTimings timings, Clock::time_point started) {
    RegistrationResult r;
    auto t0 = Clock::now();
    const auto corrs = match_features(src.features, dst.features);
    timings.matching += seconds_since(t0);
    r.correspondences = corrs.size();

    RansacConfig rc = cfg.ransac;
    rc.distance_threshold = cfg.ransac_threshold_factor * cfg.voxel;
    RegistrationResult global;
    t0 = Clock::now();
    if (corrs.size() >= rc.n) {
        global = ransac_global(src.points, dst.points, corrs, rc);
    } else {
        global.status = RegistrationStatus::FailedGlobal;
    }
    timings.ransac += seconds_since(t0);
    r.ransac_iterations = global.ransac_iterations;

    if (global.status != RegistrationStatus::Success) {
        r.status = RegistrationStatus::FailedGlobal;
        r.transform = global.transform;
        r.timings = timings;
        r.total_seconds = seconds_since(started);
        return r;
    }

    IcpConfig ic = cfg.icp;
    ic.max_correspondence_distance = cfg.icp_distance_factor * cfg.voxel;
    t0 = Clock::now();
    const auto local = icp_refine(src.points, dst.points, global.transform, ic);
    timings.icp += seconds_since(t0);

    r.transform = local.status == RegistrationStatus::Success ? local.transform : global.transform;
    r.fitness = local.fitness;
    r.inlier_rmse = local.inlier_rmse;
    r.icp_iterations = local.icp_iterations;
    r.icp_rmse_history = local.icp_rmse_history;
    const bool accepted = local.status == RegistrationStatus::Success && local.fitness >= cfg.min_fitness &&
                          local.inlier_rmse <= cfg.max_rmse_factor * cfg.voxel;
    r.status = accepted ? RegistrationStatus::Success : RegistrationStatus::FailedLocal;
    r.timings = timings;
    r.total_seconds = seconds_since(started);
    return r;
}

}  // namespace

RegistrationResult register_prepared(const PreparedCloud& src, const PreparedCloud& dst, const PipelineConfig& cfg) {
    return run_prepared(src, dst, cfg, {}, Clock::now());
}

RegistrationResult register_to_prepared(const PointCloud& src, const PreparedCloud& dst, const PipelineConfig& cfg) {
    const auto started = Clock::now();
    StageTimings timings;
    const auto s = prepare(src, cfg, &timings);
    return run_prepared(s, dst, cfg, timings, started);
}

RegistrationResult register_clouds(const PointCloud& src, const PointCloud& dst, const PipelineConfig& cfg) {
    const auto started = Clock::now();
    StageTimings timings;
    const auto s = prepare(src, cfg, &timings);
    const auto d = prepare(dst, cfg, &timings);
    return run_prepared(s, d, cfg, timings, started);
}

}  // namespace mcs3d
