#include "mcs3d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "mcs3d/error.hpp"

namespace mcs3d {

std::vector<Facade> SceneModel::facades() const {
    std::vector<Facade> out;
    out.reserve(buildings.size() * 4);
    for (const auto& b : buildings) {
        const double h = b.hi.z() - b.lo.z();
        const Eigen::Vector2d lo = b.lo.head<2>(), hi = b.hi.head<2>();
        out.push_back({{lo.x(), lo.y()}, {hi.x(), lo.y()}, h, {0, -1}});  // south
        out.push_back({{hi.x(), lo.y()}, {hi.x(), hi.y()}, h, {1, 0}});   // east
        out.push_back({{hi.x(), hi.y()}, {lo.x(), hi.y()}, h, {0, 1}});   // north
        out.push_back({{lo.x(), hi.y()}, {lo.x(), lo.y()}, h, {-1, 0}});  // west
    }
    return out;
}

namespace {

bool footprints_overlap(const Box& a, const Box& b, double margin) {
    return a.lo.x() - margin < b.hi.x() && b.lo.x() - margin < a.hi.x() && a.lo.y() - margin < b.hi.y() &&
           b.lo.y() - margin < a.hi.y();
}

Rgba random_color(std::mt19937_64& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return Rgba{static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)),
                static_cast<std::uint8_t>(d(rng)), 255};
}

// Pilasters and balcony stacks along each side, an optional setback upper tier, rooftop units.
void add_details(SceneModel& s, const Box& b, std::mt19937_64& rng) {
    auto uni = [&](double a, double c) { return std::uniform_real_distribution<double>(a, c)(rng); };
    const double H = b.hi.z();
    const Eigen::Vector2d lo = b.lo.head<2>(), hi = b.hi.head<2>();
    const Eigen::Vector2d size = hi - lo;
    const Rgba trim = random_color(rng, 60, 240);
    // side: 0 south, 1 north, 2 west, 3 east
    for (int side = 0; side < 4; ++side) {
        const bool along_x = side < 2;
        const double len = along_x ? size.x() : size.y();
        double pos = uni(0.5, 3.0);
        while (true) {
            const double kind = uni(0.0, 1.0);
            double w = uni(0.8, 2.5);
            std::vector<std::pair<double, double>> spans;  // z ranges
            double depth = 0.0;
            if (kind < 0.25) {  // pilaster, sometimes stopping short of the roof
                depth = uni(0.25, 0.6);
                spans.emplace_back(0.0, uni(0.0, 1.0) < 0.6 ? H : uni(0.4, 0.9) * H);
            } else if (kind < 0.5) {  // balcony stack
                depth = uni(0.9, 1.4);
                for (double z = 3.0; z + 1.1 < H; z += 3.0) spans.emplace_back(z, z + 1.1);
            } else if (kind < 0.65) {  // shopfront awning
                w = uni(2.0, 5.0);
                depth = uni(1.0, 2.0);
                const double z = uni(2.3, 2.9);
                spans.emplace_back(z, z + uni(0.3, 0.6));
            } else if (kind < 0.75) {  // projecting sign
                w = uni(0.15, 0.3);
                depth = uni(0.6, 1.2);
                const double z = uni(2.5, std::max(2.6, H - 2.0));
                spans.emplace_back(z, std::min(H, z + uni(1.0, 2.5)));
            }
            if (pos + w > len - 0.3) break;
            for (const auto& [z0, z1] : spans) {
                Box d;
                d.color = trim;
                const double a = (along_x ? lo.x() : lo.y()) + pos;
                if (along_x) {
                    const double y = side == 0 ? lo.y() - depth : hi.y();
                    d.lo = {a, y, z0};
                    d.hi = {a + w, y + depth, z1};
                } else {
                    const double x = side == 2 ? lo.x() - depth : hi.x();
                    d.lo = {x, a, z0};
                    d.hi = {x + depth, a + w, z1};
                }
                if (d.lo.x() >= 0.0 && d.lo.y() >= 0.0 && d.hi.x() <= s.extent.x() && d.hi.y() <= s.extent.y())
                    s.details.push_back(d);
            }
            pos += w + uni(1.0, 4.0);
        }
    }
    if (size.minCoeff() >= 9.0 && uni(0.0, 1.0) < 0.4) {
        Box tier;
        tier.lo = {lo.x() + uni(1.5, 3.0), lo.y() + uni(1.5, 3.0), H};
        tier.hi = {hi.x() - uni(1.5, 3.0), hi.y() - uni(1.5, 3.0), H + uni(2.0, 5.0)};
        tier.color = b.color;
        s.details.push_back(tier);
    }
    if (uni(0.0, 1.0) < 0.5) {  // roof parapet
        const double ph = uni(0.4, 1.0), t = 0.25;
        const Rgba pc = random_color(rng, 80, 220);
        for (const auto& [a, c] : {std::pair<Eigen::Vector2d, Eigen::Vector2d>{lo, {hi.x(), lo.y() + t}},
                                   {{lo.x(), hi.y() - t}, hi},
                                   {{lo.x(), lo.y() + t}, {lo.x() + t, hi.y() - t}},
                                   {{hi.x() - t, lo.y() + t}, {hi.x(), hi.y() - t}}}) {
            Box r;
            r.lo = {a.x(), a.y(), H};
            r.hi = {c.x(), c.y(), H + ph};
            r.color = pc;
            s.details.push_back(r);
        }
    }
    // Rooftop equipment: stair towers, tanks, ducts and condensers, roughly one per 20 m^2.
    const int units = static_cast<int>(size.x() * size.y() / 20.0 * uni(0.6, 1.4));
    std::vector<Box> placed;
    for (int u = 0, tries = 0; u < units && tries < units * 10; ++tries) {
        const double w = std::min(uni(0.6, 3.0), size.x() / 2.0), d = std::min(uni(0.6, 3.0), size.y() / 2.0);
        Box r;
        r.lo = {uni(lo.x() + 0.3, hi.x() - w - 0.3), uni(lo.y() + 0.3, hi.y() - d - 0.3), H};
        r.hi = {r.lo.x() + w, r.lo.y() + d, H + uni(0.5, 3.0)};
        r.color = random_color(rng, 120, 200);
        if (std::any_of(placed.begin(), placed.end(), [&](const Box& o) { return footprints_overlap(r, o, 0.6); }))
            continue;
        placed.push_back(r);
        ++u;
    }
    s.details.insert(s.details.end(), placed.begin(), placed.end());
}

}  // namespace

SceneModel generate_scene(std::uint64_t seed, const Eigen::Vector2d& extent) {
    if (!(extent.x() > 0.0 && extent.y() > 0.0)) throw ParameterError("scene extent must be positive");
    SceneModel s;
    s.seed = seed;
    s.extent = extent;
    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

    constexpr double kBlock = kStreetPitch;
    constexpr double kMinSide = 4.0;
    const int bx_n = static_cast<int>(std::ceil(extent.x() / kBlock));
    const int by_n = static_cast<int>(std::ceil(extent.y() / kBlock));
    for (int bx = 0; bx < bx_n; ++bx) {
        for (int by = 0; by < by_n; ++by) {
            const double x0 = bx * kBlock + kHalfStreet;
            const double y0 = by * kBlock + kHalfStreet;
            const double x1 = std::min((bx + 1) * kBlock - kHalfStreet, extent.x() - kHalfStreet);
            const double y1 = std::min((by + 1) * kBlock - kHalfStreet, extent.y() - kHalfStreet);
            if (x1 - x0 < kMinSide || y1 - y0 < kMinSide) continue;
            // Some blocks stay open as plazas.
            if (uni(0.0, 1.0) < 0.08) continue;

            std::vector<std::array<double, 4>> lots{{x0, y0, x1, y1}};
            const bool split_x = (x1 - x0) >= (y1 - y0);
            const double span = split_x ? x1 - x0 : y1 - y0;
            if (span >= 2 * kMinSide + 3.0 && uni(0.0, 1.0) < 0.6) {
                const double cut = uni(kMinSide, span - kMinSide - 3.0);
                lots = split_x ? std::vector<std::array<double, 4>>{{x0, y0, x0 + cut, y1}, {x0 + cut + 3.0, y0, x1, y1}}
                               : std::vector<std::array<double, 4>>{{x0, y0, x1, y0 + cut}, {x0, y0 + cut + 3.0, x1, y1}};
            }
            for (const auto& lot : lots) {
                double lx0 = lot[0], ly0 = lot[1], lx1 = lot[2], ly1 = lot[3];
                const double sx = std::max(0.0, (lx1 - lx0 - kMinSide) / 2.0);
                const double sy = std::max(0.0, (ly1 - ly0 - kMinSide) / 2.0);
                lx0 += uni(0.0, std::min(sx, 3.0));
                lx1 -= uni(0.0, std::min(sx, 3.0));
                ly0 += uni(0.0, std::min(sy, 3.0));
                ly1 -= uni(0.0, std::min(sy, 3.0));
                Box b;
                b.lo = {lx0, ly0, 0.0};
                b.hi = {lx1, ly1, uni(5.0, 14.0)};
                b.color = random_color(rng, 90, 230);
                s.buildings.push_back(b);
            }
        }
    }
    if (s.buildings.empty()) {
        Box b;
        b.lo = {0.3 * extent.x(), 0.3 * extent.y(), 0.0};
        b.hi = {0.7 * extent.x(), 0.7 * extent.y(), uni(5.0, 14.0)};
        b.color = random_color(rng, 90, 230);
        s.buildings.push_back(b);
    }

    for (const auto& b : s.buildings) add_details(s, b, rng);

    const int target = std::max(2, static_cast<int>(extent.x() * extent.y() / 15.0));
    int attempts = 0;
    while (static_cast<int>(s.obstacles.size()) < target && attempts < target * 30) {
        ++attempts;
        double w = 0, d = 0, h = 0;
        const double kind = uni(0.0, 1.0);
        if (kind < 0.15) {  // pole
            w = d = uni(0.2, 0.4);
            h = uni(2.5, 5.0);
        } else if (kind < 0.25) {  // tree: trunk plus canopy
            const double c = uni(2.0, 4.0);
            const double trunk = uni(2.0, 3.0);
            Box canopy;
            canopy.lo = {uni(c / 2.0, extent.x() - c / 2.0) - c / 2.0, uni(c / 2.0, extent.y() - c / 2.0) - c / 2.0, trunk};
            canopy.hi = {canopy.lo.x() + c, canopy.lo.y() + c, trunk + uni(2.0, 3.5)};
            canopy.color = random_color(rng, 40, 140);
            Box stem;
            const Eigen::Vector3d mid = (canopy.lo + canopy.hi) / 2.0;
            stem.lo = {mid.x() - 0.15, mid.y() - 0.15, 0.0};
            stem.hi = {mid.x() + 0.15, mid.y() + 0.15, trunk};
            stem.color = random_color(rng, 60, 110);
            const bool clash = std::any_of(s.buildings.begin(), s.buildings.end(),
                                           [&](const Box& b) { return footprints_overlap(canopy, b, 0.8); }) ||
                               std::any_of(s.obstacles.begin(), s.obstacles.end(),
                                           [&](const Box& b) { return footprints_overlap(canopy, b, 0.4); });
            if (!clash) {
                s.obstacles.push_back(stem);
                s.obstacles.push_back(canopy);
            }
            continue;
        } else if (kind < 0.35) {  // fence or railing
            w = uni(3.0, 8.0);
            d = uni(0.1, 0.2);
            h = uni(0.9, 1.6);
        } else if (kind < 0.6) {  // bench, bin, planter
            w = uni(0.4, 2.2);
            d = uni(0.4, 0.9);
            h = uni(0.4, 1.2);
        } else if (kind < 0.85) {  // vehicle
            w = uni(1.6, 2.0);
            d = uni(3.8, 4.8);
            h = uni(1.3, 1.8);
        } else {  // kiosk
            w = uni(1.5, 3.0);
            d = uni(1.5, 3.0);
            h = uni(2.0, 3.0);
        }
        if (uni(0.0, 1.0) < 0.5) std::swap(w, d);
        if (w >= extent.x() || d >= extent.y()) continue;
        Box o;
        o.lo = {uni(0.0, extent.x() - w), uni(0.0, extent.y() - d), 0.0};
        o.hi = {o.lo.x() + w, o.lo.y() + d, h};
        o.color = random_color(rng, 20, 250);
        const bool clash = std::any_of(s.buildings.begin(), s.buildings.end(),
                                       [&](const Box& b) { return footprints_overlap(o, b, 0.8); }) ||
                           std::any_of(s.obstacles.begin(), s.obstacles.end(),
                                       [&](const Box& b) { return footprints_overlap(o, b, 0.4); });
        if (!clash) s.obstacles.push_back(o);
    }
    return s;
}

std::uint64_t scene_digest(const SceneModel& scene) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto* list : {&scene.buildings, &scene.details, &scene.obstacles}) {
        for (const auto& b : *list) {
            mix(b.lo.data(), sizeof(double) * 3);
            mix(b.hi.data(), sizeof(double) * 3);
            mix(b.color.data(), 4);
        }
        const std::uint64_t sep = list->size();
        mix(&sep, sizeof sep);
    }
    return h;
}

SceneRaycaster::SceneRaycaster(const SceneModel& scene, double bucket) : scene_(&scene), bucket_(bucket) {
    nx_ = std::max(1, static_cast<int>(std::ceil(scene.extent.x() / bucket)));
    ny_ = std::max(1, static_cast<int>(std::ceil(scene.extent.y() / bucket)));
    buckets_.resize(static_cast<std::size_t>(nx_ * ny_));
    auto add = [&](const Box& b) {
        const int ix0 = std::clamp(static_cast<int>(std::floor(b.lo.x() / bucket)), 0, nx_ - 1);
        const int ix1 = std::clamp(static_cast<int>(std::floor(b.hi.x() / bucket)), 0, nx_ - 1);
        const int iy0 = std::clamp(static_cast<int>(std::floor(b.lo.y() / bucket)), 0, ny_ - 1);
        const int iy1 = std::clamp(static_cast<int>(std::floor(b.hi.y() / bucket)), 0, ny_ - 1);
        for (int ix = ix0; ix <= ix1; ++ix)
            for (int iy = iy0; iy <= iy1; ++iy) buckets_[static_cast<std::size_t>(ix * ny_ + iy)].push_back(&b);
    };
    for (const auto& b : scene.buildings) add(b);
    for (const auto& b : scene.details) add(b);
    for (const auto& b : scene.obstacles) add(b);
}

std::vector<const Box*> SceneRaycaster::near(const Eigen::Vector2d& xy, double range) const {
    const int ix0 = std::clamp(static_cast<int>(std::floor((xy.x() - range) / bucket_)), 0, nx_ - 1);
    const int ix1 = std::clamp(static_cast<int>(std::floor((xy.x() + range) / bucket_)), 0, nx_ - 1);
    const int iy0 = std::clamp(static_cast<int>(std::floor((xy.y() - range) / bucket_)), 0, ny_ - 1);
    const int iy1 = std::clamp(static_cast<int>(std::floor((xy.y() + range) / bucket_)), 0, ny_ - 1);
    std::vector<const Box*> out;
    for (int ix = ix0; ix <= ix1; ++ix)
        for (int iy = iy0; iy <= iy1; ++iy)
            for (const Box* b : buckets_[static_cast<std::size_t>(ix * ny_ + iy)]) {
                const double dx = std::max({b->lo.x() - xy.x(), 0.0, xy.x() - b->hi.x()});
                const double dy = std::max({b->lo.y() - xy.y(), 0.0, xy.y() - b->hi.y()});
                if (dx * dx + dy * dy <= range * range) out.push_back(b);
            }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::optional<RayHit> SceneRaycaster::cast_among(std::span<const Box* const> boxes, const Eigen::Vector3d& o,
                                                 const Eigen::Vector3d& dir, double max_range) const {
    std::optional<RayHit> best;
    double best_t = max_range;
    if (dir.z() < 0.0 && o.z() > 0.0) {
        const double t = -o.z() / dir.z();
        const Eigen::Vector3d p = o + t * dir;
        if (t <= best_t && p.x() >= 0.0 && p.x() <= scene_->extent.x() && p.y() >= 0.0 &&
            p.y() <= scene_->extent.y()) {
            best_t = t;
            best = RayHit{t, scene_->ground_color, Eigen::Vector3d::UnitZ()};
        }
    }
    for (const Box* b : boxes) {
        double t_enter = -std::numeric_limits<double>::infinity();
        double t_exit = std::numeric_limits<double>::infinity();
        int axis = -1;
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
            if (std::abs(dir[a]) < 1e-15) {
                if (o[a] < b->lo[a] || o[a] > b->hi[a]) miss = true;
                continue;
            }
            double t0 = (b->lo[a] - o[a]) / dir[a];
            double t1 = (b->hi[a] - o[a]) / dir[a];
            if (t0 > t1) std::swap(t0, t1);
            if (t0 > t_enter) {
                t_enter = t0;
                axis = a;
            }
            t_exit = std::min(t_exit, t1);
            if (t_enter > t_exit) miss = true;
        }
        if (miss || axis < 0 || t_enter <= 0.0 || t_enter > best_t) continue;
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        n[axis] = dir[axis] > 0 ? -1.0 : 1.0;
        best_t = t_enter;
        best = RayHit{t_enter, b->color, n};
    }
    return best;
}

std::optional<RayHit> SceneRaycaster::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                           double max_range) const {
    const auto boxes = near(origin.head<2>(), max_range);
    return cast_among(boxes, origin, dir, max_range);
}

PointCloud sample_scene(const SceneModel& scene, double spacing, std::uint64_t seed,
                        std::optional<std::array<Eigen::Vector2d, 2>> window) {
    if (!(spacing > 0.0)) throw ParameterError("sampling spacing must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    PointCloud out(AttributeSchema::of({attr::position, attr::color, attr::device_position}), Frame::UdtGlobal);
    constexpr double kStandoff = 2.0;
    auto inside_window = [&](double x, double y) {
        return !window || (x >= (*window)[0].x() && x < (*window)[1].x() && y >= (*window)[0].y() && y < (*window)[1].y());
    };
    const SceneRaycaster index(scene);
    // A sample is hidden when a point just off the surface lies inside some box.
    auto hidden = [&](const Eigen::Vector3d& p, const Eigen::Vector3d& outward) {
        const Eigen::Vector3d q = p + 1e-4 * outward;
        for (const Box* b : index.near(q.head<2>(), 0.0))
            if ((q.array() > b->lo.array()).all() && (q.array() < b->hi.array()).all()) return true;
        return false;
    };
    auto emit = [&](const Eigen::Vector3d& p, const Rgba& c, const Eigen::Vector3d& outward) {
        if (!inside_window(p.x(), p.y()) || hidden(p, outward)) return;
        out.position.push_back(p.cast<float>());
        out.color.push_back(c);
        out.device_position.push_back((p + kStandoff * outward).cast<float>());
    };
    // Samples the rectangle origin + u*e1 + v*e2, u in [0,len1], v in [0,len2].
    auto sample_rect = [&](const Eigen::Vector3d& origin, const Eigen::Vector3d& e1, double len1,
                           const Eigen::Vector3d& e2, double len2, const Rgba& c, const Eigen::Vector3d& outward) {
        const int n1 = std::max(1, static_cast<int>(std::ceil(len1 / spacing)));
        const int n2 = std::max(1, static_cast<int>(std::ceil(len2 / spacing)));
        const double s1 = len1 / n1, s2 = len2 / n2;
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j) {
                const double u = (i + jitter(rng)) * s1;
                const double v = (j + jitter(rng)) * s2;
                emit(origin + u * e1 + v * e2, c, outward);
            }
    };

    {
        const int nx = static_cast<int>(std::ceil(scene.extent.x() / spacing));
        const int ny = static_cast<int>(std::ceil(scene.extent.y() / spacing));
        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j < ny; ++j) {
                const double x = std::min((i + jitter(rng)) * spacing, scene.extent.x());
                const double y = std::min((j + jitter(rng)) * spacing, scene.extent.y());
                emit({x, y, 0.0}, scene.ground_color, Eigen::Vector3d::UnitZ());
            }
        }
    }
    const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
    for (const auto* list : {&scene.buildings, &scene.details, &scene.obstacles}) {
        for (const auto& b : *list) {
            const Eigen::Vector3d d = b.hi - b.lo;
            sample_rect(b.lo, ex, d.x(), ez, d.z(), b.color, -ey);                            // south
            sample_rect({b.lo.x(), b.hi.y(), b.lo.z()}, ex, d.x(), ez, d.z(), b.color, ey);   // north
            sample_rect(b.lo, ey, d.y(), ez, d.z(), b.color, -ex);                            // west
            sample_rect({b.hi.x(), b.lo.y(), b.lo.z()}, ey, d.y(), ez, d.z(), b.color, ex);   // east
            sample_rect({b.lo.x(), b.lo.y(), b.hi.z()}, ex, d.x(), ey, d.y(), b.color, ez);   // roof
        }
    }
    return out;
}

}  // namespace mcs3d
