#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mcs3d/point_cloud.hpp"

namespace testing {

/// Random cloud over a random subset of the canonical schema (position always present) plus up
/// to two opaque columns. Values stay inside every attribute's valid domain.
inline mcs3d::PointCloud random_cloud(std::mt19937_64& rng, std::size_t max_points) {
    using namespace mcs3d;
    std::uniform_int_distribution<int> coin(0, 1);
    AttributeSchema schema = AttributeSchema::position_only();
    for (auto name : {attr::color, attr::confidence, attr::depth, attr::orientation, attr::angular_velocity,
                      attr::device_position})
        if (coin(rng)) schema.add(name);
    const int opaque = std::uniform_int_distribution<int>(0, 2)(rng);
    for (int i = 0; i < opaque; ++i) schema.add_opaque("extra" + std::to_string(i));

    PointCloud c(schema, coin(rng) ? Frame::UdtGlobal : Frame::SessionLocal);
    const auto n = std::uniform_int_distribution<std::size_t>(0, max_points)(rng);
    c.resize(n);
    std::uniform_real_distribution<float> f(-1e4f, 1e4f);
    std::uniform_real_distribution<float> small(-10.0f, 10.0f);
    auto v3 = [&] { return Eigen::Vector3f(f(rng), small(rng), f(rng) * 1e-3f); };
    for (std::size_t i = 0; i < n; ++i) {
        c.position[i] = v3();
        if (c.has(attr::color))
            for (auto& b : c.color[i]) b = static_cast<std::uint8_t>(rng() & 0xff);
        if (c.has(attr::confidence)) c.confidence[i] = static_cast<std::uint32_t>(rng() % 3);
        if (c.has(attr::depth)) c.depth[i] = std::abs(small(rng));
        if (c.has(attr::orientation)) c.orientation[i] = v3();
        if (c.has(attr::angular_velocity)) c.angular_velocity[i] = v3();
        if (c.has(attr::device_position)) c.device_position[i] = v3();
        for (auto& col : c.opaque) col.values[i] = f(rng);
    }
    if (coin(rng)) {
        CloudMeta m;
        m.geohash = "xn76urx6";
        m.session_id = "s" + std::to_string(rng() % 1000);
        m.sequence = rng() % 100;
        m.timestamp = small(rng);
        if (coin(rng)) m.origin = std::array<double, 2>{35.9 + small(rng) * 1e-3, 139.6};
        c.meta = m;
    }
    return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    std::random_device rd;
    auto p = std::filesystem::temp_directory_path() / ("mcs3d_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing
