#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/point_cloud.hpp"
#include "mcs3d/registration.hpp"

namespace mcs3d {

struct ServerConfig {
    std::filesystem::path data_dir;  // empty: in-memory only
    std::string bind_address = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    int geohash_precision = 8;
    FilterConfig filter;
    PipelineConfig pipeline = default_integration_pipeline();
    /// Events queued per stream subscriber before it is dropped as too slow.
    std::size_t stream_buffer = 256;
    /// Seconds between keep-alive comments on idle streams.
    double stream_heartbeat = 10.0;

    static PipelineConfig default_integration_pipeline();
    /// Overrides from DATA_DIR, BIND_ADDR and GEOHASH_PRECISION when set.
    void apply_environment();
};

/// Compact point buffer used in stream payloads: uint32 count, count xyz float32 triples,
/// then count rgba byte quads, all little-endian.
std::string encode_point_buffer(const PointCloud& cloud);
PointCloud decode_point_buffer(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Recolors in place: confidence 0 red, 1 yellow, 2 and above green.
void color_by_confidence(PointCloud& cloud);

nlohmann::json transform_to_json(const RigidTransform& T);
RigidTransform transform_from_json(const nlohmann::json& j);
nlohmann::json result_to_json(const RegistrationResult& r);

/// REST service over a RegionStore, base path /api/v1. Uploads are acknowledged at once and
/// integrated by a background worker; failed integrations wait in the review queue.
class Server {
public:
    explicit Server(ServerConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Loads persisted state, binds and starts serving on a background thread.
    void start();
    /// Blocks serving on the calling thread (after start() has bound).
    void wait();
    void stop();
    int port() const;

    /// Blocks until no integration job is queued or running.
    void wait_idle();

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace mcs3d
