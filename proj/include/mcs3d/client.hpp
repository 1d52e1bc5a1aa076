#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcs3d/game.hpp"
#include "mcs3d/registration.hpp"
#include "mcs3d/scanner.hpp"

namespace mcs3d {

/// Response of a failed request: HTTP status plus the server's error message.
class ApiError : public std::runtime_error {
public:
    ApiError(int status, const std::string& message)
        : std::runtime_error("HTTP " + std::to_string(status) + ": " + message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

/// Thin synchronous client for the /api/v1 REST surface.
class ApiClient {
public:
    ApiClient(std::string host, int port);
    ~ApiClient();

    nlohmann::json join(std::string_view mode, double lat, double lon,
                        const std::optional<std::string>& team = std::nullopt);
    nlohmann::json game(const std::string& geohash);
    nlohmann::json color(const std::string& geohash, const std::string& session, const std::vector<std::uint32_t>& ids);
    nlohmann::json discover(const std::string& geohash, const std::string& session, double x, double y, double range);
    /// Posts PLY bytes; returns the acknowledgment.
    nlohmann::json upload(const std::string& session, const std::string& geohash, const std::string& ply_bytes);
    nlohmann::json job(const std::string& id);
    /// Polls until every job is no longer queued or running; throws ApiError(408) on timeout.
    std::vector<nlohmann::json> await_jobs(const std::vector<std::string>& ids,
                                           std::chrono::duration<double> timeout = std::chrono::minutes(10));
    std::string udt(const std::string& geohash, std::string_view format = "binary");
    nlohmann::json registrations(std::string_view status = "pending");
    nlohmann::json review(const std::string& id, std::string_view verdict,
                          const std::optional<RigidTransform>& adjustment = std::nullopt);

private:
    nlohmann::json expect_json(int status, const std::string& body, int ok_lo = 200, int ok_hi = 299) const;

    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct PassiveRun {
    PassiveScanResult scan;
    std::string session_id;
    std::vector<nlohmann::json> acks;
    std::vector<nlohmann::json> jobs;  // final job documents when awaited
};

/// Scans the trajectory, joins one passive session at the first pose and uploads every chunk
/// as binary PLY, optionally waiting for the integration jobs.
PassiveRun simulate_passive(ApiClient& api, const SceneModel& scene, const Trajectory& trajectory,
                            const SensorModel& sensor, PassiveScanConfig cfg, bool await = true);

struct ActiveRunConfig {
    std::size_t agents = 4;
    std::size_t steps = 50;
    double step_length = 1.0;  // meters per step
    double sensing_range = 4.0;
    double paint_radius = 1.0;
    std::uint64_t seed = 1;
};

struct ActiveRun {
    std::string geohash;
    std::vector<nlohmann::json> sessions;
    std::vector<NodeStats> history;  // after every step
    nlohmann::json final_game;
};

/// Scripted players in the cell containing `location`: each step every agent takes a random
/// step, discovers nodes in sensing range and paints the discovered nodes within its radius.
ActiveRun simulate_active(ApiClient& api, LatLon location, const ActiveRunConfig& cfg);

}  // namespace mcs3d
