#include "mcs3d/client.hpp"

#include <numbers>
#include <random>
#include <thread>

#include <httplib.h>

#include "mcs3d/error.hpp"
#include "mcs3d/ply.hpp"
#include "mcs3d/server.hpp"

namespace mcs3d {

using nlohmann::json;

struct ApiClient::Impl {
    httplib::Client http;
    Impl(const std::string& host, int port) : http(host, port) {
        http.set_read_timeout(600, 0);
        http.set_write_timeout(600, 0);
    }
};

ApiClient::ApiClient(std::string host, int port) : impl_(std::make_unique<Impl>(host, port)) {}
ApiClient::~ApiClient() = default;

namespace {

httplib::Response must(httplib::Result res) {
    if (!res) throw ApiError(0, "connection failed: " + httplib::to_string(res.error()));
    return std::move(*res);
}

}  // namespace

json ApiClient::expect_json(int status, const std::string& body, int ok_lo, int ok_hi) const {
    json j = body.empty() ? json(nullptr) : json::parse(body, nullptr, false);
    if (status < ok_lo || status > ok_hi) {
        const std::string msg = j.is_object() && j.contains("error") ? j["error"].get<std::string>() : body;
        throw ApiError(status, msg);
    }
    return j;
}

json ApiClient::join(std::string_view mode, double lat, double lon, const std::optional<std::string>& team) {
    json body = {{"mode", mode}, {"lat", lat}, {"lon", lon}};
    if (team) body["team"] = *team;
    const auto& r = must(impl_->http.Post("/api/v1/sessions", body.dump(), "application/json"));
    return expect_json(r.status, r.body);
}

json ApiClient::game(const std::string& geohash) {
    const auto& r = must(impl_->http.Get("/api/v1/game/" + geohash));
    return expect_json(r.status, r.body);
}

json ApiClient::color(const std::string& geohash, const std::string& session, const std::vector<std::uint32_t>& ids) {
    const json body = {{"session_id", session}, {"node_ids", ids}};
    const auto& r = must(impl_->http.Post("/api/v1/game/" + geohash + "/color", body.dump(), "application/json"));
    return expect_json(r.status, r.body);
}

json ApiClient::discover(const std::string& geohash, const std::string& session, double x, double y, double range) {
    const json body = {{"session_id", session}, {"x", x}, {"y", y}, {"range", range}};
    const auto& r = must(impl_->http.Post("/api/v1/game/" + geohash + "/discover", body.dump(), "application/json"));
    return expect_json(r.status, r.body);
}

json ApiClient::upload(const std::string& session, const std::string& geohash, const std::string& ply_bytes) {
    const auto path = "/api/v1/clouds?session_id=" + httplib::detail::encode_query_param(session) +
                      "&geohash=" + httplib::detail::encode_query_param(geohash);
    const auto& r = must(impl_->http.Post(path, ply_bytes, "application/octet-stream"));
    return expect_json(r.status, r.body);
}

json ApiClient::job(const std::string& id) {
    const auto& r = must(impl_->http.Get("/api/v1/jobs/" + id));
    return expect_json(r.status, r.body);
}

std::vector<json> ApiClient::await_jobs(const std::vector<std::string>& ids, std::chrono::duration<double> timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::vector<json> out;
    for (const auto& id : ids) {
        for (;;) {
            auto j = job(id);
            const auto state = j.at("state").get<std::string>();
            if (state != "queued" && state != "running") {
                out.push_back(std::move(j));
                break;
            }
            if (std::chrono::steady_clock::now() > deadline) throw ApiError(408, "timed out waiting for " + id);
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    }
    return out;
}

std::string ApiClient::udt(const std::string& geohash, std::string_view format) {
    const auto& r = must(impl_->http.Get("/api/v1/udt/" + geohash + "?format=" + std::string(format)));
    if (r.status != 200) expect_json(r.status, r.body);
    return r.body;
}

json ApiClient::registrations(std::string_view status) {
    const std::string q = status.empty() ? "" : "?status=" + std::string(status);
    const auto& r = must(impl_->http.Get("/api/v1/registrations" + q));
    return expect_json(r.status, r.body);
}

json ApiClient::review(const std::string& id, std::string_view verdict, const std::optional<RigidTransform>& adjustment) {
    json body = {{"verdict", verdict}};
    if (adjustment) body["adjustment"] = transform_to_json(*adjustment);
    const auto& r = must(impl_->http.Post("/api/v1/registrations/" + id + "/review", body.dump(), "application/json"));
    return expect_json(r.status, r.body);
}

PassiveRun simulate_passive(ApiClient& api, const SceneModel& scene, const Trajectory& trajectory,
                            const SensorModel& sensor, PassiveScanConfig cfg, bool await) {
    PassiveRun run;
    const auto start = trajectory.waypoints.front();
    const LatLon loc = scene.frame().to_geo(start);
    const auto joined = api.join("passive", loc.lat, loc.lon);
    run.session_id = joined.at("session_id").get<std::string>();
    cfg.session_id = run.session_id;
    run.scan = passive_scan(scene, trajectory, sensor, cfg);
    std::vector<std::string> job_ids;
    for (const auto& chunk : run.scan.chunks) {
        auto ack = api.upload(run.session_id, chunk.meta->geohash, ply::write(chunk, ply::Encoding::Binary));
        job_ids.push_back(ack.at("job_id").get<std::string>());
        run.acks.push_back(std::move(ack));
    }
    if (await) run.jobs = api.await_jobs(job_ids);
    return run;
}

ActiveRun simulate_active(ApiClient& api, LatLon location, const ActiveRunConfig& cfg) {
    if (cfg.agents == 0) throw ParameterError("need at least one agent");
    ActiveRun run;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Player {
        std::string session;
        Eigen::Vector2d xy;
    };
    std::vector<Player> players;
    double width = 0.0, height = 0.0;
    for (std::size_t a = 0; a < cfg.agents; ++a) {
        auto j = api.join("active", location.lat, location.lon);
        run.geohash = j.at("geohash").get<std::string>();
        width = j.at("game").at("width").get<double>();
        height = j.at("game").at("height").get<double>();
        players.push_back({j.at("session_id").get<std::string>(), {unit(rng) * width, unit(rng) * height}});
        run.sessions.push_back(std::move(j));
    }
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (auto& p : players) {
            const double a = unit(rng) * 2.0 * std::numbers::pi;
            p.xy += cfg.step_length * Eigen::Vector2d(std::cos(a), std::sin(a));
            p.xy = p.xy.cwiseMax(Eigen::Vector2d::Zero()).cwiseMin(Eigen::Vector2d(width, height));
            api.discover(run.geohash, p.session, p.xy.x(), p.xy.y(), cfg.sensing_range);
            const auto doc = api.game(run.geohash);
            std::vector<std::uint32_t> ids;
            for (const auto& n : doc.at("nodes")) {
                const Eigen::Vector2d q(n.at("x").get<double>(), n.at("y").get<double>());
                if ((q - p.xy).norm() <= cfg.paint_radius) ids.push_back(n.at("id").get<std::uint32_t>());
            }
            if (!ids.empty()) api.color(run.geohash, p.session, ids);
        }
        const auto doc = api.game(run.geohash);
        run.history.push_back({doc.at("node_count").get<std::size_t>(), doc.at("colored_count").get<std::size_t>()});
        if (step + 1 == cfg.steps) run.final_game = doc;
    }
    return run;
}

}  // namespace mcs3d
