#include "mcs3d/server.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <shared_mutex>
#include <thread>

#include <httplib.h>

#include "mcs3d/error.hpp"
#include "mcs3d/game.hpp"
#include "mcs3d/geohash.hpp"
#include "mcs3d/ply.hpp"
#include "mcs3d/region_store.hpp"

namespace mcs3d {

using nlohmann::json;
namespace fs = std::filesystem;

PipelineConfig ServerConfig::default_integration_pipeline() {
    PipelineConfig p;
    p.voxel = 0.3;
    p.apply_sor = true;
    return p;
}

void ServerConfig::apply_environment() {
    if (const char* v = std::getenv("DATA_DIR"); v && *v) data_dir = v;
    if (const char* v = std::getenv("BIND_ADDR"); v && *v) {
        std::string s = v;
        const auto colon = s.rfind(':');
        if (colon != std::string::npos && s.find(':') == colon) {
            port = std::stoi(s.substr(colon + 1));
            s = s.substr(0, colon);
        }
        if (!s.empty()) bind_address = s;
    }
    if (const char* v = std::getenv("GEOHASH_PRECISION"); v && *v) geohash_precision = std::stoi(v);
}

// --- encodings -------------------------------------------------------------------------------

std::string encode_point_buffer(const PointCloud& cloud) {
    const auto n = static_cast<std::uint32_t>(cloud.size());
    std::string out(4 + std::size_t{n} * 16, '\0');
    char* p = out.data();
    auto put32 = [&p](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) *p++ = static_cast<char>((v >> (8 * b)) & 0xff);
    };
    put32(n);
    for (const auto& q : cloud.position)
        for (int k = 0; k < 3; ++k) {
            std::uint32_t bits;
            std::memcpy(&bits, &q[k], 4);
            put32(bits);
        }
    const bool has_color = cloud.has(attr::color);
    for (std::size_t i = 0; i < n; ++i) {
        const Rgba c = has_color ? cloud.color[i] : Rgba{200, 200, 200, 255};
        for (auto v : c) *p++ = static_cast<char>(v);
    }
    return out;
}

PointCloud decode_point_buffer(std::string_view bytes) {
    auto get32 = [&bytes](std::size_t off) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<std::uint8_t>(bytes[off + b])) << (8 * b);
        return v;
    };
    if (bytes.size() < 4) throw TruncationError(4, bytes.size());
    const std::size_t n = get32(0);
    if (bytes.size() != 4 + n * 16) throw TruncationError(4 + n * 16, bytes.size());
    PointCloud c(AttributeSchema::of({attr::position, attr::color}));
    c.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t bits = get32(4 + (i * 3 + k) * 4);
            std::memcpy(&c.position[i][k], &bits, 4);
        }
    const std::size_t base = 4 + n * 12;
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 4; ++k) c.color[i][k] = static_cast<std::uint8_t>(bytes[base + i * 4 + k]);
    return c;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
        for (int s : {18, 12, 6, 0}) out += kB64[(v >> s) & 63];
    }
    if (const auto rest = in.size() - i; rest > 0) {
        std::uint32_t v = std::uint8_t(in[i]) << 16;
        if (rest == 2) v |= std::uint8_t(in[i + 1]) << 8;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += rest == 2 ? kB64[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view in) {
    if (in.size() % 4 != 0) throw ParameterError("base64 length is not a multiple of 4");
    std::size_t pad = 0;
    while (pad < 2 && pad < in.size() && in[in.size() - 1 - pad] == '=') ++pad;
    in.remove_suffix(pad);
    std::string out;
    out.reserve(in.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : in) {
        const char* pos = std::strchr(kB64, ch);
        if (!pos || ch == '\0') throw ParameterError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(pos - kB64);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xff);
        }
    }
    return out;
}

void color_by_confidence(PointCloud& cloud) {
    static constexpr Rgba kLevels[] = {{220, 50, 47, 255}, {230, 200, 40, 255}, {60, 180, 75, 255}};
    if (!cloud.has(attr::color)) throw ParameterError("cloud has no color column");
    const bool has_conf = cloud.has(attr::confidence);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::uint32_t level = has_conf ? std::min<std::uint32_t>(cloud.confidence[i], 2) : 2;
        cloud.color[i] = kLevels[level];
    }
}

json transform_to_json(const RigidTransform& T) {
    const Eigen::Matrix4d m = T.matrix();
    json rows = json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

RigidTransform transform_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ParameterError("transform must be a 4x4 row-major array");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4) throw ParameterError("transform must be a 4x4 row-major array");
        for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
    }
    const auto T = RigidTransform::from_matrix(m);
    if (!T.is_valid(1e-6)) throw ParameterError("transform is not a proper rigid motion");
    return T;
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json timings_json(const StageTimings& t) {
    return {{"preprocess", t.preprocess}, {"features", t.features}, {"matching", t.matching},
            {"ransac", t.ransac},         {"icp", t.icp},           {"sum", t.sum()}};
}

RegistrationResult result_from_json(const json& j) {
    RegistrationResult r;
    r.status = parse_status(j.at("status").get<std::string>());
    r.transform = RigidTransform::from_matrix([&] {
        Eigen::Matrix4d m;
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) m(a, b) = j.at("transform")[a][b].get<double>();
        return m;
    }());
    r.fitness = j.at("fitness").get<double>();
    r.inlier_rmse = j.at("inlier_rmse").is_null() ? kInfiniteRmse : j.at("inlier_rmse").get<double>();
    const auto& t = j.at("timings");
    r.timings = {t.at("preprocess").get<double>(), t.at("features").get<double>(), t.at("matching").get<double>(),
                 t.at("ransac").get<double>(), t.at("icp").get<double>()};
    r.total_seconds = j.at("total_seconds").get<double>();
    r.correspondences = j.value("correspondences", std::size_t{0});
    r.ransac_iterations = j.value("ransac_iterations", std::size_t{0});
    r.icp_iterations = j.value("icp_iterations", std::size_t{0});
    if (j.contains("icp_rmse_history")) r.icp_rmse_history = j.at("icp_rmse_history").get<std::vector<double>>();
    return r;
}

}  // namespace

json result_to_json(const RegistrationResult& r) {
    return {{"status", status_name(r.status)},
            {"transform", transform_to_json(r.transform)},
            {"fitness", r.fitness},
            {"inlier_rmse", finite_or_null(r.inlier_rmse)},
            {"timings", timings_json(r.timings)},
            {"total_seconds", r.total_seconds},
            {"correspondences", r.correspondences},
            {"ransac_iterations", r.ransac_iterations},
            {"icp_iterations", r.icp_iterations},
            {"icp_rmse_history", r.icp_rmse_history}};
}

// --- server state ----------------------------------------------------------------------------

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct Session {
    std::string id;
    bool active = false;
    std::optional<std::string> team;
    std::string geohash;
    double created = 0.0;
    double last_seen = 0.0;
};

json session_json(const Session& s) {
    return {{"session_id", s.id},
            {"mode", s.active ? "active" : "passive"},
            {"team", s.team ? json(*s.team) : json(nullptr)},
            {"geohash", s.geohash},
            {"created", s.created},
            {"last_seen", s.last_seen}};
}

Session session_from_json(const json& j) {
    Session s;
    s.id = j.at("session_id").get<std::string>();
    s.active = j.at("mode").get<std::string>() == "active";
    if (!j.at("team").is_null()) s.team = j.at("team").get<std::string>();
    s.geohash = j.at("geohash").get<std::string>();
    s.created = j.at("created").get<double>();
    s.last_seen = j.at("last_seen").get<double>();
    return s;
}

struct Job {
    std::string id;
    std::string chunk_id;
    std::string geohash;
    std::string state = "queued";  // queued | running | done | skipped
    std::optional<RegistrationResult> result;
    bool merged = false;
    std::string note;
    std::string review_id;
};

json job_json(const Job& j) {
    return {{"job_id", j.id},
            {"chunk_id", j.chunk_id},
            {"geohash", j.geohash},
            {"state", j.state},
            {"merged", j.merged},
            {"note", j.note},
            {"review_id", j.review_id.empty() ? json(nullptr) : json(j.review_id)},
            {"result", j.result ? result_to_json(*j.result) : json(nullptr)}};
}

Job job_from_json(const json& j) {
    Job out;
    out.id = j.at("job_id").get<std::string>();
    out.chunk_id = j.at("chunk_id").get<std::string>();
    out.geohash = j.at("geohash").get<std::string>();
    out.state = j.at("state").get<std::string>();
    out.merged = j.value("merged", false);
    out.note = j.value("note", "");
    if (!j.at("review_id").is_null()) out.review_id = j.at("review_id").get<std::string>();
    if (!j.at("result").is_null()) out.result = result_from_json(j.at("result"));
    return out;
}

struct Review {
    std::string id;
    std::string chunk_id;
    std::string geohash;
    RegistrationResult proposed;
    std::string status = "pending";  // pending | approved | rejected
    std::optional<RigidTransform> adjustment;
    std::string note;
    double created = 0.0;
    double decided = 0.0;
};

json review_json(const Review& r) {
    return {{"id", r.id},
            {"chunk_id", r.chunk_id},
            {"geohash", r.geohash},
            {"proposed", result_to_json(r.proposed)},
            {"status", r.status},
            {"adjustment", r.adjustment ? transform_to_json(*r.adjustment) : json(nullptr)},
            {"note", r.note},
            {"created", r.created},
            {"decided", r.decided}};
}

Review review_from_json(const json& j) {
    Review r;
    r.id = j.at("id").get<std::string>();
    r.chunk_id = j.at("chunk_id").get<std::string>();
    r.geohash = j.at("geohash").get<std::string>();
    r.proposed = result_from_json(j.at("proposed"));
    r.status = j.at("status").get<std::string>();
    if (!j.at("adjustment").is_null()) r.adjustment = transform_from_json(j.at("adjustment"));
    r.note = j.value("note", "");
    r.created = j.value("created", 0.0);
    r.decided = j.value("decided", 0.0);
    return r;
}

enum class StreamMode { Incremental, Frame, Situational };
enum class ColorRule { None, ByConfidence, ByTeamColor };

std::string_view mode_name(StreamMode m) {
    switch (m) {
        case StreamMode::Incremental: return "incremental";
        case StreamMode::Frame: return "frame";
        case StreamMode::Situational: return "situational";
    }
    return "?";
}

std::string_view rule_name(ColorRule r) {
    switch (r) {
        case ColorRule::None: return "none";
        case ColorRule::ByConfidence: return "by-confidence";
        case ColorRule::ByTeamColor: return "by-team-color";
    }
    return "?";
}

struct Subscriber {
    StreamMode mode = StreamMode::Incremental;
    ColorRule rule = ColorRule::None;
    std::optional<std::string> geohash;

    std::mutex m;
    std::condition_variable cv;
    std::deque<std::string> queue;
    std::uint64_t next_seq = 1;
    bool closed = false;

    bool wants(const std::string& cell) const { return !geohash || *geohash == cell; }
};

Rgba team_color(int team) {
    static constexpr Rgba kPalette[] = {{230, 60, 60, 255}, {60, 90, 230, 255}, {60, 190, 90, 255}, {230, 170, 40, 255}};
    if (team < 0) return {160, 160, 160, 255};
    return kPalette[static_cast<std::size_t>(team) % std::size(kPalette)];
}

void color_by_team(PointCloud& cloud, const GameState& game) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector2d xy = cloud.position[i].head<2>().cast<double>();
        int team = kUncolored;
        double best = std::numeric_limits<double>::infinity();
        for (auto id : game.nodes_within(xy, game.node_spacing())) {
            const auto& n = game.nodes().at(id);
            const double d = (n.position - xy).squaredNorm();
            if (n.team != kUncolored && d < best) {
                best = d;
                team = n.team;
            }
        }
        cloud.color[i] = team_color(team);
    }
}

struct HttpError {
    int status;
    std::string message;
};

[[noreturn]] void fail(int status, std::string message) { throw HttpError{status, std::move(message)}; }

json parse_body(const httplib::Request& req) {
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) fail(400, "request body must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        fail(400, std::string("malformed JSON: ") + e.what());
    }
}

GeohashCode parse_code(const std::string& s) {
    try {
        return GeohashCode(s);
    } catch (const Error& e) {
        fail(400, e.what());
    }
}

}  // namespace

struct Server::Impl {
    ServerConfig cfg;
    RegionStore store;
    httplib::Server http;
    std::thread listener;
    std::thread worker;
    int bound_port = -1;
    std::atomic<bool> stopping{false};
    std::mt19937_64 token_rng{std::random_device{}()};

    std::mutex sessions_m;
    std::map<std::string, Session> sessions;

    std::mutex jobs_m;
    std::condition_variable jobs_cv;
    std::condition_variable idle_cv;
    std::map<std::string, Job> jobs;
    std::deque<std::string> queue;
    bool busy = false;
    std::uint64_t job_counter = 0;

    std::mutex reviews_m;
    std::map<std::string, Review> reviews;
    std::uint64_t review_counter = 0;

    // Filtered uploads in their shard frame, keyed by chunk id.
    std::mutex staged_m;
    std::map<std::string, PointCloud> staged;

    std::mutex subs_m;
    std::set<std::shared_ptr<Subscriber>> subs;

    explicit Impl(ServerConfig c) : cfg(std::move(c)), store(c_data_dir(), cfg.geohash_precision) {}

    fs::path c_data_dir() const { return cfg.data_dir.empty() ? fs::path{} : cfg.data_dir / "regions"; }
    fs::path state_dir() const { return cfg.data_dir / "server"; }

    // --- persistence ---

    template <class Map, class F>
    void persist(const Map& items, const char* name, F&& to_j) const {
        if (cfg.data_dir.empty()) return;
        json arr = json::array();
        for (const auto& [k, v] : items) arr.push_back(to_j(v));
        atomic_write(state_dir() / name, arr.dump(1));
    }
    void persist_sessions() const { persist(sessions, "sessions.json", session_json); }
    void persist_jobs() const { persist(jobs, "jobs.json", job_json); }
    void persist_reviews() const { persist(reviews, "reviews.json", review_json); }

    static std::uint64_t suffix_number(const std::string& id) {
        const auto dash = id.rfind('-');
        return dash == std::string::npos ? 0 : std::stoull(id.substr(dash + 1));
    }

    void load_state() {
        store.load();
        if (cfg.data_dir.empty()) return;
        auto read = [&](const char* name) {
            const auto p = state_dir() / name;
            return fs::exists(p) ? json::parse(ply::read_file(p.string())) : json::array();
        };
        for (const auto& j : read("sessions.json")) {
            auto s = session_from_json(j);
            sessions[s.id] = s;
        }
        for (const auto& j : read("jobs.json")) {
            auto job = job_from_json(j);
            job_counter = std::max(job_counter, suffix_number(job.id));
            if (job.state == "running") job.state = "queued";
            if (job.state == "queued") queue.push_back(job.id);
            jobs[job.id] = job;
        }
        for (const auto& j : read("reviews.json")) {
            auto r = review_from_json(j);
            review_counter = std::max(review_counter, suffix_number(r.id));
            reviews[r.id] = r;
        }
    }

    // --- chunk staging ---

    struct Staged {
        GeohashCode cell;
        PointCloud relocated;  // raw upload expressed in the cell frame
        std::vector<std::string> warnings;
    };

    /// Picks the cell holding the capture's device centroid and shifts the chunk into that cell's
    /// frame. Chunks without an origin are taken to be in the requested cell's frame already.
    Staged stage(PointCloud raw, const GeohashCode& requested) const {
        Staged s;
        s.cell = requested;
        if (requested.precision() != store.precision())
            s.cell = geohash_encode(geohash_decode(requested).center(), store.precision());
        const auto& pts = raw.has(attr::device_position) && !raw.device_position.empty() ? raw.device_position : raw.position;
        if (raw.meta && raw.meta->origin && !pts.empty()) {
            Eigen::Vector3d c = Eigen::Vector3d::Zero();
            for (const auto& p : pts) c += p.cast<double>();
            c /= static_cast<double>(pts.size());
            const LatLon origin{(*raw.meta->origin)[0], (*raw.meta->origin)[1]};
            s.cell = geohash_encode(LocalFrame(origin).to_geo(c.head<2>()), store.precision());
            const GeoBox box = geohash_decode(s.cell);
            const Eigen::Vector2d off = LocalFrame({box.lat_lo, box.lon_lo}).to_local(origin);
            const Eigen::Vector3f shift(static_cast<float>(off.x()), static_cast<float>(off.y()), 0.0f);
            for (auto& p : raw.position) p += shift;
            for (auto& p : raw.device_position) p += shift;
            raw.meta->origin = std::array<double, 2>{box.lat_lo, box.lon_lo};
        }
        if (s.cell != requested)
            s.warnings.push_back("chunk relocated from " + requested.str() + " to " + s.cell.str() +
                                 " (cell of the device centroid)");
        if (!raw.meta) raw.meta = CloudMeta{};
        raw.meta->geohash = s.cell.str();
        s.relocated = std::move(raw);
        return s;
    }

    PointCloud filtered_for(const std::string& chunk_id, const RegionShard& shard) {
        {
            std::lock_guard lk(staged_m);
            if (auto it = staged.find(chunk_id); it != staged.end()) return it->second;
        }
        auto s = stage(ply::parse(store.load_chunk(shard, chunk_id)), shard.code);
        auto f = filter_reliability(s.relocated, cfg.filter).cloud;
        std::lock_guard lk(staged_m);
        staged[chunk_id] = f;
        return f;
    }

    PointCloud preprocessed_for(const PointCloud& filtered) const {
        const auto& p = cfg.pipeline;
        try {
            return preprocess(to_tile_schema(filtered), p.voxel, p.sor, p.apply_sor).cloud;
        } catch (const DegenerateInputError&) {
            return voxel_downsample(to_tile_schema(filtered), p.voxel);
        }
    }

    // --- streaming ---

    static std::string sse(std::uint64_t seq, std::string_view event, json data) {
        data["seq"] = seq;
        return "id: " + std::to_string(seq) + "\nevent: " + std::string(event) + "\ndata: " + data.dump() + "\n\n";
    }

    void enqueue(Subscriber& sub, std::string_view event, json data, bool force = false) {
        std::lock_guard lk(sub.m);
        if (sub.closed) return;
        if (!force && sub.queue.size() >= cfg.stream_buffer) {
            sub.closed = true;  // too slow; ends the stream so no sequence number is ever skipped
            sub.queue.clear();
        } else {
            sub.queue.push_back(sse(sub.next_seq++, event, std::move(data)));
        }
        sub.cv.notify_all();
    }

    json points_event(const Subscriber& sub, const RegionShard& shard, PointCloud cloud, const std::string& source,
                      bool snapshot) const {
        if (sub.rule == ColorRule::ByConfidence) color_by_confidence(cloud);
        if (sub.rule == ColorRule::ByTeamColor) color_by_team(cloud, shard.game);
        return {{"kind", mode_name(sub.mode)},
                {"geohash", shard.code.str()},
                {"rule", rule_name(sub.rule)},
                {"source", source},
                {"snapshot", snapshot},
                {"version", shard.version},
                {"count", cloud.size()},
                {"points", base64_encode(encode_point_buffer(cloud))}};
    }

    /// Caller holds the shard lock so snapshot/delta ordering is consistent.
    void broadcast_points(const RegionShard& shard, const PointCloud& cloud, const std::string& source, bool frame) {
        std::lock_guard lk(subs_m);
        for (const auto& sub : subs) {
            if (!sub->wants(shard.code.str())) continue;
            if ((sub->mode == StreamMode::Frame) != frame) continue;
            enqueue(*sub, mode_name(sub->mode), points_event(*sub, shard, to_tile_schema(cloud), source, false));
        }
    }

    void broadcast_game(const RegionShard& shard, json payload) {
        payload["kind"] = "game";
        payload["geohash"] = shard.code.str();
        payload["scores"] = shard.game.scores();
        std::lock_guard lk(subs_m);
        for (const auto& sub : subs)
            if (sub->wants(shard.code.str())) enqueue(*sub, "game", payload);
    }

    // --- integration worker ---

    void enqueue_job(const std::string& id) {
        {
            std::lock_guard lk(jobs_m);
            queue.push_back(id);
        }
        jobs_cv.notify_all();
    }

    void worker_loop() {
        for (;;) {
            std::string id;
            {
                std::unique_lock lk(jobs_m);
                jobs_cv.wait(lk, [&] { return stopping || !queue.empty(); });
                if (stopping) return;
                id = queue.front();
                queue.pop_front();
                busy = true;
                jobs[id].state = "running";
            }
            try {
                run_job(id);
            } catch (const std::exception& e) {
                std::lock_guard lk(jobs_m);
                auto& job = jobs[id];
                job.state = "done";
                job.note = std::string("integration error: ") + e.what();
                persist_jobs();
            }
            {
                std::lock_guard lk(jobs_m);
                busy = false;
            }
            idle_cv.notify_all();
        }
    }

    void run_job(const std::string& id) {
        Job job;
        {
            std::lock_guard lk(jobs_m);
            job = jobs.at(id);
        }
        auto shard = store.shard(GeohashCode(job.geohash));
        IntegrationOutcome out;
        {
            std::unique_lock lk(shard->mutex);
            const auto filtered = filtered_for(job.chunk_id, *shard);
            out = integrate(filtered, *shard, cfg.pipeline);
            if (auto* ref = shard->find_chunk(job.chunk_id)) {
                ref->status = out.mutated ? ChunkStatus::Integrated : ChunkStatus::PendingReview;
                ref->note = out.note;
            }
            store.save(*shard);
            if (out.mutated) broadcast_points(*shard, transform_cloud(out.prepared, out.result.transform), job.chunk_id, false);
        }
        std::string review_id;
        if (!out.mutated) {
            std::lock_guard lk(reviews_m);
            Review r;
            r.id = "rev-" + std::to_string(++review_counter);
            r.chunk_id = job.chunk_id;
            r.geohash = job.geohash;
            r.proposed = out.result;
            r.note = out.note;
            r.created = now_seconds();
            reviews[r.id] = r;
            review_id = r.id;
            persist_reviews();
        }
        std::lock_guard lk(jobs_m);
        auto& j = jobs[id];
        j.state = "done";
        j.result = out.result;
        j.merged = out.mutated;
        j.note = out.note;
        j.review_id = review_id;
        persist_jobs();
    }

    // --- handlers ---

    std::string new_token() {
        std::lock_guard lk(sessions_m);
        char buf[33];
        std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(token_rng()),
                      static_cast<unsigned long long>(token_rng()));
        return buf;
    }

    Session session_or_fail(const std::string& id) {
        std::lock_guard lk(sessions_m);
        const auto it = sessions.find(id);
        if (it == sessions.end()) fail(401, "unknown session");
        it->second.last_seen = now_seconds();
        return it->second;
    }

    json join(const json& body) {
        const auto mode = body.value("mode", std::string{});
        if (mode != "active" && mode != "passive") fail(400, "mode must be 'active' or 'passive'");
        if (!body.contains("lat") || !body.contains("lon") || !body["lat"].is_number() || !body["lon"].is_number())
            fail(400, "lat and lon must be numbers");
        const LatLon loc{body["lat"].get<double>(), body["lon"].get<double>()};
        if (!(loc.lat >= -90.0 && loc.lat <= 90.0 && loc.lon >= -180.0 && loc.lon <= 180.0))
            fail(400, "location out of range");
        auto shard = store.shard_for(loc);

        Session s;
        s.id = new_token();
        s.active = mode == "active";
        s.geohash = shard->code.str();
        s.created = s.last_seen = now_seconds();
        json out;
        if (s.active) {
            std::vector<std::string> teams;
            {
                std::shared_lock lk(shard->mutex);
                teams = shard->game.teams();
            }
            std::lock_guard lk(sessions_m);
            std::map<std::string, std::size_t> sizes;
            for (const auto& t : teams) sizes[t] = 0;
            for (const auto& [k, v] : sessions)
                if (v.active && v.team && sizes.count(*v.team)) ++sizes[*v.team];
            std::string smallest = teams.front();
            for (const auto& t : teams)
                if (sizes[t] < sizes[smallest]) smallest = t;
            std::string team = smallest;
            if (body.contains("team") && body["team"].is_string()) {
                const auto want = body["team"].get<std::string>();
                if (!sizes.count(want)) fail(400, "unknown team: " + want);
                if (sizes[want] == sizes[smallest])
                    team = want;
                else
                    out["warning"] = "team preference overridden to keep teams balanced";
            }
            s.team = team;
            sessions[s.id] = s;
            persist_sessions();
        } else {
            std::lock_guard lk(sessions_m);
            sessions[s.id] = s;
            persist_sessions();
        }
        out["session_id"] = s.id;
        out["mode"] = mode;
        out["geohash"] = s.geohash;
        if (s.active) {
            out["team"] = *s.team;
            std::shared_lock lk(shard->mutex);
            out["game"] = shard->game;
        }
        return out;
    }

    json game_doc(const GeohashCode& code) {
        if (auto shard = store.shard(code, false)) {
            std::shared_lock lk(shard->mutex);
            return shard->game;
        }
        return RegionShard(code).game;
    }

    json color(const GeohashCode& code, const json& body) {
        const auto s = session_or_fail(body.value("session_id", std::string{}));
        if (!s.active) fail(403, "passive sessions cannot color nodes");
        if (!body.contains("node_ids") || !body["node_ids"].is_array()) fail(400, "node_ids must be an array");
        std::vector<std::uint32_t> ids;
        try {
            ids = body["node_ids"].get<std::vector<std::uint32_t>>();
        } catch (const json::exception&) {
            fail(400, "node_ids must be unsigned integers");
        }
        const double ts = body.value("timestamp", now_seconds());
        auto shard = store.shard(code);
        std::unique_lock lk(shard->mutex);
        const int team = shard->game.team_index(*s.team);
        if (team < 0) fail(400, "team " + *s.team + " does not play in this cell");
        std::vector<NodeEvent> events;
        try {
            events = shard->game.color(team, ids, ts);
        } catch (const ParameterError& e) {
            fail(400, e.what());
        }
        store.save_game(*shard);
        json ev = json::array();
        for (const auto& e : events) {
            const auto name = [&](int t) { return t == kUncolored ? json(nullptr) : json(shard->game.teams()[t]); };
            ev.push_back({{"node", e.node}, {"old_team", name(e.old_team)}, {"new_team", name(e.new_team)},
                          {"timestamp", e.timestamp}});
        }
        broadcast_game(*shard, {{"events", ev}});
        return {{"scores", shard->game.scores()}, {"events", ev}};
    }

    json discover(const GeohashCode& code, const json& body) {
        session_or_fail(body.value("session_id", std::string{}));
        if (!body.contains("x") || !body.contains("y")) fail(400, "x and y are required");
        const Eigen::Vector2d xy(body["x"].get<double>(), body["y"].get<double>());
        const double range = body.value("range", 4.0);
        if (!(range > 0.0)) fail(400, "range must be positive");
        auto shard = store.shard(code);
        std::unique_lock lk(shard->mutex);
        const auto added = shard->game.discover(xy, range);
        if (!added.empty()) {
            store.save_game(*shard);
            broadcast_game(*shard, {{"discovered", added}});
        }
        return {{"discovered", added}, {"node_count", shard->game.node_count()}};
    }

    std::pair<int, json> upload(const httplib::Request& req) {
        const auto s = session_or_fail(req.get_param_value("session_id"));
        if (!req.has_param("geohash")) fail(400, "geohash parameter is required");
        const auto requested = parse_code(req.get_param_value("geohash"));
        PointCloud raw;
        try {
            raw = ply::parse(std::string_view(req.body));
        } catch (const Error& e) {
            fail(400, std::string("PLY rejected: ") + e.what());
        }
        const std::size_t raw_points = raw.size();
        auto st = stage(std::move(raw), requested);
        auto filtered = filter_reliability(st.relocated, cfg.filter).cloud;
        auto shard = store.shard(st.cell);

        ChunkRef ref;
        {
            std::unique_lock lk(shard->mutex);
            ref.id = shard->code.str() + "-" + std::to_string(shard->chunks.size() + 1);
            ref.session_id = s.id;
            ref.sequence = st.relocated.meta->sequence;
            ref.timestamp = st.relocated.meta->timestamp;
            ref.raw_points = raw_points;
            ref.filtered_points = filtered.size();
            ref.status = filtered.empty() ? ChunkStatus::Skipped : ChunkStatus::Queued;
            if (filtered.empty()) ref.note = "no points survive the reliability filter";
            store.save_chunk(*shard, ref.id, req.body);
            shard->chunks.push_back(ref);
            ++shard->version;
            store.save(*shard);
            broadcast_points(*shard, filtered, ref.id, true);
        }
        {
            std::lock_guard lk(staged_m);
            staged[ref.id] = filtered;
        }
        {
            std::lock_guard lk(sessions_m);
            sessions[s.id].geohash = shard->code.str();
            persist_sessions();
        }
        Job job;
        {
            std::lock_guard lk(jobs_m);
            job.id = "job-" + std::to_string(++job_counter);
            job.chunk_id = ref.id;
            job.geohash = shard->code.str();
            if (filtered.empty()) {
                job.state = "skipped";
                job.note = ref.note;
            }
            jobs[job.id] = job;
            persist_jobs();
        }
        if (!filtered.empty()) enqueue_job(job.id);
        return {202,
                {{"chunk_id", ref.id},
                 {"job_id", job.id},
                 {"geohash", shard->code.str()},
                 {"raw_points", raw_points},
                 {"filtered_points", filtered.size()},
                 {"queued", !filtered.empty()},
                 {"note", ref.note},
                 {"warnings", st.warnings}}};
    }

    json job_status(const std::string& id) {
        std::lock_guard lk(jobs_m);
        const auto it = jobs.find(id);
        if (it == jobs.end()) fail(404, "unknown job");
        return job_json(it->second);
    }

    std::string udt(const GeohashCode& code, ply::Encoding enc) {
        if (auto shard = store.shard(code, false)) {
            std::shared_lock lk(shard->mutex);
            return ply::write(shard->tile, enc);
        }
        return ply::write(RegionShard(code).tile, enc);
    }

    json list_reviews(const std::string& status) {
        if (!status.empty() && status != "pending" && status != "approved" && status != "rejected")
            fail(400, "status must be pending, approved or rejected");
        std::lock_guard lk(reviews_m);
        json out = json::array();
        for (const auto& [k, r] : reviews)
            if (status.empty() || r.status == status) out.push_back(review_json(r));
        return out;
    }

    json review(const std::string& id, const json& body) {
        const auto verdict = body.value("verdict", std::string{});
        if (verdict != "approve" && verdict != "reject") fail(400, "verdict must be 'approve' or 'reject'");
        std::optional<RigidTransform> adjustment;
        if (body.contains("adjustment") && !body["adjustment"].is_null()) {
            try {
                adjustment = transform_from_json(body["adjustment"]);
            } catch (const std::exception& e) {
                fail(400, e.what());
            }
        }
        Review r;
        {
            std::lock_guard lk(reviews_m);
            const auto it = reviews.find(id);
            if (it == reviews.end()) fail(404, "unknown review item");
            if (it->second.status != "pending") fail(409, "review item is already " + it->second.status);
            // Claimed here, under the lock: any later call sees a final status.
            it->second.status = verdict == "approve" ? "approved" : "rejected";
            it->second.adjustment = adjustment;
            it->second.decided = now_seconds();
            r = it->second;
        }
        auto shard = store.shard(GeohashCode(r.geohash));
        {
            std::unique_lock lk(shard->mutex);
            auto* ref = shard->find_chunk(r.chunk_id);
            if (verdict == "approve") {
                const auto prepared = preprocessed_for(filtered_for(r.chunk_id, *shard));
                const RigidTransform T = adjustment ? adjustment->compose(r.proposed.transform) : r.proposed.transform;
                merge_into_tile(*shard, prepared, T, cfg.pipeline.voxel);
                if (ref) ref->status = ChunkStatus::Approved;
                broadcast_points(*shard, transform_cloud(prepared, T), r.chunk_id, false);
            } else if (ref) {
                ref->status = ChunkStatus::Rejected;
            }
            store.save(*shard);
        }
        std::lock_guard lk(reviews_m);
        persist_reviews();
        return review_json(reviews.at(id));
    }

    std::shared_ptr<Subscriber> subscribe(const httplib::Request& req) {
        auto sub = std::make_shared<Subscriber>();
        const auto mode = req.has_param("mode") ? req.get_param_value("mode") : "incremental";
        if (mode == "incremental")
            sub->mode = StreamMode::Incremental;
        else if (mode == "frame")
            sub->mode = StreamMode::Frame;
        else if (mode == "situational")
            sub->mode = StreamMode::Situational;
        else
            fail(400, "mode must be incremental, frame or situational");
        if (req.has_param("rule")) {
            const auto rule = req.get_param_value("rule");
            if (rule == "by-confidence")
                sub->rule = ColorRule::ByConfidence;
            else if (rule == "by-team-color")
                sub->rule = ColorRule::ByTeamColor;
            else if (rule == "none")
                sub->rule = ColorRule::None;
            else
                fail(400, "unknown coloring rule: " + rule);
        }
        if (sub->mode == StreamMode::Situational && !req.has_param("rule")) sub->rule = ColorRule::ByConfidence;
        if (req.has_param("geohash") && !req.get_param_value("geohash").empty())
            sub->geohash = parse_code(req.get_param_value("geohash")).str();

        std::vector<std::shared_ptr<RegionShard>> shards;
        if (sub->geohash) {
            if (auto s = store.shard(GeohashCode(*sub->geohash), false)) shards.push_back(s);
        } else {
            for (const auto& c : store.codes()) shards.push_back(store.shard(c, false));
        }
        // Hold every shard read lock while snapshotting and registering so no merge slips between.
        std::vector<std::shared_lock<std::shared_mutex>> locks;
        for (const auto& s : shards) locks.emplace_back(s->mutex);
        if (sub->mode != StreamMode::Frame)
            for (const auto& s : shards)
                if (!s->tile.empty()) enqueue(*sub, mode_name(sub->mode), points_event(*sub, *s, s->tile, "tile", true), true);
        std::lock_guard lk(subs_m);
        subs.insert(sub);
        return sub;
    }

    void unsubscribe(const std::shared_ptr<Subscriber>& sub) {
        std::lock_guard lk(subs_m);
        subs.erase(sub);
    }

    void close_streams() {
        std::lock_guard lk(subs_m);
        for (const auto& sub : subs) {
            std::lock_guard l2(sub->m);
            sub->closed = true;
            sub->cv.notify_all();
        }
    }

    // --- routing ---

    template <class F>
    void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const HttpError& e) {
            res.status = e.status;
            res.set_content(json{{"error", e.message}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    }

    static void reply(httplib::Response& res, const json& j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    void routes() {
        const std::string base = "/api/v1";
        http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                  {"Access-Control-Allow-Headers", "Content-Type, Authorization"},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        http.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        http.Get(base + "/health", [](const httplib::Request&, httplib::Response& res) { reply(res, {{"ok", true}}); });
        http.Post(base + "/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, join(parse_body(req)), 201); });
        });
        http.Get(base + R"(/game/([0-9a-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, game_doc(parse_code(req.matches[1].str()))); });
        });
        http.Post(base + R"(/game/([0-9a-z]+)/color)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, color(parse_code(req.matches[1].str()), parse_body(req))); });
        });
        http.Post(base + R"(/game/([0-9a-z]+)/discover)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, discover(parse_code(req.matches[1].str()), parse_body(req))); });
        });
        http.Post(base + "/clouds", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto [status, body] = upload(req);
                reply(res, body, status);
            });
        });
        http.Get(base + R"(/jobs/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, job_status(req.matches[1].str())); });
        });
        http.Get(base + R"(/udt/([0-9a-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto code = parse_code(req.matches[1].str());
                ply::Encoding enc = ply::Encoding::Binary;
                if (req.has_param("format")) {
                    try {
                        enc = ply::parse_encoding(req.get_param_value("format"));
                    } catch (const Error& e) {
                        fail(400, e.what());
                    }
                }
                res.set_content(udt(code, enc), "application/octet-stream");
            });
        });
        http.Get(base + "/registrations", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, list_reviews(req.get_param_value("status"))); });
        });
        http.Post(base + R"(/registrations/([A-Za-z0-9_-]+)/review)",
                  [this](const httplib::Request& req, httplib::Response& res) {
                      guarded(res, [&] { reply(res, review(req.matches[1], parse_body(req))); });
                  });
        http.Get(base + "/stream", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto sub = subscribe(req);
                res.set_header("Cache-Control", "no-cache");
                const auto heartbeat = std::chrono::duration<double>(cfg.stream_heartbeat);
                res.set_chunked_content_provider(
                    "text/event-stream",
                    [this, sub, heartbeat](std::size_t, httplib::DataSink& sink) {
                        std::deque<std::string> out;
                        bool closed;
                        {
                            std::unique_lock lk(sub->m);
                            sub->cv.wait_for(lk, heartbeat, [&] { return !sub->queue.empty() || sub->closed; });
                            out.swap(sub->queue);
                            closed = sub->closed;
                        }
                        if (out.empty() && !closed && !sink.write(":\n\n", 3)) return false;
                        for (const auto& msg : out)
                            if (!sink.write(msg.data(), msg.size())) return false;
                        if (closed || stopping) sink.done();
                        return true;
                    },
                    [this, sub](bool) { unsubscribe(sub); });
            });
        });
    }
};

Server::Server(ServerConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {
    if (impl_->cfg.stream_buffer == 0) throw ParameterError("stream buffer must hold at least one event");
    impl_->cfg.filter.validate();
}

Server::~Server() { stop(); }

void Server::start() {
    auto& d = *impl_;
    d.load_state();
    d.routes();
    d.http.new_task_queue = [] { return new httplib::ThreadPool(32); };
    if (d.cfg.port == 0)
        d.bound_port = d.http.bind_to_any_port(d.cfg.bind_address);
    else
        d.bound_port = d.http.bind_to_port(d.cfg.bind_address, d.cfg.port) ? d.cfg.port : -1;
    if (d.bound_port < 0)
        throw Error("cannot bind " + d.cfg.bind_address + ":" + std::to_string(d.cfg.port));
    d.listener = std::thread([&d] { d.http.listen_after_bind(); });
    d.worker = std::thread([&d] { d.worker_loop(); });
    d.http.wait_until_ready();
}

void Server::wait() {
    if (impl_->listener.joinable()) impl_->listener.join();
}

void Server::stop() {
    auto& d = *impl_;
    if (d.stopping.exchange(true)) return;
    d.close_streams();
    d.http.stop();
    d.jobs_cv.notify_all();
    if (d.listener.joinable()) d.listener.join();
    if (d.worker.joinable()) d.worker.join();
    d.idle_cv.notify_all();
}

int Server::port() const { return impl_->bound_port; }

void Server::wait_idle() {
    auto& d = *impl_;
    std::unique_lock lk(d.jobs_m);
    d.idle_cv.wait(lk, [&] { return d.stopping || (d.queue.empty() && !d.busy); });
}

}  // namespace mcs3d
