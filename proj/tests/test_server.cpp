#include <doctest.h>

#include <filesystem>
#include <set>

#include "mcs3d/client.hpp"
#include "mcs3d/error.hpp"
#include "mcs3d/geohash.hpp"
#include "mcs3d/ply.hpp"
#include "mcs3d/region_store.hpp"
#include "mcs3d/scene.hpp"
#include "mcs3d/server.hpp"
#include "sse_reader.hpp"
#include "support.hpp"

using namespace mcs3d;
using nlohmann::json;

namespace {

constexpr double kLat = 35.9, kLon = 139.6;

ServerConfig test_config(std::filesystem::path dir = {}) {
    ServerConfig cfg;
    cfg.data_dir = std::move(dir);
    cfg.port = 0;
    cfg.stream_heartbeat = 0.2;
    return cfg;
}

std::string cell() { return geohash_encode(kLat, kLon, 8).str(); }

/// Reliable points (confidence 2, depth 1) in the requested cell's frame.
PointCloud reliable(std::vector<Eigen::Vector3f> pts) {
    PointCloud c(AttributeSchema::of({attr::position, attr::color, attr::confidence, attr::depth}));
    for (const auto& p : pts) {
        c.position.push_back(p);
        c.color.push_back({10, 20, 30, 255});
        c.confidence.push_back(2);
        c.depth.push_back(1.0f);
    }
    return c;
}

/// A wall-and-ground patch dense enough to seed a tile.
PointCloud seed_patch() {
    std::vector<Eigen::Vector3f> pts;
    for (int i = 0; i < 60; ++i)
        for (int j = 0; j < 30; ++j) {
            pts.push_back({5.0f + i * 0.1f, 8.0f, j * 0.1f});
            pts.push_back({5.0f + i * 0.1f, 5.0f + j * 0.1f, 0.0f});
        }
    return reliable(pts);
}

/// Five scattered points: too sparse to register, so integration defers to review.
PointCloud sparse_chunk() {
    return reliable({{10, 10, 1}, {12, 10, 1}, {10, 12, 1}, {12, 12, 1}, {11, 14, 2}});
}

std::string bin(const PointCloud& c) { return ply::write(c, ply::Encoding::Binary); }

int status_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ApiError& e) {
        return e.status();
    }
    return 200;
}

}  // namespace

TEST_CASE("encodings") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("foob") == "Zm9vYg==");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        std::string s(rng() % 100, '\0');
        for (auto& ch : s) ch = static_cast<char>(rng());
        CHECK(base64_decode(base64_encode(s)) == s);
    }
    CHECK_THROWS(base64_decode("abc"));

    PointCloud c(AttributeSchema::of({attr::position, attr::color}));
    c.position = {{1, 2, 3}, {-4, 5.5f, 6}};
    c.color = {{1, 2, 3, 4}, {5, 6, 7, 8}};
    const auto buf = encode_point_buffer(c);
    CHECK(buf.size() == 4 + 2 * 12 + 2 * 4);
    const auto back = decode_point_buffer(buf);
    CHECK(back.position == c.position);
    CHECK(back.color == c.color);
    CHECK_THROWS(decode_point_buffer(buf.substr(0, buf.size() - 1)));

    const auto T = RigidTransform::about_z(0.4, {1, 2, 3});
    CHECK((transform_from_json(transform_to_json(T)).matrix() - T.matrix()).norm() < 1e-12);
    json bad = transform_to_json(T);
    bad[0][0] = 2.0;
    CHECK_THROWS(transform_from_json(bad));
}

TEST_CASE("sessions, team balance and game access") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());

    const auto p = api.join("passive", kLat, kLon);
    CHECK(p.at("mode") == "passive");
    CHECK(p.at("geohash") == cell());
    CHECK_FALSE(p.contains("game"));
    CHECK_FALSE(p.contains("team"));

    std::map<std::string, int> counts;
    std::vector<json> actives;
    for (int i = 0; i < 4; ++i) {
        auto a = api.join("active", kLat, kLon, std::string("red"));
        CHECK(a.contains("game"));
        ++counts[a.at("team").get<std::string>()];
        if (i % 2 == 1) CHECK(a.contains("warning"));
        actives.push_back(a);
    }
    CHECK(counts["red"] == 2);
    CHECK(counts["blue"] == 2);
    CHECK(status_of([&] { api.join("spectator", kLat, kLon); }) == 400);
    CHECK(status_of([&] { api.join("active", 95.0, kLon); }) == 400);
    CHECK(status_of([&] { api.join("active", kLat, kLon, std::string("green")); }) == 400);

    const std::string gh = cell();
    const auto sid = actives[0].at("session_id").get<std::string>();
    const auto d = api.discover(gh, sid, 5.0, 5.0, 1.0);
    const auto ids = d.at("discovered").get<std::vector<std::uint32_t>>();
    REQUIRE_FALSE(ids.empty());

    CHECK(status_of([&] { api.color(gh, p.at("session_id").get<std::string>(), ids); }) == 403);
    CHECK(status_of([&] { api.color(gh, "nobody", ids); }) == 401);
    auto with_unknown = ids;
    with_unknown.push_back(999999);
    const auto before = api.game(gh);
    CHECK(status_of([&] { api.color(gh, sid, with_unknown); }) == 400);
    CHECK(api.game(gh) == before);

    const auto r = api.color(gh, sid, ids);
    const auto team = actives[0].at("team").get<std::string>();
    CHECK(r.at("scores").at(team) == ids.size());
    const auto g = api.game(gh);
    CHECK(g.at("colored_count") == ids.size());
    std::size_t total = 0;
    for (const auto& [k, v] : g.at("scores").items()) total += v.get<std::size_t>();
    CHECK(total == g.at("colored_count").get<std::size_t>());

    // Unknown cells answer with a fresh document.
    const auto fresh = api.game("xn76urx6");
    CHECK(fresh.at("node_count") == 0);
    server.stop();
}

TEST_CASE("uploads: malformed, filtered out, and the empty tile") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();

    const auto empty_tile = ply::parse(api.udt(gh));
    CHECK(empty_tile.empty());
    CHECK(empty_tile.schema == tile_schema());

    const auto good = bin(sparse_chunk());
    CHECK(status_of([&] { api.upload(sid, gh, good.substr(0, good.size() - 3)); }) == 400);
    CHECK(status_of([&] { api.upload(sid, gh, "not a ply"); }) == 400);
    CHECK(status_of([&] { api.upload("nobody", gh, good); }) == 401);
    CHECK(status_of([&] { api.upload(sid, "a!", good); }) == 400);

    auto zero = sparse_chunk();
    for (auto& c : zero.confidence) c = 0;
    const auto ack = api.upload(sid, gh, bin(zero));
    CHECK(ack.at("chunk_id") == gh + "-1");  // rejected uploads did not consume chunk slots
    CHECK(ack.at("queued") == false);
    CHECK(ack.at("filtered_points") == 0);
    CHECK(api.job(ack.at("job_id").get<std::string>()).at("state") == "skipped");
    CHECK(ply::parse(api.udt(gh)).empty());
    CHECK(status_of([&] { api.job("job-999"); }) == 404);
    server.stop();
}

TEST_CASE("review queue: approve with adjustment, conflicts, reject") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();

    const auto a1 = api.upload(sid, gh, bin(sparse_chunk()));
    const auto a2 = api.upload(sid, gh, bin(sparse_chunk()));
    const auto jobs = api.await_jobs({a1.at("job_id"), a2.at("job_id")});
    for (const auto& j : jobs) {
        CHECK(j.at("state") == "done");
        CHECK(j.at("merged") == false);
        CHECK(j.at("review_id").is_string());
    }
    const auto pending = api.registrations("pending");
    REQUIRE(pending.size() == 2);
    CHECK(pending[0].at("proposed").at("status") == "pending_review");

    const auto id1 = jobs[0].at("review_id").get<std::string>();
    const auto id2 = jobs[1].at("review_id").get<std::string>();
    const auto adj = RigidTransform::about_z(0.0, {1.0, 0.0, 0.0});
    const auto done = api.review(id1, "approve", adj);
    CHECK(done.at("status") == "approved");
    CHECK(status_of([&] { api.review(id1, "approve"); }) == 409);
    CHECK(status_of([&] { api.review(id1, "reject"); }) == 409);
    CHECK(status_of([&] { api.review(id2, "maybe"); }) == 400);
    CHECK(status_of([&] { api.review("rev-404", "approve"); }) == 404);

    const auto tile = ply::parse(api.udt(gh));
    const auto src = sparse_chunk();
    REQUIRE(tile.size() == src.size());
    std::set<std::array<float, 3>> got, want;
    for (const auto& p : tile.position) got.insert({p.x(), p.y(), p.z()});
    for (const auto& p : src.position) want.insert({p.x() + 1.0f, p.y(), p.z()});
    CHECK(got == want);

    CHECK(api.review(id2, "reject").at("status") == "rejected");
    CHECK(ply::parse(api.udt(gh)).size() == src.size());
    CHECK(api.registrations("pending").empty());
    CHECK(api.registrations("approved").size() == 1);
    CHECK(status_of([&] { api.registrations("weird"); }) == 400);
    server.stop();
}

TEST_CASE("udt text and binary carry the same tile") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();
    const auto ack = api.upload(sid, gh, bin(seed_patch()));
    const auto job = api.await_jobs({ack.at("job_id")})[0];
    CHECK(job.at("merged") == true);
    const auto b = ply::parse(api.udt(gh, "binary"));
    const auto t = ply::parse(api.udt(gh, "text"));
    CHECK(b.size() > 0);
    CHECK(bit_equal(b, t));
    server.stop();
}

TEST_CASE("streams: frame bursts, incremental snapshot and deltas, situational colors") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();

    // Seed the tile.
    api.await_jobs({api.upload(sid, gh, bin(seed_patch())).at("job_id")});
    const auto tile = ply::parse(api.udt(gh));

    testing::SseReader frames(server.port(), "/api/v1/stream?mode=frame&geohash=" + gh);
    testing::SseReader inc(server.port(), "/api/v1/stream?mode=incremental&rule=none&geohash=" + gh);
    testing::SseReader sit(server.port(), "/api/v1/stream?mode=situational&geohash=" + gh);
    REQUIRE(frames.wait_connected());
    REQUIRE(inc.wait_connected());
    REQUIRE(sit.wait_connected());

    std::vector<std::string> jobs;
    for (int i = 0; i < 3; ++i) jobs.push_back(api.upload(sid, gh, bin(sparse_chunk())).at("job_id"));
    const auto done = api.await_jobs(jobs);
    api.review(done[0].at("review_id"), "approve");

    const auto fe = frames.wait_for(3);
    REQUIRE(fe.size() >= 3);
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    CHECK(frames.events().size() == 3);  // exactly one frame event per upload
    for (std::size_t i = 0; i < fe.size(); ++i) {
        CHECK(fe[i].event == "frame");
        CHECK(fe[i].id == i + 1);
        CHECK(fe[i].data.at("count") == sparse_chunk().size());
    }

    const auto ie = inc.wait_for(2);
    REQUIRE(ie.size() == 2);
    CHECK(ie[0].data.at("snapshot") == true);
    CHECK(ie[0].data.at("count") == tile.size());
    const auto snap = decode_point_buffer(base64_decode(ie[0].data.at("points").get<std::string>()));
    CHECK(snap.position == tile.position);
    CHECK(ie[1].data.at("snapshot") == false);
    CHECK(ie[1].data.at("source") == done[0].at("chunk_id"));
    CHECK(ie[0].id == 1);
    CHECK(ie[1].id == 2);
    CHECK(ie[1].data.at("version").get<int>() > ie[0].data.at("version").get<int>());

    const auto se = sit.wait_for(2);
    REQUIRE(se.size() == 2);
    std::set<std::array<int, 4>> colors;
    for (const auto& e : se) {
        CHECK(e.data.at("rule") == "by-confidence");
        const auto pts = decode_point_buffer(base64_decode(e.data.at("points").get<std::string>()));
        for (const auto& c : pts.color) colors.insert({c[0], c[1], c[2], c[3]});
    }
    CHECK(colors.size() <= 3);
    CHECK(colors.size() >= 1);

    // Game events reach every subscriber of the cell, whatever its mode.
    const auto active = api.join("active", kLat, kLon).at("session_id").get<std::string>();
    api.discover(gh, active, 2.0, 2.0, 1.0);
    const auto ge = inc.wait_for(3);
    REQUIRE(ge.size() == 3);
    CHECK(ge[2].event == "game");
    CHECK(ge[2].id == 3);

    frames.stop();
    inc.stop();
    sit.stop();
    server.stop();
}

TEST_CASE("invalid stream parameters are rejected") {
    Server server(test_config());
    server.start();
    httplib::Client cli("127.0.0.1", server.port());
    CHECK(cli.Get("/api/v1/stream?mode=movie")->status == 400);
    CHECK(cli.Get("/api/v1/stream?rule=rainbow")->status == 400);
    CHECK(cli.Get("/api/v1/health")->status == 200);
    const auto opt = cli.Options("/api/v1/sessions");
    CHECK(opt->status == 204);
    CHECK(opt->get_header_value("Access-Control-Allow-Origin") == "*");
    server.stop();
}

TEST_CASE("slow subscribers are closed instead of skipping events") {
    auto cfg = test_config();
    cfg.stream_buffer = 2;
    cfg.pipeline.ransac.max_iterations = 50;
    Server server(cfg);
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();
    // Frame events of 60k points (about 1.3 MB each) fill the socket while the reader stalls.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<Eigen::Vector3f> pts(60'000);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    const auto body = bin(reliable(pts));
    testing::SseReader reader(server.port(), "/api/v1/stream?mode=frame&geohash=" + gh, std::chrono::seconds(3));
    REQUIRE(reader.wait_connected());
    const int uploads = 12;
    for (int i = 0; i < uploads; ++i) api.upload(sid, gh, body);
    const auto ev = reader.wait_for(uploads, std::chrono::seconds(30));
    for (std::size_t i = 0; i < ev.size(); ++i) CHECK(ev[i].id == i + 1);  // gap-free until the end
    CHECK(ev.size() < static_cast<std::size_t>(uploads));
    CHECK(reader.ended());
    server.stop();
}

TEST_CASE("state survives a restart byte for byte") {
    const auto dir = testing::temp_dir("server");
    std::string tile_text, tile_bin;
    json game, reviews;
    const std::string gh = cell();
    {
        Server server(test_config(dir));
        server.start();
        ApiClient api("127.0.0.1", server.port());
        const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
        api.await_jobs({api.upload(sid, gh, bin(seed_patch())).at("job_id")});
        api.await_jobs({api.upload(sid, gh, bin(sparse_chunk())).at("job_id")});
        const auto act = api.join("active", kLat, kLon).at("session_id").get<std::string>();
        const auto ids = api.discover(gh, act, 3, 3, 1).at("discovered").get<std::vector<std::uint32_t>>();
        api.color(gh, act, ids);
        tile_bin = api.udt(gh, "binary");
        tile_text = api.udt(gh, "text");
        game = api.game(gh);
        reviews = api.registrations("");
        server.stop();
    }
    Server server(test_config(dir));
    server.start();
    ApiClient api("127.0.0.1", server.port());
    CHECK(api.udt(gh, "binary") == tile_bin);
    CHECK(api.udt(gh, "text") == tile_text);
    CHECK(api.game(gh) == game);
    CHECK(api.registrations("") == reviews);
    // Counters continue instead of reusing identifiers.
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const auto ack = api.upload(sid, gh, bin(sparse_chunk()));
    CHECK(ack.at("chunk_id") == gh + "-3");
    CHECK(ack.at("job_id") == "job-3");
    server.stop();
    std::filesystem::remove_all(dir);
}

TEST_CASE("chunks with a geographic origin are re-expressed in the cell frame") {
    Server server(test_config());
    server.start();
    ApiClient api("127.0.0.1", server.port());
    const auto sid = api.join("passive", kLat, kLon).at("session_id").get<std::string>();
    const std::string gh = cell();
    const auto box = geohash_decode(GeohashCode(gh));
    // Session origin 20 m west and 10 m south of the cell corner.
    const LocalFrame corner({box.lat_lo, box.lon_lo});
    const LatLon origin = corner.to_geo({-20.0, -10.0});
    const auto base = sparse_chunk();
    PointCloud c(AttributeSchema::of({attr::position, attr::confidence, attr::depth, attr::device_position}));
    for (std::size_t i = 0; i < base.size(); ++i) {
        c.position.push_back(base.position[i] + Eigen::Vector3f(20.0f, 10.0f, 0.0f));
        c.device_position.push_back(c.position.back() + Eigen::Vector3f(0, -1, 0));
        c.confidence.push_back(2);
        c.depth.push_back(1.0f);
    }
    CloudMeta m;
    m.geohash = gh;
    m.origin = std::array<double, 2>{origin.lat, origin.lon};
    c.meta = m;
    const auto ack = api.upload(sid, gh, bin(c));
    CHECK(ack.at("geohash") == gh);
    CHECK(ack.at("warnings").empty());
    const auto job = api.await_jobs({ack.at("job_id")})[0];
    api.review(job.at("review_id"), "approve");
    const auto tile = ply::parse(api.udt(gh));
    REQUIRE(tile.size() == c.size());
    const auto want = sparse_chunk();
    for (const auto& p : tile.position) {
        double best = 1e9;
        for (const auto& q : want.position) best = std::min(best, double((p - q).norm()));
        CHECK(best < 0.05);
    }
    server.stop();
}
