#include "mcs3d/region_store.hpp"

#include <chrono>
#include <fstream>

#include "mcs3d/cloud_ops.hpp"
#include "mcs3d/error.hpp"
#include "mcs3d/ply.hpp"

namespace mcs3d {

namespace fs = std::filesystem;

std::string_view chunk_status_name(ChunkStatus s) {
    switch (s) {
        case ChunkStatus::Queued: return "queued";
        case ChunkStatus::Integrated: return "integrated";
        case ChunkStatus::PendingReview: return "pending_review";
        case ChunkStatus::Skipped: return "skipped";
        case ChunkStatus::Approved: return "approved";
        case ChunkStatus::Rejected: return "rejected";
    }
    return "?";
}

ChunkStatus parse_chunk_status(std::string_view s) {
    for (auto c : {ChunkStatus::Queued, ChunkStatus::Integrated, ChunkStatus::PendingReview, ChunkStatus::Skipped,
                   ChunkStatus::Approved, ChunkStatus::Rejected})
        if (chunk_status_name(c) == s) return c;
    throw ParameterError("unknown chunk status: " + std::string(s));
}

void to_json(nlohmann::json& j, const ChunkRef& c) {
    j = {{"id", c.id},
         {"session_id", c.session_id},
         {"sequence", c.sequence},
         {"timestamp", c.timestamp},
         {"raw_points", c.raw_points},
         {"filtered_points", c.filtered_points},
         {"status", chunk_status_name(c.status)},
         {"note", c.note}};
}

void from_json(const nlohmann::json& j, ChunkRef& c) {
    c.id = j.at("id").get<std::string>();
    c.session_id = j.at("session_id").get<std::string>();
    c.sequence = j.at("sequence").get<std::uint64_t>();
    c.timestamp = j.at("timestamp").get<double>();
    c.raw_points = j.at("raw_points").get<std::size_t>();
    c.filtered_points = j.at("filtered_points").get<std::size_t>();
    c.status = parse_chunk_status(j.at("status").get<std::string>());
    c.note = j.value("note", "");
}

AttributeSchema tile_schema() {
    return AttributeSchema::of({attr::position, attr::color, attr::confidence, attr::device_position});
}

PointCloud to_tile_schema(const PointCloud& cloud) {
    PointCloud out(tile_schema(), cloud.frame);
    out.meta = cloud.meta;
    out.position = cloud.position;
    const auto n = cloud.size();
    out.color = cloud.has(attr::color) ? cloud.color : std::vector<Rgba>(n, Rgba{200, 200, 200, 255});
    out.confidence = cloud.has(attr::confidence) ? cloud.confidence : std::vector<std::uint32_t>(n, 1);
    if (cloud.has(attr::device_position)) {
        out.device_position = cloud.device_position;
    } else {
        out.device_position.reserve(n);
        for (const auto& p : cloud.position) out.device_position.push_back(p + Eigen::Vector3f(0.0f, 0.0f, 2.0f));
    }
    return out;
}

RegionShard::RegionShard(GeohashCode c) : code(std::move(c)), box(geohash_decode(code)), tile(tile_schema(), Frame::UdtGlobal) {
    const auto dims = cell_dimensions(code);
    game = GameState(code.str(), dims.width, dims.height);
    CloudMeta m;
    m.geohash = code.str();
    tile.meta = m;
}

ChunkRef* RegionShard::find_chunk(const std::string& id) {
    for (auto& c : chunks)
        if (c.id == id) return &c;
    return nullptr;
}

void atomic_write(const fs::path& path, std::string_view bytes) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

RegionStore::RegionStore(fs::path root, int precision) : root_(std::move(root)), precision_(precision) {
    if (precision < 1 || precision > 12) throw ParameterError("geohash precision must be 1-12");
    if (persistent()) fs::create_directories(root_);
}

std::shared_ptr<RegionShard> RegionStore::make_shard(const GeohashCode& code) const {
    return std::make_shared<RegionShard>(code);
}

std::shared_ptr<RegionShard> RegionStore::shard_for(LatLon p) { return shard(geohash_encode(p, precision_), true); }

std::shared_ptr<RegionShard> RegionStore::shard(const GeohashCode& code, bool create) {
    std::lock_guard lock(mutex_);
    const auto it = shards_.find(code);
    if (it != shards_.end()) return it->second;
    if (!create) return nullptr;
    auto s = make_shard(code);
    shards_.emplace(code, s);
    return s;
}

std::vector<GeohashCode> RegionStore::codes() const {
    std::lock_guard lock(mutex_);
    std::vector<GeohashCode> out;
    for (const auto& [k, v] : shards_) out.push_back(k);
    return out;
}

std::size_t RegionStore::size() const {
    std::lock_guard lock(mutex_);
    return shards_.size();
}

void RegionStore::save(const RegionShard& shard) const {
    if (!persistent()) return;
    const auto dir = dir_of(shard.code);
    atomic_write(dir / "tile.ply", ply::write(shard.tile, ply::Encoding::Binary));
    atomic_write(dir / "game.json", nlohmann::json(shard.game).dump(1));
    const nlohmann::json doc = {{"geohash", shard.code.str()}, {"version", shard.version}, {"chunks", shard.chunks}};
    // Written last: a shard directory without shard.json is ignored on load.
    atomic_write(dir / "shard.json", doc.dump(1));
}

void RegionStore::save_game(const RegionShard& shard) const {
    if (!persistent()) return;
    atomic_write(dir_of(shard.code) / "game.json", nlohmann::json(shard.game).dump(1));
}

void RegionStore::save_chunk(const RegionShard& shard, const std::string& id, std::string_view bytes) const {
    if (!persistent()) return;
    atomic_write(dir_of(shard.code) / "chunks" / (id + ".ply"), bytes);
}

std::string RegionStore::load_chunk(const RegionShard& shard, const std::string& id) const {
    if (!persistent()) throw Error("chunk " + id + " unavailable: store is not persistent");
    return ply::read_file((dir_of(shard.code) / "chunks" / (id + ".ply")).string());
}

void RegionStore::load() {
    std::map<GeohashCode, std::shared_ptr<RegionShard>> loaded;
    if (persistent() && fs::exists(root_)) {
        for (const auto& entry : fs::directory_iterator(root_)) {
            if (!entry.is_directory() || !fs::exists(entry.path() / "shard.json")) continue;
            const auto doc = nlohmann::json::parse(ply::read_file((entry.path() / "shard.json").string()));
            auto s = make_shard(GeohashCode(doc.at("geohash").get<std::string>()));
            s->version = doc.at("version").get<std::uint64_t>();
            s->chunks = doc.at("chunks").get<std::vector<ChunkRef>>();
            if (fs::exists(entry.path() / "tile.ply")) s->tile = ply::parse(ply::read_file((entry.path() / "tile.ply").string()));
            if (fs::exists(entry.path() / "game.json"))
                s->game = nlohmann::json::parse(ply::read_file((entry.path() / "game.json").string())).get<GameState>();
            loaded.emplace(s->code, std::move(s));
        }
    }
    std::lock_guard lock(mutex_);
    shards_ = std::move(loaded);
}

void merge_into_tile(RegionShard& shard, const PointCloud& cloud, const RigidTransform& T, double voxel) {
    PointCloud moved = transform_cloud(to_tile_schema(cloud), T);
    moved.frame = Frame::UdtGlobal;
    moved.meta = shard.tile.meta;
    const std::vector<PointCloud> parts{shard.tile, std::move(moved)};
    PointCloud merged = voxel_downsample(merge(parts), voxel);
    merged.meta = shard.tile.meta;
    shard.tile = std::move(merged);
    ++shard.version;
}

IntegrationOutcome integrate(const PointCloud& partial, RegionShard& shard, const PipelineConfig& cfg) {
    using Clock = std::chrono::steady_clock;
    auto since = [](Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); };
    IntegrationOutcome out;
    out.result.status = RegistrationStatus::PendingReview;
    const auto started = Clock::now();

    StageTimings timings;
    Preprocessed pre;
    try {
        pre = preprocess(to_tile_schema(partial), cfg.voxel, cfg.sor, cfg.apply_sor);
    } catch (const Error& e) {
        out.note = e.what();
        out.result.total_seconds = since(started);
        return out;
    }
    timings.preprocess = since(started);
    out.prepared = pre.cloud;

    if (shard.tile.empty()) {
        PointCloud seed = std::move(pre.cloud);
        seed.frame = Frame::UdtGlobal;
        seed.meta = shard.tile.meta;
        shard.tile = std::move(seed);
        ++shard.version;
        out.mutated = true;
        out.note = "seeded empty tile";
        out.result.status = RegistrationStatus::Success;
        out.result.fitness = 1.0;
        out.result.inlier_rmse = 0.0;
        out.result.timings = timings;
        out.result.total_seconds = since(started);
        return out;
    }

    RegistrationResult r;
    try {
        const auto src = prepare(out.prepared, cfg, &timings, true);
        const auto dst = prepare(shard.tile, cfg, &timings, true);
        r = register_prepared(src, dst, cfg);
    } catch (const Error& e) {
        out.note = e.what();
        out.result.timings = timings;
        out.result.total_seconds = since(started);
        return out;
    }
    r.timings.preprocess += timings.preprocess;
    r.timings.features += timings.features;
    if (r.status == RegistrationStatus::Success) {
        const auto t0 = Clock::now();
        merge_into_tile(shard, out.prepared, r.transform, cfg.voxel);
        r.timings.icp += since(t0);  // merge bookkeeping is charged to the last stage
        out.mutated = true;
    } else {
        out.note = std::string(status_name(r.status));
        r.status = RegistrationStatus::PendingReview;
    }
    r.total_seconds = since(started);
    out.result = std::move(r);
    return out;
}

}  // namespace mcs3d
