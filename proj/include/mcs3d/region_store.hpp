#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcs3d/game.hpp"
#include "mcs3d/geohash.hpp"
#include "mcs3d/point_cloud.hpp"
#include "mcs3d/registration.hpp"

namespace mcs3d {

enum class ChunkStatus : std::uint8_t { Queued, Integrated, PendingReview, Skipped, Approved, Rejected };

std::string_view chunk_status_name(ChunkStatus s);
ChunkStatus parse_chunk_status(std::string_view s);

struct ChunkRef {
    std::string id;
    std::string session_id;
    std::uint64_t sequence = 0;
    double timestamp = 0.0;
    std::size_t raw_points = 0;
    std::size_t filtered_points = 0;
    ChunkStatus status = ChunkStatus::Queued;
    std::string note;
};

void to_json(nlohmann::json& j, const ChunkRef& c);
void from_json(const nlohmann::json& j, ChunkRef& c);

/// Attributes kept in a UDT tile. Device positions survive so normals can still be oriented
/// toward where the surface was seen from.
AttributeSchema tile_schema();
/// Projects onto tile_schema(); missing color becomes light gray, missing confidence 1, missing
/// device position the point lifted 2 m.
PointCloud to_tile_schema(const PointCloud& cloud);

/// Everything stored for one geohash cell. The tile and game live in cell-local meters: x east,
/// y north from the cell's south-west corner.
struct RegionShard {
    explicit RegionShard(GeohashCode code);

    GeohashCode code;
    GeoBox box;
    std::uint64_t version = 0;
    std::vector<ChunkRef> chunks;
    PointCloud tile;
    GameState game;

    /// Single writer, concurrent readers.
    mutable std::shared_mutex mutex;

    LocalFrame frame() const { return LocalFrame({box.lat_lo, box.lon_lo}); }
    ChunkRef* find_chunk(const std::string& id);
};

/// Geohash-keyed shards, optionally persisted one directory per cell:
///   <root>/<geohash>/shard.json   version and chunk list
///   <root>/<geohash>/tile.ply     merged tile (binary PLY)
///   <root>/<geohash>/game.json    game document
///   <root>/<geohash>/chunks/<id>.ply  uploads, byte-for-byte
class RegionStore {
public:
    /// An empty root keeps everything in memory.
    explicit RegionStore(std::filesystem::path root = {}, int precision = kDefaultGeohashPrecision);

    int precision() const { return precision_; }
    const std::filesystem::path& root() const { return root_; }
    bool persistent() const { return !root_.empty(); }

    /// The shard whose cell contains p, created on first use.
    std::shared_ptr<RegionShard> shard_for(LatLon p);
    /// nullptr when absent and `create` is false.
    std::shared_ptr<RegionShard> shard(const GeohashCode& code, bool create = true);
    std::vector<GeohashCode> codes() const;
    std::size_t size() const;

    /// Writes shard.json, tile.ply and game.json atomically (temp file + rename). The caller holds
    /// the shard's lock.
    void save(const RegionShard& shard) const;
    /// Rewrites only game.json.
    void save_game(const RegionShard& shard) const;
    void save_chunk(const RegionShard& shard, const std::string& id, std::string_view bytes) const;
    std::string load_chunk(const RegionShard& shard, const std::string& id) const;

    /// Rebuilds every shard found under root. Replaces in-memory state.
    void load();

private:
    std::filesystem::path dir_of(const GeohashCode& code) const { return root_ / code.str(); }
    std::shared_ptr<RegionShard> make_shard(const GeohashCode& code) const;

    std::filesystem::path root_;
    int precision_;
    mutable std::mutex mutex_;
    std::map<GeohashCode, std::shared_ptr<RegionShard>> shards_;
};

/// Writes `bytes` to `path` through a temporary sibling and a rename.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

struct IntegrationOutcome {
    RegistrationResult result;
    bool mutated = false;
    std::string note;
    PointCloud prepared;  // preprocessed partial in its own frame (empty on early failure)
};

/// Registers a reliability-filtered partial (already expressed in the shard frame) against the
/// shard's tile and merges it on success. An empty tile is seeded with the preprocessed partial.
/// Failures leave tile and version untouched and report PendingReview. Caller holds the lock.
IntegrationOutcome integrate(const PointCloud& partial, RegionShard& shard, const PipelineConfig& cfg);

/// Appends T(cloud) to the tile, re-downsamples at `voxel`, bumps the version.
void merge_into_tile(RegionShard& shard, const PointCloud& cloud, const RigidTransform& T, double voxel);

}  // namespace mcs3d
