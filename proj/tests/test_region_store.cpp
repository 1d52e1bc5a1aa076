#include <doctest.h>

#include <filesystem>

#include "mcs3d/error.hpp"
#include "mcs3d/ply.hpp"
#include "mcs3d/region_store.hpp"
#include "mcs3d/scene.hpp"
#include "support.hpp"

using namespace mcs3d;

namespace {

PointCloud facade_patch(double x0, double x1) {
    const auto scene = generate_scene(42, {123, 152});
    return sample_scene(scene, 0.15, 2, std::array<Eigen::Vector2d, 2>{Eigen::Vector2d(x0, 20), Eigen::Vector2d(x1, 45)});
}

}  // namespace

TEST_CASE("chunk status names round trip") {
    for (auto s : {ChunkStatus::Queued, ChunkStatus::Integrated, ChunkStatus::PendingReview, ChunkStatus::Skipped,
                   ChunkStatus::Approved, ChunkStatus::Rejected})
        CHECK(parse_chunk_status(chunk_status_name(s)) == s);
    CHECK_THROWS_AS(parse_chunk_status("bogus"), ParameterError);
}

TEST_CASE("tile schema projection fills defaults") {
    PointCloud c;
    c.resize(2);
    c.position[1] = {1, 2, 3};
    const auto t = to_tile_schema(c);
    CHECK(t.schema == tile_schema());
    CHECK(t.confidence[1] == 1);
    CHECK(t.color[0] == Rgba{200, 200, 200, 255});
    CHECK(t.device_position[1] == Eigen::Vector3f(1, 2, 5));
}

TEST_CASE("shards are keyed by the containing cell") {
    RegionStore store({}, 8);
    CHECK_FALSE(store.persistent());
    const auto a = store.shard_for({35.9, 139.6});
    CHECK(a->code == geohash_encode(35.9, 139.6, 8));
    CHECK(store.shard_for({35.9, 139.6}) == a);
    CHECK(store.shard(GeohashCode("xn76"), false) == nullptr);
    CHECK(store.size() == 1);
    CHECK(a->game.geohash() == a->code.str());
    CHECK_THROWS_AS(RegionStore({}, 13), ParameterError);
}

TEST_CASE("integration seeds, merges and leaves failures untouched") {
    RegionStore store;
    auto shard = store.shard_for({35.9, 139.6});
    PipelineConfig cfg;
    cfg.voxel = 0.3;

    const auto first = integrate(facade_patch(20, 45), *shard, cfg);
    CHECK(first.mutated);
    CHECK(first.note == "seeded empty tile");
    CHECK(shard->version == 1);
    const auto seeded = shard->tile.size();
    CHECK(seeded > 0);

    // Overlapping patch, slightly displaced: registration must absorb the offset.
    auto second_cloud = transform_cloud(facade_patch(30, 55), RigidTransform::about_z(0.02, {0.3, -0.2, 0}));
    const auto second = integrate(second_cloud, *shard, cfg);
    CHECK(second.result.status == RegistrationStatus::Success);
    CHECK(second.mutated);
    CHECK(shard->version == 2);
    CHECK(shard->tile.size() > seeded);
    CHECK(std::abs(second.result.timings.sum() - second.result.total_seconds) <= 0.01 * second.result.total_seconds);

    const auto before = ply::write(shard->tile, ply::Encoding::Binary);
    PointCloud sparse;
    sparse.resize(3);
    const auto bad = integrate(sparse, *shard, cfg);
    CHECK_FALSE(bad.mutated);
    CHECK(bad.result.status == RegistrationStatus::PendingReview);
    CHECK_FALSE(bad.note.empty());
    CHECK(shard->version == 2);
    CHECK(ply::write(shard->tile, ply::Encoding::Binary) == before);
}

TEST_CASE("store persists and reloads byte-identical tiles") {
    const auto dir = testing::temp_dir("store");
    std::string tile_bytes;
    {
        RegionStore store(dir, 8);
        auto s = store.shard_for({35.9, 139.6});
        std::unique_lock lock(s->mutex);
        PipelineConfig cfg;
        cfg.voxel = 0.3;
        integrate(facade_patch(20, 40), *s, cfg);
        s->chunks.push_back({"c-1", "sess", 0, 1.5, 100, 90, ChunkStatus::Integrated, ""});
        s->game.discover({3, 3}, 2);
        store.save(*s);
        store.save_chunk(*s, "c-1", "raw-bytes");
        tile_bytes = ply::write(s->tile, ply::Encoding::Binary);
    }
    RegionStore again(dir, 8);
    again.load();
    REQUIRE(again.size() == 1);
    auto s = again.shard(geohash_encode(35.9, 139.6, 8), false);
    REQUIRE(s);
    CHECK(s->version == 1);
    REQUIRE(s->chunks.size() == 1);
    CHECK(s->chunks[0].status == ChunkStatus::Integrated);
    CHECK(s->chunks[0].filtered_points == 90);
    CHECK(ply::write(s->tile, ply::Encoding::Binary) == tile_bytes);
    CHECK(s->game.node_count() > 0);
    CHECK(again.load_chunk(*s, "c-1") == "raw-bytes");
    std::filesystem::remove_all(dir);
}

TEST_CASE("atomic write replaces the file") {
    const auto dir = testing::temp_dir("atomic");
    atomic_write(dir / "f.txt", "one");
    atomic_write(dir / "f.txt", "two");
    CHECK(ply::read_file(dir / "f.txt") == "two");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++entries;
    CHECK(entries == 1);
    std::filesystem::remove_all(dir);
}
