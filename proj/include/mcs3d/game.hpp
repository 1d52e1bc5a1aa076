#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mcs3d/point_cloud.hpp"

namespace mcs3d {

inline constexpr int kUncolored = -1;

/// One paintable unit of the AR map. Positions are meters from the cell's south-west corner.
struct ArNode {
    std::uint32_t id = 0;
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    int team = kUncolored;  // index into GameState::teams
    double timestamp = 0.0;

    bool operator==(const ArNode&) const = default;
};

struct NodeEvent {
    std::uint32_t node = 0;
    int old_team = kUncolored;
    int new_team = kUncolored;
    double timestamp = 0.0;
};

/// Territory-coloring state of one geohash cell. Nodes sit on a fixed-pitch grid over the cell
/// and join the map when first sensed; once discovered they are never removed.
class GameState {
public:
    GameState() = default;
    GameState(std::string geohash, double width, double height, double node_spacing = 0.5,
              std::vector<std::string> teams = {"red", "blue"});

    const std::string& geohash() const { return geohash_; }
    double width() const { return width_; }
    double height() const { return height_; }
    double node_spacing() const { return spacing_; }
    std::size_t grid_cols() const { return cols_; }
    std::size_t grid_rows() const { return rows_; }
    const std::vector<std::string>& teams() const { return teams_; }
    int team_index(const std::string& team) const;  // -1 when unknown

    /// Optional cap on discovered nodes; nullopt means unlimited.
    std::optional<std::size_t> max_nodes;

    const std::map<std::uint32_t, ArNode>& nodes() const { return nodes_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t colored_count() const;
    std::size_t score(int team) const { return scores_.at(static_cast<std::size_t>(team)); }
    std::map<std::string, std::size_t> scores() const;

    /// Adds every grid node within `range` of `xy` (cell-local meters). Returns new node ids.
    std::vector<std::uint32_t> discover(const Eigen::Vector2d& xy, double range);
    /// Paints the given discovered nodes for `team`. All-or-nothing: any unknown id or team
    /// throws ParameterError before anything changes.
    std::vector<NodeEvent> color(int team, std::span<const std::uint32_t> ids, double timestamp);
    /// Discovered node ids within `radius` of `xy`.
    std::vector<std::uint32_t> nodes_within(const Eigen::Vector2d& xy, double radius) const;

    /// Recounts per-team ownership; true when the cached scores agree.
    bool scores_consistent() const;

    bool operator==(const GameState&) const = default;

    friend void to_json(nlohmann::json& j, const GameState& g);
    friend void from_json(const nlohmann::json& j, GameState& g);

private:
    Eigen::Vector2d grid_position(std::uint32_t id) const;

    std::string geohash_;
    double width_ = 0.0;
    double height_ = 0.0;
    double spacing_ = 0.5;
    std::size_t cols_ = 0;
    std::size_t rows_ = 0;
    std::vector<std::string> teams_;
    std::vector<std::size_t> scores_;
    std::map<std::uint32_t, ArNode> nodes_;
};

struct Agent {
    std::string team;
    Eigen::Vector2d position = Eigen::Vector2d::Zero();  // cell-local meters
    double paint_radius = 1.0;
    double sensing_range = 4.0;
    double heading = 0.0;  // radians, counter-clockwise from +x
};

class ScanContext;  // scanner.hpp

struct GameStepResult {
    GameState state;
    std::vector<PointCloud> scans;  // one frame per agent when a scan context is supplied
    std::vector<NodeEvent> events;
};

/// Agents sense (discovering nodes in range) and then paint every node within their paint
/// radius, in agent order: uncolored nodes gain the team, opposing nodes flip, own nodes only
/// refresh their timestamp.
GameStepResult active_game_step(GameState state, std::span<const Agent> agents, double timestamp,
                                ScanContext* scan = nullptr);

struct NodeStats {
    std::size_t total = 0;
    std::size_t colored = 0;

    bool operator==(const NodeStats&) const = default;
};

std::vector<NodeStats> ar_node_stats(std::span<const GameState> history);

}  // namespace mcs3d
