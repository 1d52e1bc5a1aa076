#include "mcs3d/game.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcs3d/error.hpp"
#include "mcs3d/scanner.hpp"

namespace mcs3d {

GameState::GameState(std::string geohash, double width, double height, double node_spacing,
                     std::vector<std::string> teams)
    : geohash_(std::move(geohash)),
      width_(width),
      height_(height),
      spacing_(node_spacing),
      teams_(std::move(teams)) {
    if (!(width > 0.0 && height > 0.0 && node_spacing > 0.0)) throw ParameterError("game grid must be positive");
    if (teams_.empty()) throw ParameterError("game needs at least one team");
    cols_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(width / node_spacing)));
    rows_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(height / node_spacing)));
    scores_.assign(teams_.size(), 0);
}

int GameState::team_index(const std::string& team) const {
    const auto it = std::find(teams_.begin(), teams_.end(), team);
    return it == teams_.end() ? -1 : static_cast<int>(it - teams_.begin());
}

Eigen::Vector2d GameState::grid_position(std::uint32_t id) const {
    const auto r = id / cols_, c = id % cols_;
    return {(static_cast<double>(c) + 0.5) * spacing_, (static_cast<double>(r) + 0.5) * spacing_};
}

std::size_t GameState::colored_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const auto& kv) { return kv.second.team != kUncolored; }));
}

std::map<std::string, std::size_t> GameState::scores() const {
    std::map<std::string, std::size_t> out;
    for (std::size_t t = 0; t < teams_.size(); ++t) out[teams_[t]] = scores_[t];
    return out;
}

std::vector<std::uint32_t> GameState::discover(const Eigen::Vector2d& xy, double range) {
    std::vector<std::uint32_t> added;
    if (!(range >= 0.0)) return added;
    const auto c0 = static_cast<long>(std::floor((xy.x() - range) / spacing_ - 0.5));
    const auto c1 = static_cast<long>(std::ceil((xy.x() + range) / spacing_ - 0.5));
    const auto r0 = static_cast<long>(std::floor((xy.y() - range) / spacing_ - 0.5));
    const auto r1 = static_cast<long>(std::ceil((xy.y() + range) / spacing_ - 0.5));
    for (long r = std::max(0L, r0); r <= std::min<long>(static_cast<long>(rows_) - 1, r1); ++r) {
        for (long c = std::max(0L, c0); c <= std::min<long>(static_cast<long>(cols_) - 1, c1); ++c) {
            const auto id = static_cast<std::uint32_t>(static_cast<std::size_t>(r) * cols_ + static_cast<std::size_t>(c));
            const auto pos = grid_position(id);
            if ((pos - xy).norm() > range || nodes_.count(id)) continue;
            if (max_nodes && nodes_.size() >= *max_nodes) return added;
            nodes_.emplace(id, ArNode{id, pos, kUncolored, 0.0});
            added.push_back(id);
        }
    }
    return added;
}

std::vector<std::uint32_t> GameState::nodes_within(const Eigen::Vector2d& xy, double radius) const {
    std::vector<std::uint32_t> out;
    for (const auto& [id, node] : nodes_)
        if ((node.position - xy).norm() <= radius) out.push_back(id);
    return out;
}

std::vector<NodeEvent> GameState::color(int team, std::span<const std::uint32_t> ids, double timestamp) {
    if (team < 0 || static_cast<std::size_t>(team) >= teams_.size()) throw ParameterError("unknown team");
    for (auto id : ids)
        if (!nodes_.count(id)) throw ParameterError("unknown node id " + std::to_string(id));
    std::vector<NodeEvent> events;
    events.reserve(ids.size());
    for (auto id : ids) {
        auto& node = nodes_.at(id);
        const int old = node.team;
        if (old != kUncolored) --scores_[static_cast<std::size_t>(old)];
        node.team = team;
        node.timestamp = timestamp;
        ++scores_[static_cast<std::size_t>(team)];
        events.push_back({id, old, team, timestamp});
    }
    return events;
}

bool GameState::scores_consistent() const {
    std::vector<std::size_t> recount(teams_.size(), 0);
    for (const auto& [id, node] : nodes_)
        if (node.team != kUncolored) ++recount[static_cast<std::size_t>(node.team)];
    return recount == scores_;
}

void to_json(nlohmann::json& j, const GameState& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [id, n] : g.nodes_) {
        nodes.push_back({{"id", id},
                         {"x", n.position.x()},
                         {"y", n.position.y()},
                         {"team", n.team == kUncolored ? nlohmann::json(nullptr) : nlohmann::json(g.teams_[n.team])},
                         {"timestamp", n.timestamp}});
    }
    j = {{"geohash", g.geohash_},
         {"width", g.width_},
         {"height", g.height_},
         {"node_spacing", g.spacing_},
         {"teams", g.teams_},
         {"scores", g.scores()},
         {"node_count", g.node_count()},
         {"colored_count", g.colored_count()},
         {"max_nodes", g.max_nodes ? nlohmann::json(*g.max_nodes) : nlohmann::json(nullptr)},
         {"nodes", nodes}};
}

void from_json(const nlohmann::json& j, GameState& g) {
    g = GameState(j.at("geohash").get<std::string>(), j.at("width").get<double>(), j.at("height").get<double>(),
                  j.at("node_spacing").get<double>(), j.at("teams").get<std::vector<std::string>>());
    if (j.contains("max_nodes") && !j.at("max_nodes").is_null()) g.max_nodes = j.at("max_nodes").get<std::size_t>();
    for (const auto& n : j.at("nodes")) {
        ArNode node;
        node.id = n.at("id").get<std::uint32_t>();
        node.position = g.grid_position(node.id);
        node.timestamp = n.at("timestamp").get<double>();
        node.team = n.at("team").is_null() ? kUncolored : g.team_index(n.at("team").get<std::string>());
        if (n.at("team").is_string() && node.team < 0) throw ParameterError("game document names an unknown team");
        if (node.team != kUncolored) ++g.scores_[static_cast<std::size_t>(node.team)];
        g.nodes_.emplace(node.id, node);
    }
}

GameStepResult active_game_step(GameState state, std::span<const Agent> agents, double timestamp, ScanContext* scan) {
    GameStepResult out;
    for (const auto& a : agents) state.discover(a.position, std::max(a.sensing_range, a.paint_radius));
    for (const auto& a : agents) {
        const int team = state.team_index(a.team);
        if (team < 0) throw ParameterError("agent team '" + a.team + "' not in game");
        const auto ids = state.nodes_within(a.position, a.paint_radius);
        auto ev = state.color(team, ids, timestamp);
        out.events.insert(out.events.end(), ev.begin(), ev.end());
        if (scan != nullptr) {
            Pose p;
            const Eigen::Vector2d xy = a.position + scan->cell_offset;
            p.position = {xy.x(), xy.y(), scan->sensor().mount_height};
            p.heading = a.heading;
            p.pitch = scan->sensor().pitch_deg * std::numbers::pi / 180.0;
            p.time = timestamp;
            out.scans.push_back(scan->frame(p));
        }
    }
    out.state = std::move(state);
    return out;
}

std::vector<NodeStats> ar_node_stats(std::span<const GameState> history) {
    if (history.empty()) throw ParameterError("node statistics need a nonempty history");
    std::vector<NodeStats> out;
    out.reserve(history.size());
    for (const auto& g : history) out.push_back({g.node_count(), g.colored_count()});
    return out;
}

}  // namespace mcs3d
