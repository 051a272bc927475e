#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "comal/types.hpp"

namespace comal {

using EdgeId = std::string;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Planar centreline of an edge: a straight segment (curvature 0) or a
/// circular arc. Positive curvature turns left.
struct EdgeGeometry {
  Point2 start{};
  double heading = 0.0;    ///< radians, direction of travel at the start
  double curvature = 0.0;  ///< 1/m
};

struct Edge {
  EdgeId id;
  double length = 0.0;
  double speed_limit = 0.0;
  EdgeGeometry geometry{};
};

struct Route {
  std::string id;
  std::vector<EdgeId> edge_ids;
  bool cyclic = false;
};

struct LanePosition {
  EdgeId edge_id;
  double offset = 0.0;
};

struct RouteLocation {
  RouteIndex route = 0;
  double arc = 0.0;
};

/// Route locations that are the same physical place. Each location is one
/// approach to the conflict. `merging` is set when the approaches continue
/// on a shared edge (a junction) rather than crossing.
struct ConflictPoint {
  std::string id;
  std::vector<RouteLocation> locations;
  bool merging = false;
};

enum class Topology { ring, figure_eight, merge };

std::string_view to_string(Topology topology) noexcept;
Topology topology_from_string(std::string_view name);

class NetworkSpec {
 public:
  /// Validates edges, route connectivity and conflict point ranges.
  NetworkSpec(Topology topology, std::vector<Edge> edges, std::vector<Route> routes,
              std::vector<ConflictPoint> conflict_points);

  Topology topology() const noexcept { return topology_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<Route>& routes() const noexcept { return routes_; }
  const std::vector<ConflictPoint>& conflict_points() const noexcept { return conflicts_; }

  const Edge& edge(std::string_view id) const;
  const Route& route(RouteIndex index) const;
  double route_length(RouteIndex index) const;
  bool is_cyclic(RouteIndex index) const { return route(index).cyclic; }

  /// Highest speed limit over all edges.
  double speed_limit() const noexcept;

  /// Arc in [0, length) for cyclic routes (wrapped), [0, length) otherwise.
  LanePosition position_at(RouteIndex index, double arc) const;

  /// Arc of `pos` along the route, or nullopt when the edge is not on it.
  std::optional<double> arc_of(RouteIndex index, const LanePosition& pos) const;

  /// Forward distance along the route from `from` to `to`. Cyclic routes
  /// wrap into [0, length); on open routes a target behind `from` yields
  /// nullopt. Throws InvalidArgument when either position is off the route.
  std::optional<double> arc_distance(RouteIndex index, const LanePosition& from,
                                     const LanePosition& to) const;

  /// Same as arc_distance but with both ends already expressed as arcs.
  std::optional<double> arc_distance(RouteIndex index, double from_arc, double to_arc) const;

  /// Planar point of the centreline at `arc` along the route.
  Point2 point_at(RouteIndex index, double arc) const;

 private:
  struct RouteCache {
    std::vector<std::size_t> edge_index;  // into edges_
    std::vector<double> start_arc;        // cumulative, same order
    std::unordered_map<EdgeId, std::size_t> slot;
    double length = 0.0;
  };

  Topology topology_;
  std::vector<Edge> edges_;
  std::vector<Route> routes_;
  std::vector<ConflictPoint> conflicts_;
  std::unordered_map<EdgeId, std::size_t> edge_lookup_;
  std::vector<RouteCache> cache_;
};

NetworkSpec build_ring(double length, double speed_limit);

/// Two circles of equal radius, each traversed over 270 degrees, joined by
/// two straight chords of length 2r that cross at the origin. Total route
/// length is 3*pi*r + 4r.
NetworkSpec build_figure_eight(double loop_radius, double speed_limit);

/// Highway source -> junction -> sink and ramp source -> junction -> sink.
/// Both routes share the downstream edge; the junction is the single
/// conflict point. `junction_at` is measured along the highway.
NetworkSpec build_merge(double highway_length, double ramp_length, double speed_limit,
                        double junction_at = 400.0);

struct Leader {
  std::size_t index = 0;  ///< index into the vehicle span
  double gap = 0.0;       ///< bumper-to-bumper [m]
};

/// Nearest vehicle physically ahead of `vehicles[ego]` along its route,
/// including vehicles of other routes occupying shared edges. On cyclic
/// routes a lone vehicle leads itself. Brute force over all vehicles.
std::optional<Leader> leader_of(const NetworkSpec& network, std::span<const VehicleState> vehicles,
                                std::size_t ego);

/// Sorted per-route index answering leader queries for a whole snapshot in
/// O(n log n). Agrees with leader_of.
class LeaderIndex {
 public:
  LeaderIndex(const NetworkSpec& network, std::span<const VehicleState> vehicles);
  std::optional<Leader> leader(std::size_t ego) const;

 private:
  struct Entry {
    double arc;
    std::size_t index;
  };
  const NetworkSpec* network_;
  std::span<const VehicleState> vehicles_;
  std::vector<std::vector<Entry>> by_route_;
};

nlohmann::json to_json(const NetworkSpec& network);

}  // namespace comal
