#include "comal/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "comal/errors.hpp"

namespace comal {

namespace {

constexpr double kJoinTolerance = 1e-6;

double wrap(double arc, double length) {
  double r = std::fmod(arc, length);
  if (r < 0.0) r += length;
  if (r >= length) r = 0.0;
  return r;
}

Point2 edge_point(const Edge& e, double s) {
  const auto& g = e.geometry;
  if (g.curvature == 0.0) {
    return {g.start.x + s * std::cos(g.heading), g.start.y + s * std::sin(g.heading)};
  }
  const double radius = 1.0 / g.curvature;
  const double cx = g.start.x - radius * std::sin(g.heading);
  const double cy = g.start.y + radius * std::cos(g.heading);
  const double phi = g.heading + g.curvature * s;
  return {cx + radius * std::sin(phi), cy - radius * std::cos(phi)};
}

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

std::string_view to_string(Topology topology) noexcept {
  switch (topology) {
    case Topology::ring:
      return "ring";
    case Topology::figure_eight:
      return "figure_eight";
    case Topology::merge:
      return "merge";
  }
  return "ring";
}

Topology topology_from_string(std::string_view name) {
  if (name == "ring") return Topology::ring;
  if (name == "figure_eight") return Topology::figure_eight;
  if (name == "merge") return Topology::merge;
  throw InvalidArgument(fmt::format("unknown topology '{}'", name));
}

NetworkSpec::NetworkSpec(Topology topology, std::vector<Edge> edges, std::vector<Route> routes,
                         std::vector<ConflictPoint> conflict_points)
    : topology_(topology),
      edges_(std::move(edges)),
      routes_(std::move(routes)),
      conflicts_(std::move(conflict_points)) {
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if (!(e.length > 0.0)) throw InvalidArgument(fmt::format("edge '{}' has non-positive length", e.id));
    if (!(e.speed_limit > 0.0))
      throw InvalidArgument(fmt::format("edge '{}' has non-positive speed limit", e.id));
    if (!edge_lookup_.emplace(e.id, i).second)
      throw InvalidArgument(fmt::format("duplicate edge id '{}'", e.id));
  }
  if (routes_.empty()) throw InvalidArgument("network needs at least one route");

  cache_.reserve(routes_.size());
  for (const auto& r : routes_) {
    if (r.edge_ids.empty()) throw InvalidArgument(fmt::format("route '{}' is empty", r.id));
    RouteCache c;
    for (const auto& id : r.edge_ids) {
      auto it = edge_lookup_.find(id);
      if (it == edge_lookup_.end())
        throw InvalidArgument(fmt::format("route '{}' references unknown edge '{}'", r.id, id));
      if (!c.slot.emplace(id, c.edge_index.size()).second)
        throw InvalidArgument(fmt::format("route '{}' visits edge '{}' twice", r.id, id));
      c.edge_index.push_back(it->second);
      c.start_arc.push_back(c.length);
      c.length += edges_[it->second].length;
    }
    const std::size_t n = c.edge_index.size();
    const std::size_t joins = r.cyclic ? n : n - 1;
    for (std::size_t k = 0; k < joins; ++k) {
      const Edge& a = edges_[c.edge_index[k]];
      const Edge& b = edges_[c.edge_index[(k + 1) % n]];
      if (distance(edge_point(a, a.length), b.geometry.start) > kJoinTolerance * std::max(1.0, a.length))
        throw InvalidArgument(
            fmt::format("route '{}': edge '{}' does not connect to '{}'", r.id, a.id, b.id));
    }
    cache_.push_back(std::move(c));
  }

  for (const auto& cp : conflicts_) {
    if (cp.locations.size() < 2)
      throw InvalidArgument(fmt::format("conflict point '{}' needs two approaches", cp.id));
    for (const auto& loc : cp.locations) {
      if (loc.route >= routes_.size())
        throw InvalidArgument(fmt::format("conflict point '{}' references missing route", cp.id));
      if (!(loc.arc >= 0.0 && loc.arc < cache_[loc.route].length))
        throw InvalidArgument(fmt::format("conflict point '{}' arc {} out of range", cp.id, loc.arc));
    }
  }
}

const Edge& NetworkSpec::edge(std::string_view id) const {
  auto it = edge_lookup_.find(std::string(id));
  if (it == edge_lookup_.end()) throw InvalidArgument(fmt::format("unknown edge '{}'", id));
  return edges_[it->second];
}

const Route& NetworkSpec::route(RouteIndex index) const {
  if (index >= routes_.size()) throw InvalidArgument(fmt::format("route index {} out of range", index));
  return routes_[index];
}

double NetworkSpec::route_length(RouteIndex index) const {
  route(index);
  return cache_[index].length;
}

double NetworkSpec::speed_limit() const noexcept {
  double v = 0.0;
  for (const auto& e : edges_) v = std::max(v, e.speed_limit);
  return v;
}

LanePosition NetworkSpec::position_at(RouteIndex index, double arc) const {
  const auto& r = route(index);
  const auto& c = cache_[index];
  if (r.cyclic) {
    arc = wrap(arc, c.length);
  } else if (!(arc >= 0.0 && arc < c.length)) {
    throw InvalidArgument(fmt::format("arc {} outside open route '{}'", arc, r.id));
  }
  auto it = std::upper_bound(c.start_arc.begin(), c.start_arc.end(), arc);
  const auto k = static_cast<std::size_t>(std::distance(c.start_arc.begin(), it)) - 1;
  const Edge& e = edges_[c.edge_index[k]];
  return {e.id, std::min(arc - c.start_arc[k], std::nextafter(e.length, 0.0))};
}

std::optional<double> NetworkSpec::arc_of(RouteIndex index, const LanePosition& pos) const {
  route(index);
  const auto& c = cache_[index];
  auto it = c.slot.find(pos.edge_id);
  if (it == c.slot.end()) return std::nullopt;
  return c.start_arc[it->second] + pos.offset;
}

std::optional<double> NetworkSpec::arc_distance(RouteIndex index, double from_arc, double to_arc) const {
  const auto& c = cache_[index];
  if (routes_[index].cyclic) return wrap(to_arc - from_arc, c.length);
  if (to_arc < from_arc) return std::nullopt;
  return to_arc - from_arc;
}

std::optional<double> NetworkSpec::arc_distance(RouteIndex index, const LanePosition& from,
                                                const LanePosition& to) const {
  const auto& r = route(index);
  for (const auto* p : {&from, &to}) {
    const Edge& e = edge(p->edge_id);
    if (!(p->offset >= 0.0 && p->offset < e.length))
      throw InvalidArgument(fmt::format("offset {} outside edge '{}'", p->offset, e.id));
  }
  auto a = arc_of(index, from);
  auto b = arc_of(index, to);
  if (!a || !b) throw InvalidArgument(fmt::format("position not on route '{}'", r.id));
  return arc_distance(index, *a, *b);
}

Point2 NetworkSpec::point_at(RouteIndex index, double arc) const {
  const auto pos = position_at(index, arc);
  return edge_point(edge(pos.edge_id), pos.offset);
}

NetworkSpec build_ring(double length, double speed_limit) {
  if (!(length > 0.0)) throw InvalidArgument("ring length must be positive");
  const double radius = length / (2.0 * std::numbers::pi);
  Edge e{"ring", length, speed_limit, {{radius, 0.0}, std::numbers::pi / 2.0, 1.0 / radius}};
  Route r{"ring", {"ring"}, true};
  return NetworkSpec(Topology::ring, {e}, {r}, {});
}

NetworkSpec build_figure_eight(double loop_radius, double speed_limit) {
  if (!(loop_radius > 0.0)) throw InvalidArgument("figure-eight loop radius must be positive");
  const double r = loop_radius;
  const double h = r / std::numbers::sqrt2;
  const double chord = 2.0 * r;
  const double loop = 1.5 * std::numbers::pi * r;
  const double q = std::numbers::pi / 4.0;
  std::vector<Edge> edges{
      {"chord_a", chord, speed_limit, {{-h, -h}, q, 0.0}},
      {"loop_a", loop, speed_limit, {{h, h}, q, 1.0 / r}},
      {"chord_b", chord, speed_limit, {{-h, h}, -q, 0.0}},
      {"loop_b", loop, speed_limit, {{h, -h}, -q, -1.0 / r}},
  };
  Route route{"figure_eight", {"chord_a", "loop_a", "chord_b", "loop_b"}, true};
  ConflictPoint crossing{"crossing", {{0, r}, {0, chord + loop + r}}, false};
  return NetworkSpec(Topology::figure_eight, std::move(edges), {route}, {crossing});
}

NetworkSpec build_merge(double highway_length, double ramp_length, double speed_limit,
                        double junction_at) {
  if (!(highway_length > 0.0)) throw InvalidArgument("highway length must be positive");
  if (!(ramp_length > 0.0)) throw InvalidArgument("ramp length must be positive");
  if (!(junction_at > 0.0 && junction_at < highway_length))
    throw InvalidArgument("junction must lie strictly inside the highway");
  const double angle = std::numbers::pi / 6.0;
  std::vector<Edge> edges{
      {"highway_upstream", junction_at, speed_limit, {{0.0, 0.0}, 0.0, 0.0}},
      {"ramp",
       ramp_length,
       speed_limit,
       {{junction_at - ramp_length * std::cos(angle), -ramp_length * std::sin(angle)}, angle, 0.0}},
      {"downstream", highway_length - junction_at, speed_limit, {{junction_at, 0.0}, 0.0, 0.0}},
  };
  std::vector<Route> routes{
      {"highway", {"highway_upstream", "downstream"}, false},
      {"ramp", {"ramp", "downstream"}, false},
  };
  ConflictPoint junction{"junction", {{0, junction_at}, {1, ramp_length}}, true};
  return NetworkSpec(Topology::merge, std::move(edges), std::move(routes), {junction});
}

namespace {

// Arc of vehicle j projected onto route r, or nullopt when j's edge is not on r.
std::optional<double> projected_arc(const NetworkSpec& net, const VehicleState& v, RouteIndex r) {
  if (v.route == r) return v.arc;
  return net.arc_of(r, net.position_at(v.route, v.arc));
}

}  // namespace

std::optional<Leader> leader_of(const NetworkSpec& network, std::span<const VehicleState> vehicles,
                                std::size_t ego) {
  const auto& me = vehicles[ego];
  const double length = network.route_length(me.route);
  const bool cyclic = network.is_cyclic(me.route);
  std::optional<Leader> best;
  double best_d = 0.0;
  for (std::size_t j = 0; j < vehicles.size(); ++j) {
    if (j == ego) continue;
    auto arc = projected_arc(network, vehicles[j], me.route);
    if (!arc) continue;
    auto d = network.arc_distance(me.route, me.arc, *arc);
    if (!d) continue;
    // Equal arcs: the higher index counts as ahead.
    if (*d == 0.0 && j < ego) {
      if (!cyclic) continue;
      d = length;
    }
    if (!best || *d < best_d) {
      best = Leader{j, 0.0};
      best_d = *d;
    }
  }
  if (!best) {
    if (!cyclic) return std::nullopt;
    return Leader{ego, length - me.length};
  }
  best->gap = best_d - vehicles[best->index].length;
  return best;
}

LeaderIndex::LeaderIndex(const NetworkSpec& network, std::span<const VehicleState> vehicles)
    : network_(&network), vehicles_(vehicles), by_route_(network.routes().size()) {
  for (RouteIndex r = 0; r < by_route_.size(); ++r) {
    auto& list = by_route_[r];
    for (std::size_t j = 0; j < vehicles.size(); ++j) {
      if (auto arc = projected_arc(network, vehicles[j], r)) list.push_back({*arc, j});
    }
    std::sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) {
      return a.arc < b.arc || (a.arc == b.arc && a.index < b.index);
    });
  }
}

std::optional<Leader> LeaderIndex::leader(std::size_t ego) const {
  const auto& me = vehicles_[ego];
  const auto& list = by_route_[me.route];
  auto it = std::find_if(list.begin(), list.end(), [&](const Entry& e) { return e.index == ego; });
  ++it;
  if (it == list.end()) {
    if (!network_->is_cyclic(me.route)) return std::nullopt;
    it = list.begin();
  }
  const auto d = network_->arc_distance(me.route, me.arc, it->arc);
  double dist = *d;
  if (it->index == ego || (dist == 0.0 && it->index < ego)) dist = network_->route_length(me.route);
  return Leader{it->index, dist - vehicles_[it->index].length};
}

nlohmann::json to_json(const NetworkSpec& network) {
  using nlohmann::json;
  json edges = json::array();
  for (const auto& e : network.edges()) {
    edges.push_back({{"id", e.id},
                     {"length", e.length},
                     {"speed_limit", e.speed_limit},
                     {"geometry",
                      {{"x", e.geometry.start.x},
                       {"y", e.geometry.start.y},
                       {"heading", e.geometry.heading},
                       {"curvature", e.geometry.curvature}}}});
  }
  json routes = json::array();
  for (RouteIndex i = 0; i < network.routes().size(); ++i) {
    const auto& r = network.routes()[i];
    routes.push_back(
        {{"id", r.id}, {"edges", r.edge_ids}, {"cyclic", r.cyclic}, {"length", network.route_length(i)}});
  }
  json conflicts = json::array();
  for (const auto& cp : network.conflict_points()) {
    json locs = json::array();
    for (const auto& l : cp.locations)
      locs.push_back({{"route", network.routes()[l.route].id}, {"arc", l.arc}});
    conflicts.push_back({{"id", cp.id}, {"merging", cp.merging}, {"locations", locs}});
  }
  return {{"topology", to_string(network.topology())},
          {"edges", edges},
          {"routes", routes},
          {"conflict_points", conflicts}};
}

}  // namespace comal
