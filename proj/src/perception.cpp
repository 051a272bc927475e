#include <algorithm>
#include <charconv>
#include <string>

#include <fmt/core.h>

#include "comal/agent.hpp"
#include "comal/errors.hpp"

namespace comal {

std::string SceneDescription::text() const { return map_text + '\n' + ego_text + '\n' + neighbors_text; }

SceneDescription perceive(const World& world, VehicleId ego, double horizon, std::string_view scenario_tag) {
  const auto& vehicles = world.vehicles();
  const auto it = std::find_if(vehicles.begin(), vehicles.end(), [&](const auto& v) { return v.id == ego; });
  if (it == vehicles.end()) throw InvalidArgument(fmt::format("unknown ego vehicle {}", to_int(ego)));
  const std::size_t index = static_cast<std::size_t>(it - vehicles.begin());
  const auto& me = *it;
  const auto& net = world.network();

  SceneDescription scene;
  const double route_length = net.route_length(me.route);
  scene.map_text = fmt::format("[MAP] scenario={}; route_length={:.2f} m {}; speed_limit={:.2f} m/s; intersections={}",
                               scenario_tag, route_length, net.is_cyclic(me.route) ? "(cyclic)" : "open",
                               net.speed_limit(), net.conflict_points().size());

  if (const auto lead = leader_of(net, vehicles, index)) {
    const auto& l = vehicles[lead->index];
    scene.ego_text = fmt::format("[EGO] id={}; speed={:.2f} m/s; headway={:.2f} m; leader={}; leader_speed={:.2f} m/s",
                                 to_int(me.id), me.speed, lead->gap, to_int(l.id), l.speed);
  } else {
    scene.ego_text = fmt::format("[EGO] id={}; speed={:.2f} m/s; headway=none; leader=none; leader_speed=none",
                                 to_int(me.id), me.speed);
  }

  for (std::size_t j = 0; j < vehicles.size(); ++j) {
    if (j == index) continue;
    const auto& other = vehicles[j];
    std::optional<double> arc =
        other.route == me.route ? std::optional(other.arc) : net.arc_of(me.route, net.position_at(other.route, other.arc));
    if (!arc) continue;
    auto d = net.arc_distance(me.route, me.arc, *arc);
    if (!d) continue;
    if (*d == 0.0 && j < index) d = route_length;
    const double gap = *d - other.length;
    if (gap > horizon) continue;
    scene.neighbors.push_back({other.id, other.kind, gap, other.speed});
  }
  std::sort(scene.neighbors.begin(), scene.neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.gap < b.gap || (a.gap == b.gap && a.id < b.id);
  });

  scene.neighbors_text = "[NEIGHBORS]";
  if (scene.neighbors.empty()) {
    scene.neighbors_text += " none";
  } else {
    for (std::size_t k = 0; k < scene.neighbors.size(); ++k) {
      const auto& n = scene.neighbors[k];
      scene.neighbors_text += fmt::format("{} {}:{} gap={:.2f} m speed={:.2f} m/s", k == 0 ? "" : ";",
                                          to_int(n.id), to_string(n.kind), n.gap, n.speed);
    }
  }
  return scene;
}

namespace {

std::string_view last_line_starting(std::string_view text, std::string_view prefix) {
  std::string_view found;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string_view::npos && line.substr(first).starts_with(prefix)) found = line.substr(first);
    pos = end + 1;
  }
  return found;
}

// Value of `key=` up to the next ';' or space, inside one line.
std::optional<std::string_view> field(std::string_view line, std::string_view key) {
  std::size_t pos = 0;
  while ((pos = line.find(key, pos)) != std::string_view::npos) {
    const bool boundary = pos == 0 || line[pos - 1] == ' ' || line[pos - 1] == ';';
    if (boundary && pos + key.size() < line.size() && line[pos + key.size()] == '=') {
      auto rest = line.substr(pos + key.size() + 1);
      auto end = rest.find_first_of("; ");
      return rest.substr(0, end);
    }
    pos += key.size();
  }
  return std::nullopt;
}

std::optional<double> number(std::optional<std::string_view> s) {
  if (!s) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || ptr != s->data() + s->size()) return std::nullopt;
  return v;
}

}  // namespace

SceneFacts parse_scene(std::string_view text) {
  SceneFacts f;
  if (auto map = last_line_starting(text, "[MAP]"); !map.empty()) {
    if (auto s = field(map, "scenario")) f.scenario = std::string(*s);
    f.speed_limit = number(field(map, "speed_limit"));
  }
  if (auto ego = last_line_starting(text, "[EGO]"); !ego.empty()) {
    f.speed = number(field(ego, "speed"));
    f.headway = number(field(ego, "headway"));
    f.leader_speed = number(field(ego, "leader_speed"));
  }
  return f;
}

}  // namespace comal
