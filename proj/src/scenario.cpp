#include "comal/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/core.h>

#include "comal/errors.hpp"

namespace comal {

void ScenarioConfig::validate() const {
  const auto fail = [&](std::string_view what) {
    throw InvalidArgument(fmt::format("scenario '{}': {}", name, what));
  };
  if (!(dt > 0.0)) fail("dt must be positive");
  if (!(warmup >= 0.0)) fail("warmup must be non-negative");
  if (!(horizon > warmup)) fail("horizon must exceed warmup");
  if (humans < 0 || cavs < 0) fail("vehicle counts must be non-negative");
  if (!(penetration >= 0.0 && penetration <= 1.0)) fail("penetration must lie in [0, 1]");
  if (!(highway_inflow >= 0.0 && ramp_inflow >= 0.0)) fail("inflows must be non-negative");
  if (!(vehicle_length > 0.0)) fail("vehicle length must be positive");
  if (!(noise_std >= 0.0 && noise_correlation >= 0.0)) fail("noise settings must be non-negative");
  if (!(b_max > 0.0)) fail("b_max must be positive");
  if (!(replan_interval > 0.0)) fail("replan interval must be positive");
  if (max_rounds < 1) fail("max_rounds must be at least 1");
  if (!(perception_horizon >= 0.0)) fail("perception horizon must be non-negative");
  if (!(gating.approach_window >= 0.0 && gating.crossing_stop_offset >= 0.0)) fail("invalid gating settings");
  if (topology == Topology::merge && !(gating.merge_stop_offset > vehicle_length))
    fail("merge stop offset must exceed the vehicle length");
  if (!(network.speed_limit > 0.0)) fail("speed limit must be positive");
}

nlohmann::json to_json(const ScenarioConfig& c) {
  return {
      {"name", c.name},
      {"topology", to_string(c.topology)},
      {"horizon", c.horizon},
      {"dt", c.dt},
      {"warmup", c.warmup},
      {"humans", c.humans},
      {"cavs", c.cavs},
      {"placement", c.placement == CavPlacement::interleaved ? "interleaved" : "clustered"},
      {"penetration", c.penetration},
      {"highway_inflow", c.highway_inflow},
      {"ramp_inflow", c.ramp_inflow},
      {"network",
       {{"speed_limit", c.network.speed_limit},
        {"ring_length", c.network.ring_length},
        {"loop_radius", c.network.loop_radius},
        {"highway_length", c.network.highway_length},
        {"ramp_length", c.network.ramp_length},
        {"junction_at", c.network.junction_at}}},
      {"vehicle_length", c.vehicle_length},
      {"noise_std", c.noise_std},
      {"noise_correlation", c.noise_correlation},
      {"b_max", c.b_max},
      {"gating",
       {{"approach_window", c.gating.approach_window},
        {"crossing_stop_offset", c.gating.crossing_stop_offset},
        {"merge_stop_offset", c.gating.merge_stop_offset}}},
      {"seed", c.seed},
      {"features",
       {{"perception", c.features.perception},
        {"memory", c.features.memory},
        {"collaboration", c.features.collaboration}}},
      {"replan_interval", c.replan_interval},
      {"max_rounds", c.max_rounds},
      {"perception_horizon", c.perception_horizon},
  };
}

namespace {

template <typename T>
void read(const nlohmann::json& j, std::string_view key, T& out) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("scenario key '{}' has the wrong type", key));
  }
}

template <typename Fn>
void each(const nlohmann::json& j, std::string_view section, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be a JSON object", section));
  for (const auto& [key, value] : j.items()) {
    if (!fn(key, value)) throw ConfigError(fmt::format("unknown scenario key '{}{}'", section, key));
  }
}

}  // namespace

ScenarioConfig apply_overrides(ScenarioConfig c, const nlohmann::json& overrides) {
  each(overrides, "", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "name") read(v, key, c.name);
    else if (key == "topology") {
      std::string t;
      read(v, key, t);
      try {
        c.topology = topology_from_string(t);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "horizon") read(v, key, c.horizon);
    else if (key == "dt") read(v, key, c.dt);
    else if (key == "warmup") read(v, key, c.warmup);
    else if (key == "humans") read(v, key, c.humans);
    else if (key == "cavs") read(v, key, c.cavs);
    else if (key == "placement") {
      std::string p;
      read(v, key, p);
      if (p == "interleaved") c.placement = CavPlacement::interleaved;
      else if (p == "clustered") c.placement = CavPlacement::clustered;
      else throw ConfigError(fmt::format("unknown placement '{}'", p));
    } else if (key == "penetration") read(v, key, c.penetration);
    else if (key == "highway_inflow") read(v, key, c.highway_inflow);
    else if (key == "ramp_inflow") read(v, key, c.ramp_inflow);
    else if (key == "network") {
      each(v, "network.", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "speed_limit") read(x, k, c.network.speed_limit);
        else if (k == "ring_length") read(x, k, c.network.ring_length);
        else if (k == "loop_radius") read(x, k, c.network.loop_radius);
        else if (k == "highway_length") read(x, k, c.network.highway_length);
        else if (k == "ramp_length") read(x, k, c.network.ramp_length);
        else if (k == "junction_at") read(x, k, c.network.junction_at);
        else return false;
        return true;
      });
    } else if (key == "vehicle_length") read(v, key, c.vehicle_length);
    else if (key == "noise_std") read(v, key, c.noise_std);
    else if (key == "noise_correlation") read(v, key, c.noise_correlation);
    else if (key == "b_max") read(v, key, c.b_max);
    else if (key == "gating") {
      each(v, "gating.", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "approach_window") read(x, k, c.gating.approach_window);
        else if (k == "crossing_stop_offset") read(x, k, c.gating.crossing_stop_offset);
        else if (k == "merge_stop_offset") read(x, k, c.gating.merge_stop_offset);
        else return false;
        return true;
      });
    } else if (key == "seed") read(v, key, c.seed);
    else if (key == "features") {
      each(v, "features.", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "perception") read(x, k, c.features.perception);
        else if (k == "memory") read(x, k, c.features.memory);
        else if (k == "collaboration") read(x, k, c.features.collaboration);
        else return false;
        return true;
      });
    } else if (key == "replan_interval") read(v, key, c.replan_interval);
    else if (key == "max_rounds") read(v, key, c.max_rounds);
    else if (key == "perception_horizon") read(v, key, c.perception_horizon);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

const std::vector<ScenarioConfig>& catalog() {
  static const std::vector<ScenarioConfig> entries = [] {
    std::vector<ScenarioConfig> out;
    const auto closed = [&](std::string name, Topology t, int humans, int cavs) {
      ScenarioConfig c;
      c.name = std::move(name);
      c.topology = t;
      c.horizon = 150.0;
      c.humans = humans;
      c.cavs = cavs;
      out.push_back(c);
    };
    closed("fe_0", Topology::figure_eight, 13, 1);
    closed("fe_1", Topology::figure_eight, 7, 7);
    closed("fe_2", Topology::figure_eight, 0, 14);
    closed("ring_0", Topology::ring, 21, 1);
    closed("ring_1", Topology::ring, 19, 3);
    closed("ring_2", Topology::ring, 11, 11);
    const double penetrations[] = {0.10, 0.25, 1.0 / 3.0, 0.50, 0.90};
    for (int i = 0; i < 5; ++i) {
      ScenarioConfig c;
      c.name = fmt::format("merge_{}", i);
      c.topology = Topology::merge;
      c.horizon = 75.0;
      c.penetration = penetrations[i];
      out.push_back(c);
    }
    return out;
  }();
  return entries;
}

namespace {

std::string normalize(std::string_view name) {
  std::string out;
  for (char ch : name) {
    if (ch == ' ' || ch == '_' || ch == '-') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (out.starts_with("figureeight")) out = "fe" + out.substr(11);
  return out;
}

}  // namespace

ScenarioConfig find_scenario(std::string_view name) {
  const auto key = normalize(name);
  for (const auto& c : catalog()) {
    if (normalize(c.name) == key) return c;
  }
  throw InvalidArgument(fmt::format("unknown scenario '{}'", name));
}

std::shared_ptr<const NetworkSpec> build_network(const ScenarioConfig& c) {
  const auto& n = c.network;
  switch (c.topology) {
    case Topology::ring:
      return std::make_shared<const NetworkSpec>(build_ring(n.ring_length, n.speed_limit));
    case Topology::figure_eight:
      return std::make_shared<const NetworkSpec>(build_figure_eight(n.loop_radius, n.speed_limit));
    case Topology::merge:
      return std::make_shared<const NetworkSpec>(
          build_merge(n.highway_length, n.ramp_length, n.speed_limit, n.junction_at));
  }
  throw InvalidArgument("unknown topology");
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kArrivalTag = 0x61727276;  // "arrv"
constexpr std::uint32_t kCavTag = 0x63617673;      // "cavs"

}  // namespace

std::vector<Arrival> draw_arrivals(const ScenarioConfig& c) {
  std::vector<Arrival> out;
  const double rates[2] = {c.highway_inflow / 3600.0, c.ramp_inflow / 3600.0};
  auto cav_rng = stream(c.seed, kCavTag);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (RouteIndex r = 0; r < 2; ++r) {
    if (rates[r] <= 0.0) continue;
    auto rng = stream(c.seed, kArrivalTag + static_cast<std::uint32_t>(r));
    std::exponential_distribution<double> gap(rates[r]);
    for (double t = gap(rng); t < c.horizon; t += gap(rng)) {
      VehicleKind kind = VehicleKind::human;
      if (r == 0 && unit(cav_rng) < c.penetration) kind = VehicleKind::cav;
      out.push_back({t, r, kind});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
  return out;
}

ArrivalQueue::ArrivalQueue(std::vector<Arrival> arrivals) {
  for (const auto& a : arrivals) {
    if (a.route >= queues_.size()) queues_.resize(a.route + 1);
    queues_[a.route].push_back(a);
  }
  for (auto& q : queues_) {
    std::stable_sort(q.begin(), q.end(), [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
  }
}

std::size_t ArrivalQueue::pending() const noexcept {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.size();
  return n;
}

std::vector<VehicleId> ArrivalQueue::release(World& world, const IdmParams& human, double vehicle_length) {
  std::vector<VehicleId> inserted;
  const auto& net = world.network();
  const double limit = net.speed_limit();
  const double now = world.time() + 1e-9 * world.settings().dt;
  for (RouteIndex r = 0; r < queues_.size(); ++r) {
    auto& q = queues_[r];
    while (!q.empty() && q.front().time <= now) {
      double gap = std::numeric_limits<double>::infinity();
      double lead_speed = limit;
      for (const auto& v : world.vehicles()) {
        auto arc = v.route == r ? std::optional(v.arc) : net.arc_of(r, net.position_at(v.route, v.arc));
        if (!arc) continue;
        const double g = *arc - v.length;
        if (g < gap) {
          gap = g;
          lead_speed = v.speed;
        }
      }
      double speed = limit;
      if (std::isfinite(gap)) {
        const double target = std::min(limit, lead_speed);
        if (gap <= human.s0 || gap < desired_gap(human, target, 0.0)) break;
        speed = std::min({limit, (gap - human.s0) / human.T,
                          failsafe_speed(limit, gap, lead_speed, world.settings().dt, world.settings().b_max)});
      }
      VehicleState v;
      v.id = VehicleId{next_id_++};
      v.route = r;
      v.arc = 0.0;
      v.speed = speed;
      v.length = vehicle_length;
      v.kind = q.front().kind;
      v.params = human;
      world.add_vehicle(v);
      inserted.push_back(v.id);
      q.pop_front();
    }
  }
  return inserted;
}

Instance instantiate(const ScenarioConfig& c) {
  c.validate();
  auto net = build_network(c);
  DynamicsSettings settings;
  settings.dt = c.dt;
  settings.noise_std = c.noise_std;
  settings.noise_correlation = c.noise_correlation;
  settings.b_max = c.b_max;
  settings.gating = c.gating;
  Instance inst;
  inst.world = std::make_unique<World>(net, settings, c.seed);
  const auto human = IdmParams::human_default(c.network.speed_limit);

  if (c.topology == Topology::merge) {
    inst.arrivals = ArrivalQueue(draw_arrivals(c));
    return inst;
  }

  const int n = c.total_vehicles();
  if (n == 0) return inst;
  const double length = net->route_length(0);
  if (!(length > n * (c.vehicle_length + human.s0)))
    throw InvalidArgument(fmt::format("{} vehicles of length {} m do not fit on a {} m route", n,
                                      c.vehicle_length, length));
  const double spacing = length / n;
  const double speed = equilibrium_speed(human, spacing - c.vehicle_length);

  std::vector<bool> is_cav(static_cast<std::size_t>(n), false);
  if (c.cavs > 0) {
    if (c.placement == CavPlacement::clustered) {
      for (int k = 0; k < c.cavs; ++k) is_cav[static_cast<std::size_t>(k)] = true;
    } else {
      const int stride = (n + c.cavs - 1) / c.cavs;
      const bool fits = static_cast<long>(stride) * (c.cavs - 1) < n;
      for (int k = 0; k < c.cavs; ++k) {
        const long slot = fits ? static_cast<long>(k) * stride : static_cast<long>(k) * n / c.cavs;
        is_cav[static_cast<std::size_t>(slot)] = true;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    VehicleState v;
    v.id = VehicleId{static_cast<std::uint32_t>(i)};
    v.route = 0;
    v.arc = i * spacing;
    v.speed = speed;
    v.length = c.vehicle_length;
    v.kind = is_cav[static_cast<std::size_t>(i)] ? VehicleKind::cav : VehicleKind::human;
    v.params = human;
    inst.world->add_vehicle(v);
  }
  return inst;
}

}  // namespace comal
