#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comal/dynamics.hpp"
#include "comal/network.hpp"

namespace comal {

struct FeatureFlags {
  bool perception = true;
  bool memory = true;
  bool collaboration = true;

  bool operator==(const FeatureFlags&) const = default;
};

enum class CavPlacement { interleaved, clustered };

struct NetworkParams {
  double speed_limit = 30.0;
  double ring_length = 230.0;
  double loop_radius = 30.0;
  double highway_length = 600.0;
  double ramp_length = 100.0;
  double junction_at = 400.0;

  bool operator==(const NetworkParams&) const = default;
};

struct ScenarioConfig {
  std::string name;
  Topology topology = Topology::ring;
  double horizon = 150.0;  ///< [s]
  double dt = 0.1;
  double warmup = 20.0;

  // closed networks
  int humans = 0;
  int cavs = 0;
  CavPlacement placement = CavPlacement::interleaved;

  // merge
  double penetration = 0.0;
  double highway_inflow = 2000.0;  ///< [veh/h]
  double ramp_inflow = 200.0;      ///< [veh/h]

  NetworkParams network{};
  double vehicle_length = 5.0;
  double noise_std = 0.2;
  double noise_correlation = 2.0;
  double b_max = 4.5;
  GatingSettings gating{};

  std::uint64_t seed = 0;
  FeatureFlags features{};

  double replan_interval = 1.0;  ///< [s]
  int max_rounds = 3;
  double perception_horizon = 100.0;  ///< [m]

  /// Throws InvalidArgument on inconsistent values.
  void validate() const;
  int total_vehicles() const noexcept { return humans + cavs; }
};

nlohmann::json to_json(const ScenarioConfig& c);
/// Applies every key present in `overrides` on top of `base`. Unknown keys
/// are rejected with ConfigError.
ScenarioConfig apply_overrides(ScenarioConfig base, const nlohmann::json& overrides);

/// The eleven benchmark configurations.
const std::vector<ScenarioConfig>& catalog();
/// Case-insensitive lookup; "ring_1", "Ring 1" and "ring1" are equivalent.
/// Throws InvalidArgument for unknown names.
ScenarioConfig find_scenario(std::string_view name);

std::shared_ptr<const NetworkSpec> build_network(const ScenarioConfig& c);

/// Pending source arrivals for an open network, drawn once from the seed.
struct Arrival {
  double time = 0.0;
  RouteIndex route = 0;
  VehicleKind kind = VehicleKind::human;
};

class ArrivalQueue {
 public:
  ArrivalQueue() = default;
  ArrivalQueue(std::vector<Arrival> arrivals);

  /// Inserts due arrivals at the start of their route once the gap ahead
  /// admits the IDM desired gap for the speed of the vehicle in front (capped
  /// at the limit). Entry speed is the fastest the gap supports: at most the
  /// limit, (gap - s0) / T and the failsafe speed. Returns the ids inserted.
  std::vector<VehicleId> release(World& world, const IdmParams& human, double vehicle_length);

  std::size_t pending() const noexcept;
  const std::vector<std::deque<Arrival>>& queues() const noexcept { return queues_; }

 private:
  std::vector<std::deque<Arrival>> queues_;  // per route, in time order
  std::uint32_t next_id_ = 0;
};

/// Draws the merge arrivals: Poisson streams per route up to `c.horizon`.
/// Highway arrivals are CAVs by Bernoulli(penetration) on a stream separate
/// from the arrival times, so the same seed yields the same arrival times at
/// every penetration.
std::vector<Arrival> draw_arrivals(const ScenarioConfig& c);

struct Instance {
  std::unique_ptr<World> world;
  ArrivalQueue arrivals;
};

/// Closed networks: vehicles evenly spaced at the equilibrium speed of the
/// mean gap, CAVs interleaved with stride ceil(N / cavs). Merge: empty
/// network plus the seeded arrivals. Throws InvalidArgument when the
/// vehicles do not fit (route length <= N * (length + s0)).
Instance instantiate(const ScenarioConfig& c);

}  // namespace comal
