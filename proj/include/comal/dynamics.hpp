#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "comal/network.hpp"
#include "comal/types.hpp"

namespace comal {

/// IDM desired gap s*(v, dv) = s0 + max(0, v*T + v*dv / (2*sqrt(a_max*b))).
/// `dv` is ego speed minus leader speed.
double desired_gap(const IdmParams& p, double v, double dv);

/// IDM acceleration. Throws CollisionError when s <= 0.
double idm_accel(const IdmParams& p, double v, double dv, double s);

/// Free-road IDM acceleration (no leader).
double idm_free_accel(const IdmParams& p, double v);

/// Speed at which a uniform platoon with bumper gap `gap` is stationary.
/// Bisection to |a| < 1e-10. Throws InvalidArgument when gap <= s0.
double equilibrium_speed(const IdmParams& p, double gap);

/// Largest speed <= v such that, moving at it for one step and then braking
/// at b_max, the ego stops within gap plus the leader's stopping distance.
double failsafe_speed(double v, double gap, double leader_speed, double dt, double b_max);

/// Additive Gaussian acceleration noise with one stream per vehicle, each
/// seeded from (run seed, vehicle id). With a positive correlation time the
/// per-vehicle sequence is a stationary Ornstein-Uhlenbeck process sampled
/// every `dt` (marginal std unchanged); zero gives white noise.
class NoiseModel {
 public:
  NoiseModel(double std, double correlation_time, double dt, std::uint64_t seed);
  double std() const noexcept { return std_; }
  double sample(VehicleId id);

 private:
  struct Stream {
    std::mt19937_64 engine;
    double value = 0.0;
    bool started = false;
  };
  double std_;
  double rho_;  // one-step autocorrelation
  std::uint64_t seed_;
  std::unordered_map<VehicleId, Stream> streams_;
};

/// First-come-first-served reservation of conflict points.
///
/// A vehicle joins a point's queue once its front is within
/// `stop line + max(approach_window, braking distance at b_max)`, so it can
/// always still stop. A vehicle is blocked while anything queued ahead of it
/// comes from a different approach; it then treats the stop line as a
/// stopped leader, visible from its comfortable braking distance. Entries
/// leave the queue when their front passes the point.
///
/// On merges the stop line must sit more than one vehicle length before the
/// point: the merging car's body is still on its own approach when its front
/// passes, and the queue behind must not overlap it.
struct GatingSettings {
  double approach_window = 10.0;
  double crossing_stop_offset = 2.0;
  double merge_stop_offset = 5.5;
};

struct DynamicsSettings {
  double dt = 0.1;
  double noise_std = 0.2;
  double noise_correlation = 2.0;  ///< [s]; 0 = white noise
  double b_max = 4.5;              ///< failsafe deceleration
  GatingSettings gating{};
};

struct ConflictQueueEntry {
  VehicleId vehicle{};
  std::size_t approach = 0;  ///< index into ConflictPoint::locations
};

/// Mutable simulation state owned by one run.
class World {
 public:
  World(std::shared_ptr<const NetworkSpec> network, DynamicsSettings settings, std::uint64_t seed);

  const NetworkSpec& network() const noexcept { return *network_; }
  std::shared_ptr<const NetworkSpec> network_ptr() const noexcept { return network_; }
  const DynamicsSettings& settings() const noexcept { return settings_; }

  std::int64_t step_index() const noexcept { return step_index_; }
  double time() const noexcept { return static_cast<double>(step_index_) * settings_.dt; }

  const std::vector<VehicleState>& vehicles() const noexcept { return vehicles_; }

  /// Throws InvalidArgument for duplicate ids or positions off the route.
  void add_vehicle(VehicleState v);
  const VehicleState* find(VehicleId id) const;
  /// Installs new IDM parameters; they take effect from the next step.
  void set_params(VehicleId id, const IdmParams& params);

  /// Vehicles removed at an open-route sink during the last step.
  const std::vector<VehicleId>& exited() const noexcept { return exited_; }

  const std::vector<std::deque<ConflictQueueEntry>>& conflict_queues() const noexcept {
    return queues_;
  }

  /// Bumper gap to the vehicle ahead of `vehicles()[index]`.
  std::optional<Leader> leader(std::size_t index) const;

  /// Advances one fixed step of settings().dt. Throws CollisionError if the
  /// step leaves two vehicles overlapping; the world is then unchanged.
  void step();

 private:
  struct Approach {
    std::size_t conflict;
    std::size_t location;
    double ahead;  // distance from front to the point
  };
  std::optional<Approach> approach_of(const VehicleState& v, double horizon) const;
  double stop_offset(std::size_t conflict) const;
  void update_queues();
  std::optional<double> blocked_gap(const VehicleState& v) const;

  std::shared_ptr<const NetworkSpec> network_;
  DynamicsSettings settings_;
  NoiseModel noise_;
  std::int64_t step_index_ = 0;
  std::vector<VehicleState> vehicles_;
  std::vector<std::deque<ConflictQueueEntry>> queues_;
  std::vector<VehicleId> exited_;
};

}  // namespace comal
