#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace comal {

enum class VehicleId : std::uint32_t {};

constexpr std::uint32_t to_int(VehicleId id) noexcept { return static_cast<std::uint32_t>(id); }

enum class VehicleKind { human, cav };

std::string_view to_string(VehicleKind kind) noexcept;

using RouteIndex = std::size_t;

/// Intelligent Driver Model constants. The planner only ever tunes
/// (v0, a_max, s0); T, b and delta are fixed per run.
struct IdmParams {
  double v0 = 30.0;    ///< desired speed [m/s]
  double T = 1.0;      ///< desired time headway [s]
  double a_max = 1.0;  ///< maximum acceleration [m/s^2]
  double b = 1.5;      ///< comfortable deceleration [m/s^2]
  double delta = 4.0;  ///< acceleration exponent
  double s0 = 2.0;     ///< minimum spacing [m]

  /// Throws InvalidArgument unless all six are positive and delta >= 1.
  void validate() const;

  /// Human driver defaults with v0 set to the network speed limit.
  static IdmParams human_default(double speed_limit);

  bool operator==(const IdmParams&) const = default;
};

/// Longitudinal state of one vehicle. Position is stored as arc length along
/// its route; NetworkSpec::position_at converts to an (edge, offset) pair.
struct VehicleState {
  VehicleId id{};
  RouteIndex route = 0;
  double arc = 0.0;     ///< front bumper position along the route [m]
  double speed = 0.0;   ///< [m/s], never negative
  double length = 5.0;  ///< [m]
  VehicleKind kind = VehicleKind::human;
  IdmParams params{};
};

}  // namespace comal
