#include "comal/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/core.h>

#include "comal/errors.hpp"

namespace comal {

std::string_view to_string(VehicleKind kind) noexcept {
  return kind == VehicleKind::cav ? "cav" : "human";
}

void IdmParams::validate() const {
  const bool ok = v0 > 0.0 && T > 0.0 && a_max > 0.0 && b > 0.0 && s0 > 0.0 && delta >= 1.0;
  if (!ok)
    throw InvalidArgument(fmt::format("invalid IDM parameters v0={} T={} a_max={} b={} delta={} s0={}",
                                      v0, T, a_max, b, delta, s0));
}

IdmParams IdmParams::human_default(double speed_limit) {
  IdmParams p;
  p.v0 = speed_limit;
  return p;
}

double desired_gap(const IdmParams& p, double v, double dv) {
  const double dynamic = v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b));
  return p.s0 + std::max(0.0, dynamic);
}

double idm_free_accel(const IdmParams& p, double v) {
  return p.a_max * (1.0 - std::pow(v / p.v0, p.delta));
}

double idm_accel(const IdmParams& p, double v, double dv, double s) {
  if (!(s > 0.0)) throw CollisionError(fmt::format("non-positive bumper gap {} m", s));
  const double ratio = desired_gap(p, v, dv) / s;
  return p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - ratio * ratio);
}

double equilibrium_speed(const IdmParams& p, double gap) {
  if (!(gap > p.s0))
    throw InvalidArgument(fmt::format("gap {} m leaves no positive equilibrium (s0 = {} m)", gap, p.s0));
  double lo = 0.0;
  double hi = p.v0;
  double mid = 0.5 * (lo + hi);
  for (int i = 0; i < 200; ++i) {
    mid = 0.5 * (lo + hi);
    const double a = idm_accel(p, mid, 0.0, gap);
    if (std::abs(a) < 1e-10) break;
    (a > 0.0 ? lo : hi) = mid;
  }
  return mid;
}

double failsafe_speed(double v, double gap, double leader_speed, double dt, double b_max) {
  const double bdt = b_max * dt;
  const double safe =
      -bdt + std::sqrt(bdt * bdt + 2.0 * b_max * std::max(0.0, gap) + leader_speed * leader_speed);
  return std::clamp(safe, 0.0, v);
}

NoiseModel::NoiseModel(double std, double correlation_time, double dt, std::uint64_t seed)
    : std_(std), rho_(correlation_time > 0.0 ? std::exp(-dt / correlation_time) : 0.0), seed_(seed) {
  if (!(std >= 0.0)) throw InvalidArgument("noise std must be non-negative");
  if (!(correlation_time >= 0.0)) throw InvalidArgument("noise correlation time must be non-negative");
}

double NoiseModel::sample(VehicleId id) {
  if (std_ == 0.0) return 0.0;
  auto it = streams_.find(id);
  if (it == streams_.end()) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      to_int(id), 0x6e6f6973u};
    it = streams_.emplace(id, Stream{std::mt19937_64(seq)}).first;
  }
  auto& s = it->second;
  std::normal_distribution<double> unit(0.0, 1.0);
  const double z = unit(s.engine);
  if (!s.started) {
    s.value = std_ * z;
    s.started = true;
  } else {
    s.value = rho_ * s.value + std::sqrt(1.0 - rho_ * rho_) * std_ * z;
  }
  return s.value;
}

World::World(std::shared_ptr<const NetworkSpec> network, DynamicsSettings settings, std::uint64_t seed)
    : network_(std::move(network)),
      settings_(settings),
      noise_(settings.noise_std, settings.noise_correlation, settings.dt, seed),
      queues_(network_->conflict_points().size()) {
  if (!(settings_.dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (!(settings_.b_max > 0.0)) throw InvalidArgument("b_max must be positive");
}

void World::add_vehicle(VehicleState v) {
  if (find(v.id)) throw InvalidArgument(fmt::format("duplicate vehicle id {}", to_int(v.id)));
  if (!(v.length > 0.0)) throw InvalidArgument("vehicle length must be positive");
  if (!(v.speed >= 0.0)) throw InvalidArgument("vehicle speed must be non-negative");
  v.params.validate();
  const double length = network_->route_length(v.route);
  if (network_->is_cyclic(v.route)) {
    v.arc = std::fmod(v.arc, length);
    if (v.arc < 0.0) v.arc += length;
  } else if (!(v.arc >= 0.0 && v.arc < length)) {
    throw InvalidArgument(fmt::format("arc {} outside route of length {}", v.arc, length));
  }
  vehicles_.push_back(v);
}

const VehicleState* World::find(VehicleId id) const {
  auto it = std::find_if(vehicles_.begin(), vehicles_.end(), [id](const auto& v) { return v.id == id; });
  return it == vehicles_.end() ? nullptr : &*it;
}

void World::set_params(VehicleId id, const IdmParams& params) {
  params.validate();
  auto it = std::find_if(vehicles_.begin(), vehicles_.end(), [id](const auto& v) { return v.id == id; });
  if (it == vehicles_.end()) throw InvalidArgument(fmt::format("unknown vehicle {}", to_int(id)));
  it->params = params;
}

std::optional<Leader> World::leader(std::size_t index) const {
  return leader_of(*network_, vehicles_, index);
}

std::optional<World::Approach> World::approach_of(const VehicleState& v, double horizon) const {
  std::optional<Approach> best;
  const auto& conflicts = network_->conflict_points();
  const bool cyclic = network_->is_cyclic(v.route);
  const double half = 0.5 * network_->route_length(v.route);
  for (std::size_t c = 0; c < conflicts.size(); ++c) {
    const auto& locs = conflicts[c].locations;
    for (std::size_t l = 0; l < locs.size(); ++l) {
      if (locs[l].route != v.route) continue;
      auto ahead = network_->arc_distance(v.route, v.arc, locs[l].arc);
      if (!ahead || *ahead > horizon || (cyclic && *ahead > half)) continue;
      if (!best || *ahead < best->ahead) best = Approach{c, l, *ahead};
    }
  }
  return best;
}

double World::stop_offset(std::size_t conflict) const {
  return network_->conflict_points()[conflict].merging ? settings_.gating.merge_stop_offset
                                                       : settings_.gating.crossing_stop_offset;
}

void World::update_queues() {
  const auto& gating = settings_.gating;
  const auto& conflicts = network_->conflict_points();
  for (std::size_t c = 0; c < conflicts.size(); ++c) {
    const double offset = stop_offset(c);
    const auto zone = [&](double v) {
      const double braking = v * settings_.dt + v * v / (2.0 * settings_.b_max) + 1.0;
      return offset + std::max(gating.approach_window, braking);
    };
    auto& q = queues_[c];
    std::erase_if(q, [&](const ConflictQueueEntry& e) {
      const auto* v = find(e.vehicle);
      if (!v) return true;
      const auto& loc = conflicts[c].locations[e.approach];
      auto ahead = network_->arc_distance(v->route, v->arc, loc.arc);
      if (!ahead) return true;
      return network_->is_cyclic(v->route) && *ahead > 0.5 * network_->route_length(v->route);
    });
    struct Candidate {
      double ahead;
      VehicleId id;
      std::size_t approach;
    };
    std::vector<Candidate> fresh;
    for (const auto& v : vehicles_) {
      if (std::any_of(q.begin(), q.end(), [&](const auto& e) { return e.vehicle == v.id; })) continue;
      auto ap = approach_of(v, zone(v.speed));
      if (ap && ap->conflict == c) fresh.push_back({ap->ahead, v.id, ap->location});
    }
    std::sort(fresh.begin(), fresh.end(), [](const Candidate& a, const Candidate& b) {
      return a.ahead < b.ahead || (a.ahead == b.ahead && a.id < b.id);
    });
    for (const auto& f : fresh) q.push_back({f.id, f.approach});
  }
}

std::optional<double> World::blocked_gap(const VehicleState& v) const {
  const auto& gating = settings_.gating;
  const double braking = v.speed * settings_.dt + v.speed * v.speed / (2.0 * v.params.b) + 1.0;
  const double widest = std::max(gating.crossing_stop_offset, gating.merge_stop_offset);
  auto ap = approach_of(v, widest + std::max(gating.approach_window, braking));
  if (!ap) return std::nullopt;
  const double offset = stop_offset(ap->conflict);
  if (ap->ahead > offset + std::max(gating.approach_window, braking)) return std::nullopt;
  const auto& q = queues_[ap->conflict];
  bool blocked = false;
  for (const auto& e : q) {
    if (e.vehicle == v.id) break;
    if (e.approach != ap->location) {
      blocked = true;
      break;
    }
  }
  if (!blocked) return std::nullopt;
  const double gap = ap->ahead - offset;
  // Already past the stop line: nothing sensible to stop for.
  if (gap <= 0.0) return std::nullopt;
  return gap;
}

void World::step() {
  const double dt = settings_.dt;
  const auto saved_queues = queues_;
  update_queues();

  const std::size_t n = vehicles_.size();
  std::vector<double> next_speed(n);
  {
    LeaderIndex index(*network_, vehicles_);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = vehicles_[i];
      const auto lead = index.leader(i);
      double accel = 0.0;
      double leader_speed = 0.0;
      if (lead) {
        if (!(lead->gap > 0.0)) {
          queues_ = saved_queues;
          throw CollisionError(fmt::format("t={:.1f}s: vehicle {} overlaps vehicle {} (gap {:.3f} m)", time(),
                                           to_int(v.id), to_int(vehicles_[lead->index].id), lead->gap));
        }
        leader_speed = vehicles_[lead->index].speed;
        accel = idm_accel(v.params, v.speed, v.speed - leader_speed, lead->gap);
      } else {
        accel = idm_free_accel(v.params, v.speed);
      }
      const auto stop_gap = blocked_gap(v);
      if (stop_gap) accel = std::min(accel, idm_accel(v.params, v.speed, v.speed, *stop_gap));
      if (v.kind == VehicleKind::human) accel += noise_.sample(v.id);

      double speed = std::max(0.0, v.speed + accel * dt);
      if (lead) speed = failsafe_speed(speed, lead->gap, leader_speed, dt, settings_.b_max);
      if (stop_gap) speed = failsafe_speed(speed, *stop_gap, 0.0, dt, settings_.b_max);
      next_speed[i] = speed;
    }
  }

  std::vector<VehicleState> next;
  next.reserve(n);
  std::vector<VehicleId> exited;
  for (std::size_t i = 0; i < n; ++i) {
    VehicleState v = vehicles_[i];
    v.speed = next_speed[i];
    v.arc += v.speed * dt;
    const double length = network_->route_length(v.route);
    if (network_->is_cyclic(v.route)) {
      if (v.arc >= length) v.arc -= length;
    } else if (v.arc >= length) {
      exited.push_back(v.id);
      continue;
    }
    next.push_back(v);
  }

  LeaderIndex after(*network_, next);
  for (std::size_t i = 0; i < next.size(); ++i) {
    const auto lead = after.leader(i);
    if (lead && !(lead->gap > 0.0)) {
      queues_ = saved_queues;
      throw CollisionError(fmt::format("t={:.1f}s: vehicle {} collided with vehicle {} (gap {:.3f} m)",
                                       time() + dt, to_int(next[i].id), to_int(next[lead->index].id),
                                       lead->gap));
    }
  }

  vehicles_ = std::move(next);
  exited_ = std::move(exited);
  ++step_index_;
}

}  // namespace comal
