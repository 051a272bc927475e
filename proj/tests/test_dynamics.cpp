#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "comal/dynamics.hpp"
#include "comal/errors.hpp"
#include "oracles.hpp"

using namespace comal;

namespace {

const IdmParams kHuman = IdmParams::human_default(30.0);

std::shared_ptr<const NetworkSpec> ring(double length = 230.0) {
  return std::make_shared<const NetworkSpec>(build_ring(length, 30.0));
}

VehicleState vehicle(std::uint32_t id, double arc, double speed, VehicleKind kind = VehicleKind::human,
                     RouteIndex route = 0) {
  VehicleState v;
  v.id = VehicleId{id};
  v.route = route;
  v.arc = arc;
  v.speed = speed;
  v.kind = kind;
  v.params = kHuman;
  return v;
}

World uniform_ring(int n, double length, double noise, std::uint64_t seed = 1) {
  DynamicsSettings s;
  s.noise_std = noise;
  World w(ring(length), s, seed);
  const double spacing = length / n;
  const double v = equilibrium_speed(kHuman, spacing - 5.0);
  for (int i = 0; i < n; ++i) w.add_vehicle(vehicle(static_cast<std::uint32_t>(i), i * spacing, v));
  return w;
}

IdmParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  IdmParams p;
  p.v0 = 1 + 39 * u(rng);
  p.T = 0.3 + 2.7 * u(rng);
  p.a_max = 0.1 + 2.9 * u(rng);
  p.b = 0.5 + 4 * u(rng);
  p.delta = 1 + 5 * u(rng);
  p.s0 = 0.5 + 9.5 * u(rng);
  return p;
}

}  // namespace

TEST_SUITE("dynamics") {
  TEST_CASE("desired gap examples") {
    CHECK(desired_gap(kHuman, 0, 0) == 2.0);
    CHECK(desired_gap(kHuman, 5, 0) == doctest::Approx(7.0));
    CHECK(desired_gap(kHuman, 10, -6) == 2.0);
    CHECK(desired_gap(kHuman, 10, 2) == doctest::Approx(2 + 10 + 20 / (2 * std::sqrt(1.5))));
  }

  TEST_CASE("idm acceleration examples") {
    CHECK(idm_accel(kHuman, 0, 0, 2) == doctest::Approx(0.0));
    const double expected = 1.0 - std::pow(5.0 / 30.0, 4) - 0.49;
    CHECK(idm_accel(kHuman, 5, 0, 10) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(idm_accel(kHuman, 5, 0, 10) - oracle::idm_accel(kHuman, 5, 0, 10)) < 1e-12);
    CHECK(idm_accel(kHuman, 30, 0, 1e9) < 0.0);
    CHECK(idm_accel(kHuman, 30, 0, 1e9) > -1e-12);
    CHECK_THROWS_AS(idm_accel(kHuman, 5, 0, 0), CollisionError);
    CHECK_THROWS_AS(idm_accel(kHuman, 5, 0, -1), CollisionError);
    CHECK(idm_free_accel(kHuman, 0) == 1.0);
  }

  TEST_CASE("idm acceleration agrees with the high-precision oracle") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 1000; ++i) {
      const auto p = random_params(rng);
      const double v = p.v0 * 1.2 * u(rng);
      const double dv = -10 + 20 * u(rng);
      const double s = 0.1 + 200 * u(rng);
      const double got = idm_accel(p, v, dv, s);
      const double want = oracle::idm_accel(p, v, dv, s);
      CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
    }
  }

  TEST_CASE("idm is monotone and bounded by a_max") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 2000; ++i) {
      const auto p = random_params(rng);
      const double v = p.v0 * 0.99 * u(rng);
      const double dv = -5 + 10 * u(rng);
      const double s = 0.5 + 100 * u(rng);
      const double a = idm_accel(p, v, dv, s);
      CHECK(a <= p.a_max);
      CHECK(idm_accel(p, v + 0.01 * p.v0, dv, s) < a);
      CHECK(idm_accel(p, v, dv, s * 1.1) > a);
    }
  }

  TEST_CASE("equilibrium speed") {
    const double gap = 230.0 / 22.0 - 5.0;
    const double v = equilibrium_speed(kHuman, gap);
    CHECK(v > 0.0);
    CHECK(v < kHuman.v0);
    CHECK(std::abs(idm_accel(kHuman, v, 0, gap)) < 1e-10);
    const auto roots = oracle::equilibrium_roots(kHuman, gap, 1e-4);
    REQUIRE(roots.size() == 1);
    CHECK(std::abs(roots.front() - v) < 1e-6);

    CHECK(equilibrium_speed(kHuman, 1e7) == doctest::Approx(30.0).epsilon(1e-4));
    CHECK(equilibrium_speed(kHuman, 2.0 + 1e-9) < 1e-6);
    CHECK_THROWS_AS(equilibrium_speed(kHuman, 2.0), InvalidArgument);
    CHECK_THROWS_AS(equilibrium_speed(kHuman, 1.0), InvalidArgument);
  }

  TEST_CASE("equilibrium speed is the unique grid root for random parameters") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 20; ++i) {
      const auto p = random_params(rng);
      const double gap = p.s0 + std::uniform_real_distribution<double>(0.5, 60)(rng);
      const auto roots = oracle::equilibrium_roots(p, gap, 1e-4);
      REQUIRE(roots.size() == 1);
      CHECK(std::abs(roots.front() - equilibrium_speed(p, gap)) < 1e-6);
    }
  }

  TEST_CASE("failsafe speed examples") {
    CHECK(failsafe_speed(10, 1e6, 0, 0.1, 4.5) == 10.0);
    CHECK(failsafe_speed(10, 0, 0, 0.1, 4.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(failsafe_speed(10, 2, 10, 0.1, 4.5) == doctest::Approx(10.0));
    const double capped = failsafe_speed(20, 10, 0, 0.1, 4.5);
    CHECK(capped < 20.0);
    // Move one step at the capped speed, then brake: stops within the gap.
    CHECK(capped * 0.1 + capped * capped / 9.0 <= 10.0 + 1e-9);
  }

  TEST_CASE("noise streams are reproducible and have the configured spread") {
    NoiseModel a(0.2, 2.0, 0.1, 42), b(0.2, 2.0, 0.1, 42), c(0.2, 2.0, 0.1, 43);
    std::vector<double> xs;
    bool differs = false;
    for (int i = 0; i < 200000; ++i) {
      const double x = a.sample(VehicleId{3});
      CHECK_EQ(x, b.sample(VehicleId{3}));
      differs |= x != c.sample(VehicleId{3});
      xs.push_back(x);
    }
    CHECK(differs);
    CHECK(oracle::population_std(xs) == doctest::Approx(0.2).epsilon(0.05));
    // Lag-one autocorrelation of the OU process is exp(-dt / tau).
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
      num += xs[i] * xs[i - 1];
      den += xs[i - 1] * xs[i - 1];
    }
    CHECK(num / den == doctest::Approx(std::exp(-0.05)).epsilon(0.02));

    NoiseModel white(0.2, 0.0, 0.1, 1), silent(0.0, 2.0, 0.1, 1);
    double lag = 0.0, sq = 0.0, prev = white.sample(VehicleId{0});
    for (int i = 0; i < 100000; ++i) {
      const double x = white.sample(VehicleId{0});
      lag += x * prev;
      sq += prev * prev;
      prev = x;
      CHECK(silent.sample(VehicleId{0}) == 0.0);
    }
    CHECK(std::abs(lag / sq) < 0.02);
  }

  TEST_CASE("uniform ring at equilibrium is a fixed point") {
    auto w = uniform_ring(22, 230, 0.0);
    const double v = w.vehicles().front().speed;
    const double x0 = w.vehicles()[3].arc;
    w.step();
    for (const auto& s : w.vehicles()) CHECK(std::abs(s.speed - v) < 1e-9);
    CHECK(std::abs(w.vehicles()[3].arc - (x0 + v * 0.1)) < 1e-9);
  }

  TEST_CASE("single vehicle starts from rest on an open road") {
    World w(std::make_shared<const NetworkSpec>(build_merge(600, 100, 30)), {}, 1);
    w.add_vehicle(vehicle(0, 0, 0, VehicleKind::cav));
    w.step();
    CHECK(w.vehicles()[0].speed == doctest::Approx(0.1));
    CHECK(w.vehicles()[0].arc == doctest::Approx(0.01));
  }

  TEST_CASE("vehicles leave at the sink") {
    World w(std::make_shared<const NetworkSpec>(build_merge(600, 100, 30)), {}, 1);
    w.add_vehicle(vehicle(0, 599.5, 20, VehicleKind::cav));
    w.step();
    CHECK(w.vehicles().empty());
    REQUIRE(w.exited().size() == 1);
    CHECK(w.exited()[0] == VehicleId{0});
  }

  TEST_CASE("seeded runs are bit-identical") {
    auto a = uniform_ring(22, 230, 0.2, 9), b = uniform_ring(22, 230, 0.2, 9), c = uniform_ring(22, 230, 0.2, 10);
    for (int i = 0; i < 100; ++i) {
      a.step();
      b.step();
      c.step();
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a.vehicles().size(); ++i) {
      CHECK(a.vehicles()[i].arc == b.vehicles()[i].arc);
      CHECK(a.vehicles()[i].speed == b.vehicles()[i].speed);
      any_diff |= a.vehicles()[i].speed != c.vehicles()[i].speed;
    }
    CHECK(any_diff);
  }

  TEST_CASE("cavs are noise free") {
    DynamicsSettings s;
    s.noise_std = 5.0;
    World w(ring(1000), s, 3);
    auto v = vehicle(0, 0, 10, VehicleKind::cav);
    v.params.v0 = 10;
    w.add_vehicle(v);
    for (int i = 0; i < 50; ++i) w.step();
    // At v = v0 with a leader 995 m ahead the IDM acceleration is nearly zero.
    CHECK(w.vehicles()[0].speed == doctest::Approx(10.0).epsilon(1e-3));
  }

  TEST_CASE("new parameters apply from the next step") {
    auto w = uniform_ring(10, 230, 0.0);
    auto p = kHuman;
    p.v0 = 1.0;
    w.set_params(VehicleId{4}, p);
    w.set_params(VehicleId{4}, p);
    CHECK(w.find(VehicleId{4})->params == p);
    const double before = w.find(VehicleId{4})->speed;
    w.step();
    CHECK(w.find(VehicleId{4})->speed < before);
    CHECK(w.find(VehicleId{5})->speed == doctest::Approx(before));
    CHECK_THROWS_AS(w.set_params(VehicleId{77}, p), InvalidArgument);
    p.v0 = 0.0;
    CHECK_THROWS_AS(w.set_params(VehicleId{4}, p), InvalidArgument);
  }

  TEST_CASE("add_vehicle validation") {
    World w(ring(), {}, 1);
    w.add_vehicle(vehicle(0, 10, 0));
    CHECK_THROWS_AS(w.add_vehicle(vehicle(0, 50, 0)), InvalidArgument);
    CHECK_THROWS_AS(w.add_vehicle(vehicle(1, 50, -1)), InvalidArgument);
  }

  TEST_CASE("overlapping state raises a collision and leaves the world unchanged") {
    World w(ring(), {}, 1);
    w.add_vehicle(vehicle(0, 0, 5));
    w.add_vehicle(vehicle(1, 3, 5));
    const auto before = w.vehicles();
    CHECK_THROWS_AS(w.step(), CollisionError);
    CHECK(w.step_index() == 0);
    CHECK(w.vehicles()[0].arc == before[0].arc);
    CHECK(w.vehicles()[1].speed == before[1].speed);
  }

  TEST_CASE("failsafe keeps every gap and speed non-negative") {
    // A fast platoon runs into a stopped queue on a ring.
    DynamicsSettings s;
    s.noise_std = 1.0;
    World w(ring(400), s, 5);
    for (int i = 0; i < 10; ++i) w.add_vehicle(vehicle(static_cast<std::uint32_t>(i), i * 8.0, 0.0));
    for (int i = 10; i < 20; ++i) {
      auto v = vehicle(static_cast<std::uint32_t>(i), 150 + (i - 10) * 20.0, 25.0);
      v.params.T = 0.3;
      v.params.b = 0.5;
      w.add_vehicle(v);
    }
    for (int k = 0; k < 3000; ++k) {
      w.step();
      for (std::size_t i = 0; i < w.vehicles().size(); ++i) {
        CHECK(w.vehicles()[i].speed >= 0.0);
        CHECK(w.leader(i)->gap > 0.0);
      }
    }
  }

  TEST_CASE("figure-eight crossing is served first come, first served") {
    auto net = std::make_shared<const NetworkSpec>(build_figure_eight(30, 30));
    World w(net, {}, 8);
    const double L = net->route_length(0);
    for (int i = 0; i < 14; ++i) w.add_vehicle(vehicle(static_cast<std::uint32_t>(i), i * L / 14, 5.0));
    const auto& c = net->conflict_points().front();
    const auto approach_of_arc = [&](double from, double to) -> int {
      for (int a = 0; a < 2; ++a) {
        const double p = c.locations[static_cast<std::size_t>(a)].arc;
        const double before = *net->arc_distance(0, from, p);
        const double travelled = *net->arc_distance(0, from, to);
        if (before > 0.0 && before <= travelled) return a;
      }
      return -1;
    };
    // Vehicles placed inside the stop offset at t = 0 are let through.
    for (int k = 0; k < 50; ++k) w.step();
    int crossings = 0;
    for (int k = 0; k < 3000; ++k) {
      std::vector<double> before;
      for (const auto& v : w.vehicles()) before.push_back(v.arc);
      // Whoever crosses this step must have been at the head of its approach
      // with nothing from the other approach queued in front of it.
      const auto queue = w.conflict_queues().front();
      w.step();
      int seen[2] = {0, 0};
      for (std::size_t i = 0; i < w.vehicles().size(); ++i) {
        const int a = approach_of_arc(before[i], w.vehicles()[i].arc);
        if (a < 0) continue;
        ++seen[a];
        ++crossings;
        for (const auto& e : queue) {
          if (e.vehicle == w.vehicles()[i].id) break;
          CHECK(static_cast<int>(e.approach) == a);
        }
      }
      CHECK((seen[0] == 0 || seen[1] == 0));
    }
    CHECK(crossings > 28);
  }

  TEST_CASE("idm params validation") {
    auto p = kHuman;
    CHECK_NOTHROW(p.validate());
    p.delta = 0.5;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = kHuman;
    p.T = 0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = kHuman;
    p.s0 = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
  }
}
