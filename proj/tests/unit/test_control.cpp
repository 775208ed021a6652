#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "accsim/control.hpp"
#include "accsim/safety.hpp"

using namespace accsim;

namespace {

Observation out_of_range_obs(double v, double v_set) {
  Observation o;
  o.host_velocity = v;
  o.set_speed = v_set;
  o.separation = 400.0;
  o.in_range = false;
  return o;
}

double out_of_range_oracle(const Observation& o, const RewardInputs& in, const RewardWeights& w) {
  return 0.675 * std::pow(0.1, std::abs(o.host_velocity - o.set_speed) / w.norm.relative_speed) +
         0.175 * std::pow(0.1, in.fuel_rate / w.norm.fuel_rate) +
         0.075 * std::pow(0.1, std::abs(in.engine_torque_change) / w.norm.engine_torque) +
         0.075 * std::pow(0.1, std::abs(in.gear_change) / w.norm.gear_change);
}

// Independent rescan of the gear rule.
int gear_oracle(double v, double torque, int current, const Drivetrain& dt, const VehicleParams& p) {
  std::vector<int> feasible;
  std::vector<double> rates;
  for (int g = 1; g <= dt.gears(); ++g) {
    const double ratio = dt.gear_ratios[static_cast<std::size_t>(g - 1)] * dt.final_drive;
    const double w = v / p.wheel_radius * ratio;
    if (w > dt.max_speed) continue;
    if (g != 1 && w < dt.idle_speed) continue;
    const double we = std::max(w, dt.idle_speed);
    const double te = torque / (ratio * dt.efficiency);
    if (te > dt.torque_limit.at(we)) continue;
    feasible.push_back(g);
    rates.push_back(fuel_rate(we, te, dt));
  }
  if (feasible.empty()) return -1;
  const double lo = *std::min_element(rates.begin(), rates.end());
  int pick = 0;
  for (std::size_t i = 0; i < feasible.size(); ++i) {
    if (rates[i] != lo) continue;
    if (feasible[i] == current) return current;
    pick = std::max(pick, feasible[i]);
  }
  return pick;
}

}  // namespace

TEST_CASE("out-of-range reward") {
  RewardWeights w;
  SUBCASE("perfect tracking scores the weight sum") {
    CHECK(reward_out_of_range(out_of_range_obs(15, 15), {}, w) == 1.0);
  }
  SUBCASE("each penalty at its normalizer scales its term by 0.1") {
    const Observation o = out_of_range_obs(15, 15);
    CHECK(reward_out_of_range(out_of_range_obs(45, 15), {}, w) ==
          doctest::Approx(1.0 - 0.9 * 0.675).epsilon(1e-15));
    CHECK(reward_out_of_range(o, {w.norm.fuel_rate, 0, 0}, w) ==
          doctest::Approx(1.0 - 0.9 * 0.175).epsilon(1e-15));
    CHECK(reward_out_of_range(o, {0, w.norm.engine_torque, 0}, w) ==
          doctest::Approx(1.0 - 0.9 * 0.075).epsilon(1e-15));
    CHECK(reward_out_of_range(o, {0, 0, 1}, w) == doctest::Approx(1.0 - 0.9 * 0.075).epsilon(1e-15));
  }
  SUBCASE("random inputs match a re-evaluation of the formula") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const Observation o = out_of_range_obs(30 * u(rng), 25 * u(rng));
      const RewardInputs in{20 * u(rng), 3000 * (u(rng) - 0.5), static_cast<int>(3 * u(rng)) - 1};
      REQUIRE(std::abs(reward_out_of_range(o, in, w) - out_of_range_oracle(o, in, w)) < 1e-12);
    }
  }
}

TEST_CASE("in-range reward") {
  RewardWeights w;
  Observation o;
  o.in_range = true;
  o.set_speed = 15.0;
  o.host_velocity = 10.0;
  o.separation = 0.0;
  SUBCASE("zero gap, under set speed, no penalties") { CHECK(reward_in_range(o, {}, w) == 1.0); }
  SUBCASE("overspeed term is continuous at the set speed") {
    o.host_velocity = 15.0;
    const double at = reward_in_range(o, {}, w);
    CHECK(at == 1.0);
    o.host_velocity = std::nextafter(15.0, 100.0);
    CHECK(reward_in_range(o, {}, w) == doctest::Approx(at).epsilon(1e-15));
  }
  SUBCASE("gap at sensor range scales the gap term by 0.1") {
    o.separation = w.norm.sensor_range;
    CHECK(reward_in_range(o, {}, w) == doctest::Approx(1.0 - 0.9 * 0.325).epsilon(1e-15));
  }
  SUBCASE("every penalty strictly lowers the reward") {
    o.separation = 40.0;
    const double base = reward_in_range(o, {1.0, 10.0, 0}, w);
    Observation far = o;
    far.separation = 41.0;
    CHECK(reward_in_range(far, {1.0, 10.0, 0}, w) < base);
    CHECK(reward_in_range(o, {1.1, 10.0, 0}, w) < base);
    CHECK(reward_in_range(o, {1.0, 11.0, 0}, w) < base);
    CHECK(reward_in_range(o, {1.0, 10.0, 1}, w) < base);
    Observation fast = o;
    fast.host_velocity = 16.0;
    CHECK(reward_in_range(fast, {1.0, 10.0, 0}, w) < base);
  }
  SUBCASE("rewards stay inside (0, 1]") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      o.in_range = u(rng) < 0.5;
      o.separation = 350 * u(rng);
      o.host_velocity = 35 * u(rng);
      const double r = task_reward(o, {30 * u(rng), 5000 * u(rng), 1}, w);
      REQUIRE(r > 0.0);
      REQUIRE(r <= 1.0);
    }
  }
}

TEST_CASE("shaping penalty") {
  RewardWeights w;
  CHECK(shaping_penalty(11.0, 10.0, w) == 0.0);
  CHECK(shaping_penalty(5.0, 10.0, w) == -1.0);
  CHECK(shaping_penalty(-0.1, 10.0, w) == -10.0);
  CHECK(shaping_penalty(0.0, 10.0, w) == -10.0);
}

TEST_CASE("reward weights validate") {
  RewardWeights w;
  CHECK_NOTHROW(w.validate());
  w.in_range.gap = 0.4;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("PID torque") {
  SUBCASE("zero error gives zero torque") {
    PidController pid(PidConfig{});
    CHECK(pid.torque(out_of_range_obs(15, 15), 1.0, -1e5, 1e5) == 0.0);
  }
  SUBCASE("pure integrator accumulates ki * e * k * dt") {
    PidConfig cfg;
    cfg.speed = {0.0, 40.0, 0.0};
    cfg.integrator_limit = 1e9;
    PidController pid(cfg);
    const double e = 2.0;
    double t = 0.0;
    for (int k = 1; k <= 7; ++k) t = pid.torque(out_of_range_obs(13, 15), 0.5, -1e6, 1e6);
    CHECK(t == doctest::Approx(40.0 * e * 7 * 0.5).epsilon(1e-12));
  }
  SUBCASE("gains scale with mass when scheduled") {
    PidConfig cfg;
    cfg.speed = {100.0, 0.0, 0.0};
    PidController a(cfg);
    Observation o = out_of_range_obs(10, 15);
    o.mass = 4500.0;
    CHECK(a.torque(o, 1.0, -1e6, 1e6) == doctest::Approx(250.0));
    cfg.mass_scheduled = false;
    PidController b(cfg);
    CHECK(b.torque(o, 1.0, -1e6, 1e6) == doctest::Approx(500.0));
  }
  SUBCASE("output saturates and the integrator holds") {
    PidController pid(PidConfig{});
    for (int i = 0; i < 50; ++i) CHECK(pid.torque(out_of_range_obs(0, 25), 1.0, -1e4, 1e4) == 1e4);
    CHECK(pid.speed_integral() == 0.0);
  }
  SUBCASE("in range the gap loop commands a stop behind a stopped lead") {
    PidController pid(PidConfig{});
    Observation o;
    o.in_range = true;
    o.set_speed = 15.0;
    o.host_velocity = 10.0;
    o.relative_velocity = -10.0;
    o.separation = 30.0;
    CHECK(pid.torque(o, 1.0, -4e4, 4e4) < 0.0);
  }
}

TEST_CASE("PID step response reaches the set speed") {
  VehicleParams p;
  Drivetrain dt = reference_drivetrain();
  PidController pid(PidConfig{});
  VehicleState s;
  s.separation = 1000.0;
  const double v_set = 15.0;
  const TorqueLimits lim{dt.brake_torque_floor(p), dt.envelope_max_wheel_torque()};
  double reached = -1.0;
  for (int k = 0; k < 120; ++k) {
    Observation o = out_of_range_obs(s.host_velocity, v_set);
    o.gear = s.gear;
    const double torque = pid.torque(o, 1.0, lim.min, lim.max);
    const int gear = pid_gear(s.host_velocity, torque, s.gear, dt, p);
    const auto change = static_cast<GearChange>(gear - s.gear);
    for (int j = 0; j < 10; ++j) {
      const double cap = max_wheel_torque(s.host_velocity, gear, dt, p);
      s = step(s, std::min(torque, cap), j == 0 ? change : GearChange::Hold, 0.0, 0.1, p, dt);
    }
    if (reached < 0 && std::abs(s.host_velocity - v_set) < 0.05 * v_set) reached = s.time;
  }
  CHECK(reached > 0.0);
  CHECK(reached < 60.0);
  CHECK(std::abs(s.host_velocity - v_set) < 0.05 * v_set);
}

TEST_CASE("gear selection") {
  VehicleParams p;
  Drivetrain dt = reference_drivetrain();
  SUBCASE("best gear equals an independent rescan") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> v(0.0, 33.0);
    std::uniform_real_distribution<double> t(-20000.0, 40000.0);
    std::uniform_int_distribution<int> g(1, 10);
    int checked = 0;
    for (int i = 0; i < 20000; ++i) {
      const double vs = v(rng);
      const double ts = t(rng);
      const int cur = g(rng);
      const int ref = gear_oracle(vs, ts, cur, dt, p);
      if (ref < 0) continue;
      ++checked;
      REQUIRE(best_gear(vs, ts, cur, dt, p) == ref);
    }
    CHECK(checked > 10000);
  }
  SUBCASE("ties go to the current gear, then the higher gear") {
    Drivetrain flat = dt;
    std::fill(flat.fuel_map.rate.begin(), flat.fuel_map.rate.end(), 1.0);
    flat.fuel_map.idle_rate = 1.0;
    const double v = 12.0;
    int hi = 0;
    for (int gg = 1; gg <= 10; ++gg) {
      if (gear_feasibility(v, 1000.0, gg, flat, p).feasible) hi = gg;
    }
    REQUIRE(hi > 1);
    CHECK(best_gear(v, 1000.0, hi - 1, flat, p) == hi - 1);
    CHECK(best_gear(v, 1000.0, 1, flat, p) == (gear_feasibility(v, 1000.0, 1, flat, p).feasible ? 1 : hi));
  }
  SUBCASE("only one feasible gear") {
    // At 32 m/s only the top gears keep the engine under the governor; a
    // large request leaves a single one with enough torque.
    int count = 0;
    int only = 0;
    double torque = 0.0;
    for (double t = 1000.0; t < 40000.0 && count != 1; t += 250.0) {
      count = 0;
      for (int gg = 1; gg <= 10; ++gg) {
        if (gear_feasibility(32.0, t, gg, dt, p).feasible) {
          ++count;
          only = gg;
        }
      }
      torque = t;
    }
    REQUIRE(count == 1);
    CHECK(best_gear(32.0, torque, 10, dt, p) == only);
  }
  SUBCASE("pid gear is rate limited and stays feasible when possible") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> v(1.0, 30.0);
    std::uniform_real_distribution<double> t(0.0, 20000.0);
    for (int i = 0; i < 2000; ++i) {
      const double vs = v(rng);
      const double ts = t(rng);
      const int best = best_gear(vs, ts, 5, dt, p);
      const int g = pid_gear(vs, ts, 5, dt, p);
      CHECK(std::abs(g - 5) <= 1);
      if (std::abs(best - 5) <= 1 && gear_oracle(vs, ts, 5, dt, p) > 0) {
        CHECK(gear_feasibility(vs, ts, g, dt, p).feasible);
      }
    }
  }
}
