#include "accsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace accsim {

namespace {

// Index i such that axis[i] <= x <= axis[i+1], plus the fractional position.
std::pair<std::size_t, double> bracket(std::span<const double> axis, double x) {
  if (x <= axis.front()) return {0, 0.0};
  if (x >= axis.back()) return {axis.size() - 2, 1.0};
  auto it = std::upper_bound(axis.begin(), axis.end(), x);
  auto i = static_cast<std::size_t>(std::distance(axis.begin(), it)) - 1;
  return {i, (x - axis[i]) / (axis[i + 1] - axis[i])};
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void VehicleParams::validate() const {
  require(mass > 0 && frontal_area > 0 && drag_coeff > 0 && rolling_coeff > 0 &&
              wheel_radius > 0 && air_density > 0 && gravity > 0,
          "vehicle parameters must be strictly positive");
}

double TorqueCurve::at(double engine_speed) const {
  if (engine_speed > speed.back()) return 0.0;
  if (engine_speed <= speed.front()) return torque.front();
  auto [i, frac] = bracket(speed, engine_speed);
  return torque[i] + frac * (torque[i + 1] - torque[i]);
}

double TorqueCurve::peak() const { return *std::max_element(torque.begin(), torque.end()); }

double FuelMap::max_rate() const { return *std::max_element(rate.begin(), rate.end()); }

void FuelMap::validate() const {
  require(speed_axis.size() >= 2 && torque_axis.size() >= 2, "fuel map needs a 2x2 grid or larger");
  require(rate.size() == speed_axis.size() * torque_axis.size(), "fuel map size mismatch");
  require(std::is_sorted(speed_axis.begin(), speed_axis.end()) &&
              std::adjacent_find(speed_axis.begin(), speed_axis.end()) == speed_axis.end(),
          "fuel map speed axis must be strictly increasing");
  require(std::is_sorted(torque_axis.begin(), torque_axis.end()) &&
              std::adjacent_find(torque_axis.begin(), torque_axis.end()) == torque_axis.end(),
          "fuel map torque axis must be strictly increasing");
  require(std::all_of(rate.begin(), rate.end(), [](double r) { return r >= 0.0; }) &&
              idle_rate >= 0.0,
          "fuel map must be non-negative");
}

double Drivetrain::overall_ratio(int gear) const {
  if (gear < 1 || gear > gears()) {
    throw std::out_of_range("gear " + std::to_string(gear) + " out of range");
  }
  return gear_ratios[static_cast<std::size_t>(gear - 1)] * final_drive;
}

double Drivetrain::brake_torque_floor(const VehicleParams& params) const {
  return -params.mass * params.gravity * brake_decel_g * params.wheel_radius;
}

double Drivetrain::envelope_max_wheel_torque() const {
  return torque_limit.peak() * overall_ratio(1) * efficiency;
}

void Drivetrain::validate() const {
  require(!gear_ratios.empty(), "drivetrain needs at least one gear");
  for (std::size_t i = 1; i < gear_ratios.size(); ++i) {
    require(gear_ratios[i] < gear_ratios[i - 1], "gear ratios must be strictly decreasing");
  }
  require(gear_ratios.back() > 0 && final_drive > 0, "ratios must be positive");
  require(efficiency > 0 && efficiency <= 1, "driveline efficiency must lie in (0, 1]");
  require(idle_speed > 0 && max_speed > idle_speed, "engine speed limits inconsistent");
  require(brake_decel_g > 0, "brake authority must be positive");
  require(torque_limit.speed.size() >= 2 && torque_limit.speed.size() == torque_limit.torque.size(),
          "torque curve malformed");
  require(std::all_of(torque_limit.torque.begin(), torque_limit.torque.end(),
                      [](double t) { return t > 0.0; }),
          "full-load torque must be positive at every sample");
  fuel_map.validate();
}

FuelMap make_willans_map(const WillansModel& model, double speed_lo, double speed_hi,
                         double torque_hi) {
  FuelMap map;
  const int n = model.grid_points;
  require(n >= 2, "fuel map grid needs at least 2 points per axis");
  for (int i = 0; i < n; ++i) {
    double s = static_cast<double>(i) / (n - 1);
    map.speed_axis.push_back(speed_lo + s * (speed_hi - speed_lo));
    map.torque_axis.push_back(s * torque_hi);
  }
  map.rate.reserve(static_cast<std::size_t>(n * n));
  for (double w : map.speed_axis) {
    for (double t : map.torque_axis) {
      map.rate.push_back((model.friction * w + model.indicated * w * t) / model.lhv);
    }
  }
  map.idle_rate = model.friction * speed_lo / model.lhv;
  return map;
}

Drivetrain reference_drivetrain(const WillansModel& fuel) {
  Drivetrain dt;
  constexpr int kGears = 10;
  for (int i = 0; i < kGears; ++i) {
    dt.gear_ratios.push_back(12.0 * std::pow(0.78 / 12.0, static_cast<double>(i) / (kGears - 1)));
  }
  dt.torque_limit.speed = {600.0 * kRadPerSecPerRpm, 1000.0 * kRadPerSecPerRpm,
                           1800.0 * kRadPerSecPerRpm, 2200.0 * kRadPerSecPerRpm};
  dt.torque_limit.torque = {700.0, 1100.0, 1100.0, 800.0};
  dt.fuel_map = make_willans_map(fuel, dt.idle_speed, dt.max_speed, dt.torque_limit.peak());
  return dt;
}

double resistance_force(double host_velocity, const VehicleParams& params, double grade) {
  const double aero =
      0.5 * params.air_density * params.frontal_area * params.drag_coeff * host_velocity * host_velocity;
  const double weight = params.mass * params.gravity;
  return aero + weight * params.rolling_coeff * std::cos(grade) + weight * std::sin(grade);
}

double raw_engine_speed(double host_velocity, int gear, const Drivetrain& dt,
                        const VehicleParams& params) {
  return host_velocity / params.wheel_radius * dt.overall_ratio(gear);
}

EnginePoint engine_point(double wheel_torque, double host_velocity, int gear, const Drivetrain& dt,
                         const VehicleParams& params) {
  const double ratio = dt.overall_ratio(gear);
  return {std::max(dt.idle_speed, host_velocity / params.wheel_radius * ratio),
          wheel_torque / (ratio * dt.efficiency)};
}

double wheel_torque_of(double engine_torque, int gear, const Drivetrain& dt) {
  return engine_torque * dt.overall_ratio(gear) * dt.efficiency;
}

double max_wheel_torque(double host_velocity, int gear, const Drivetrain& dt,
                        const VehicleParams& params) {
  const double w = std::max(dt.idle_speed, raw_engine_speed(host_velocity, gear, dt, params));
  return wheel_torque_of(dt.torque_limit.at(w), gear, dt);
}

double fuel_rate(double engine_speed, double engine_torque, const Drivetrain& dt) {
  const FuelMap& m = dt.fuel_map;
  if (engine_torque <= 0.0) return m.idle_rate;
  auto [i, fs] = bracket(m.speed_axis, engine_speed);
  auto [j, ft] = bracket(m.torque_axis, engine_torque);
  const double lo = m.node(i, j) + ft * (m.node(i, j + 1) - m.node(i, j));
  const double hi = m.node(i + 1, j) + ft * (m.node(i + 1, j + 1) - m.node(i + 1, j));
  return lo + fs * (hi - lo);
}

double host_acceleration(double host_velocity, double wheel_torque, const VehicleParams& params,
                         double grade) {
  return wheel_torque / (params.wheel_radius * params.mass) -
         resistance_force(host_velocity, params, grade) / params.mass;
}

VehicleState step(const VehicleState& state, double wheel_torque, GearChange gear_change,
                  double lead_accel, double dt_s, const VehicleParams& params,
                  const Drivetrain& drivetrain) {
  if (!(dt_s > 0.0)) throw std::invalid_argument("step: dt must be positive");
  if (!std::isfinite(wheel_torque) || !std::isfinite(lead_accel) ||
      !std::isfinite(state.separation) || !std::isfinite(state.host_velocity) ||
      !std::isfinite(state.lead_velocity)) {
    throw std::invalid_argument("step: non-finite input");
  }
  const VehicleParams p = params.with_mass(state.mass);

  VehicleState next = state;
  next.gear = std::clamp(state.gear + static_cast<int>(gear_change), 1, drivetrain.gears());

  const EnginePoint ep = engine_point(wheel_torque, state.host_velocity, next.gear, drivetrain, p);
  next.fuel_used += fuel_rate(ep.speed, ep.torque, drivetrain) * dt_s;

  const double a_h = host_acceleration(state.host_velocity, wheel_torque, p, state.grade);
  next.host_velocity = std::max(0.0, state.host_velocity + a_h * dt_s);
  next.lead_velocity = std::max(0.0, state.lead_velocity + lead_accel * dt_s);
  next.separation = state.separation + (next.lead_velocity - next.host_velocity) * dt_s;
  next.host_distance = state.host_distance + next.host_velocity * dt_s;
  next.time = state.time + dt_s;
  return next;
}

}  // namespace accsim
