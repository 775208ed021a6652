#pragma once

// Longitudinal two-vehicle plant: host truck with a stepped transmission
// following a lead vehicle whose acceleration is an exogenous input.

#include <span>
#include <vector>

namespace accsim {

inline constexpr double kRadPerSecPerRpm = 0.10471975511965977;

struct VehicleParams {
  double mass = 9000.0;          // kg
  double frontal_area = 7.71;    // m^2
  double drag_coeff = 0.08;
  double rolling_coeff = 0.015;
  double wheel_radius = 0.498;   // m
  double air_density = 1.225;    // kg/m^3
  double gravity = 9.81;         // m/s^2

  void validate() const;
  [[nodiscard]] VehicleParams with_mass(double m) const {
    VehicleParams p = *this;
    p.mass = m;
    return p;
  }
};

/// Piecewise-linear full-load curve T_e,max(w_e). Zero above the last
/// breakpoint (governor cut-off), held at the first value below it.
struct TorqueCurve {
  std::vector<double> speed;   // rad/s, strictly increasing
  std::vector<double> torque;  // N*m

  [[nodiscard]] double at(double engine_speed) const;
  [[nodiscard]] double peak() const;
};

/// Fuel-rate grid, row-major over (speed, torque).
struct FuelMap {
  std::vector<double> speed_axis;   // rad/s
  std::vector<double> torque_axis;  // N*m
  std::vector<double> rate;         // g/s, size speed_axis.size() * torque_axis.size()
  double idle_rate = 0.0;           // g/s, used for T_e <= 0

  [[nodiscard]] double node(std::size_t i, std::size_t j) const {
    return rate[i * torque_axis.size() + j];
  }
  [[nodiscard]] double max_rate() const;
  void validate() const;
};

/// Coefficients of the affine (Willans) fuel model used to synthesise a map:
/// mdot = (friction * w + indicated * w * T) / lhv.
struct WillansModel {
  double friction = 190.0;   // N*m equivalent friction, scaled by 1/eta_indicated
  double indicated = 2.38;   // 1/eta_indicated
  double lhv = 42600.0;      // J/g
  int grid_points = 20;
};

struct Drivetrain {
  std::vector<double> gear_ratios;  // descending, gear 1 first
  double final_drive = 3.9;
  double efficiency = 0.95;
  double idle_speed = 600.0 * kRadPerSecPerRpm;
  double max_speed = 2200.0 * kRadPerSecPerRpm;
  double brake_decel_g = 0.9;  // service-brake authority as a fraction of g
  TorqueCurve torque_limit;
  FuelMap fuel_map;

  [[nodiscard]] int gears() const { return static_cast<int>(gear_ratios.size()); }
  [[nodiscard]] double overall_ratio(int gear) const;
  /// Most negative wheel torque available (service brakes), N*m.
  [[nodiscard]] double brake_torque_floor(const VehicleParams& params) const;
  /// Largest tractive wheel torque over all gears (gear-independent envelope).
  [[nodiscard]] double envelope_max_wheel_torque() const;
  void validate() const;
};

/// Reference 10-speed AMT: geometric ratios 12.0 -> 0.78, 1100 N*m plateau,
/// Willans-line fuel map on a 20x20 grid.
Drivetrain reference_drivetrain(const WillansModel& fuel = {});
FuelMap make_willans_map(const WillansModel& model, double speed_lo, double speed_hi,
                         double torque_hi);

struct VehicleState {
  double separation = 0.0;     // z, m
  double host_velocity = 0.0;  // m/s
  double lead_velocity = 0.0;  // m/s
  int gear = 1;
  double mass = 9000.0;        // kg
  double grade = 0.0;          // rad
  double fuel_used = 0.0;      // g
  double time = 0.0;           // s
  double host_distance = 0.0;  // m
};

enum class GearChange : int { Down = -1, Hold = 0, Up = 1 };

struct EnginePoint {
  double speed = 0.0;   // rad/s
  double torque = 0.0;  // N*m
};

/// Aerodynamic + rolling + grade resistance at the wheels, N.
double resistance_force(double host_velocity, const VehicleParams& params, double grade);

/// Engine speed before the idle floor is applied.
double raw_engine_speed(double host_velocity, int gear, const Drivetrain& dt,
                        const VehicleParams& params);
EnginePoint engine_point(double wheel_torque, double host_velocity, int gear, const Drivetrain& dt,
                         const VehicleParams& params);
/// Inverse of the torque half of engine_point.
double wheel_torque_of(double engine_torque, int gear, const Drivetrain& dt);
/// Tractive limit at the wheels for the given gear and speed.
double max_wheel_torque(double host_velocity, int gear, const Drivetrain& dt,
                        const VehicleParams& params);

/// Bilinear lookup, clamped to the grid; T_e <= 0 returns the idle rate.
double fuel_rate(double engine_speed, double engine_torque, const Drivetrain& dt);

/// Host acceleration from Newton's law, m/s^2.
double host_acceleration(double host_velocity, double wheel_torque, const VehicleParams& params,
                         double grade);

/// One semi-implicit Euler step. Velocities first, then separation from the
/// updated velocities. Throws std::invalid_argument on dt <= 0 or NaN input.
VehicleState step(const VehicleState& state, double wheel_torque, GearChange gear_change,
                  double lead_accel, double dt_s, const VehicleParams& params,
                  const Drivetrain& drivetrain);

}  // namespace accsim
