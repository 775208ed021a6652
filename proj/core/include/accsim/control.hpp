#pragma once

// Reward terms for the two driving tasks, the shaping penalty used by the
// unfiltered comparison agent, and the PID baseline with fuel-optimal gears.

#include <optional>

#include "accsim/dynamics.hpp"
#include "accsim/observation.hpp"

namespace accsim {

struct InRangeWeights {
  double gap = 0.325;
  double fuel = 0.175;
  double overspeed = 0.35;
  double torque = 0.075;
  double gear = 0.075;
  [[nodiscard]] double sum() const { return gap + fuel + overspeed + torque + gear; }
};

struct OutOfRangeWeights {
  double speed = 0.675;
  double fuel = 0.175;
  double torque = 0.075;
  double gear = 0.075;
  [[nodiscard]] double sum() const { return speed + fuel + torque + gear; }
};

struct RewardNormalizers {
  double relative_speed = 30.0;  // m/s
  double fuel_rate = 12.5;       // g/s; set to the fuel-map maximum at load time
  double engine_torque = 1100.0; // N*m; engine peak
  double gear_change = 1.0;
  double sensor_range = 350.0;   // m
};

struct ShapingPenalties {
  double near = -1.0;   // closer than z0
  double crash = -10.0; // z <= 0
};

struct RewardWeights {
  InRangeWeights in_range;
  OutOfRangeWeights out_of_range;
  RewardNormalizers norm;
  ShapingPenalties shaping;

  void validate() const;
};

/// Per-decision quantities that the reward penalises.
struct RewardInputs {
  double fuel_rate = 0.0;             // g/s, mean over the decision interval
  double engine_torque_change = 0.0;  // N*m
  int gear_change = 0;
};

double reward_out_of_range(const Observation& obs, const RewardInputs& in, const RewardWeights& w);
double reward_in_range(const Observation& obs, const RewardInputs& in, const RewardWeights& w);
/// Dispatches on obs.in_range.
double task_reward(const Observation& obs, const RewardInputs& in, const RewardWeights& w);
double shaping_penalty(double separation, double z0, const RewardWeights& w);

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
};

struct PidConfig {
  PidGains speed{2500.0, 250.0, 0.0};  // N*m per m/s error
  PidGains gap{500.0, 10.0, 3000.0};   // N*m per m error; kd acts on relative speed
  double integrator_limit = 20000.0;   // N*m contribution cap
  double time_gap = 1.8;               // s
  double standstill_gap = 5.0;         // m kept beyond z0 when stopped
  bool mass_scheduled = true;          // scale gains by mass / reference_mass
  double reference_mass = 9000.0;      // kg at which the gains apply unscaled
  double z0 = 10.0;                    // m

  void validate() const;
};

/// Two-phase PID: speed tracking out of range, gap regulation in range
/// (capped by the speed loop so the host never chases a lead past v_set).
class PidController {
 public:
  explicit PidController(PidConfig cfg) : cfg_(cfg) {}

  /// Torque request for this decision step, clamped to `limits`.
  double torque(const Observation& obs, double dt, double t_min, double t_max);
  void reset();

  [[nodiscard]] double speed_integral() const { return speed_.integral; }
  [[nodiscard]] double gap_integral() const { return gap_.integral; }

 private:
  struct Loop {
    double integral = 0.0;
    std::optional<double> prev_error;
  };
  struct Step {
    double output = 0.0;    // with the integrator advanced
    double integral = 0.0;  // advanced integrator state
  };
  Step propose(const Loop& loop, const PidGains& g, double error, double error_rate, double dt,
               double t_min, double t_max) const;

  PidConfig cfg_;
  Loop speed_;
  Loop gap_;
};

struct GearFeasibility {
  bool feasible = false;
  double speed_violation = 0.0;  // rad/s outside [idle, max]; 0 when inside
};

GearFeasibility gear_feasibility(double host_velocity, double wheel_torque, int gear,
                                 const Drivetrain& dt, const VehicleParams& params);

/// Gear with the lowest fuel rate at (v_h, T) among feasible gears; ties go
/// to the current gear, then to the higher gear. With no feasible gear, the
/// gear with the smallest engine-speed violation.
int best_gear(double host_velocity, double desired_torque, int current_gear, const Drivetrain& dt,
              const VehicleParams& params);

/// best_gear rate-limited to one shift per decision.
int pid_gear(double host_velocity, double desired_torque, int current_gear, const Drivetrain& dt,
             const VehicleParams& params);

}  // namespace accsim
