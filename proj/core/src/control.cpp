#include "accsim/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace accsim {

namespace {

double decay(double quantity, double normalizer) { return std::pow(0.1, quantity / normalizer); }

bool close_to_one(double x) { return std::abs(x - 1.0) < 1e-9; }

}  // namespace

void RewardWeights::validate() const {
  const double ws[] = {in_range.gap,        in_range.fuel,        in_range.overspeed,
                       in_range.torque,     in_range.gear,        out_of_range.speed,
                       out_of_range.fuel,   out_of_range.torque,  out_of_range.gear};
  for (double w : ws) {
    if (w < 0.0) throw std::invalid_argument("reward weights must be non-negative");
  }
  if (!close_to_one(in_range.sum()) || !close_to_one(out_of_range.sum())) {
    throw std::invalid_argument("each reward weight set must sum to 1");
  }
  if (!(norm.relative_speed > 0 && norm.fuel_rate > 0 && norm.engine_torque > 0 &&
        norm.gear_change > 0 && norm.sensor_range > 0)) {
    throw std::invalid_argument("reward normalizers must be positive");
  }
}

double reward_out_of_range(const Observation& obs, const RewardInputs& in, const RewardWeights& w) {
  const auto& ww = w.out_of_range;
  return ww.speed * decay(std::abs(obs.host_velocity - obs.set_speed), w.norm.relative_speed) +
         ww.fuel * decay(in.fuel_rate, w.norm.fuel_rate) +
         ww.torque * decay(std::abs(in.engine_torque_change), w.norm.engine_torque) +
         ww.gear * decay(std::abs(in.gear_change), w.norm.gear_change);
}

double reward_in_range(const Observation& obs, const RewardInputs& in, const RewardWeights& w) {
  const auto& ww = w.in_range;
  const double overspeed =
      obs.host_velocity <= obs.set_speed
          ? ww.overspeed
          : ww.overspeed * decay(obs.host_velocity - obs.set_speed, w.norm.relative_speed);
  // Summed in this order so the default weights add up to exactly 1.
  return ww.gap * decay(obs.separation, w.norm.sensor_range) + overspeed +
         ww.fuel * decay(in.fuel_rate, w.norm.fuel_rate) +
         ww.torque * decay(std::abs(in.engine_torque_change), w.norm.engine_torque) +
         ww.gear * decay(std::abs(in.gear_change), w.norm.gear_change);
}

double task_reward(const Observation& obs, const RewardInputs& in, const RewardWeights& w) {
  return obs.in_range ? reward_in_range(obs, in, w) : reward_out_of_range(obs, in, w);
}

double shaping_penalty(double separation, double z0, const RewardWeights& w) {
  if (separation <= 0.0) return w.shaping.crash;
  if (separation < z0) return w.shaping.near;
  return 0.0;
}

void PidConfig::validate() const {
  const double all[] = {speed.kp, speed.ki, speed.kd, gap.kp, gap.ki, gap.kd, integrator_limit};
  for (double g : all) {
    if (!std::isfinite(g)) throw std::invalid_argument("PID gains must be finite");
  }
  if (!(time_gap > 0.0)) throw std::invalid_argument("PID time gap must be positive");
  if (!(standstill_gap >= 0.0)) throw std::invalid_argument("PID standstill gap must be non-negative");
  if (!(reference_mass > 0.0)) throw std::invalid_argument("PID reference mass must be positive");
}

void PidController::reset() {
  speed_ = {};
  gap_ = {};
}

PidController::Step PidController::propose(const Loop& loop, const PidGains& g, double error,
                                           double error_rate, double dt, double t_min,
                                           double t_max) const {
  double integral = loop.integral + error * dt;
  const double unsat = g.kp * error + g.ki * integral + g.kd * error_rate;
  // Conditional integration: hold the integrator while saturated in the
  // direction the error pushes.
  const bool winding = (unsat > t_max && error > 0.0) || (unsat < t_min && error < 0.0);
  if (winding) integral = loop.integral;
  if (g.ki > 0.0) {
    const double cap = cfg_.integrator_limit / g.ki;
    integral = std::clamp(integral, -cap, cap);
  }
  return {g.kp * error + g.ki * integral + g.kd * error_rate, integral};
}

double PidController::torque(const Observation& obs, double dt, double t_min, double t_max) {
  if (!(dt > 0.0)) throw std::invalid_argument("PID: dt must be positive");
  const double scale = cfg_.mass_scheduled ? obs.mass / cfg_.reference_mass : 1.0;
  const auto scaled = [scale](const PidGains& g) { return PidGains{g.kp * scale, g.ki * scale, g.kd * scale}; };
  const double speed_err = obs.set_speed - obs.host_velocity;
  const double speed_rate = speed_.prev_error ? (speed_err - *speed_.prev_error) / dt : 0.0;
  const Step speed = propose(speed_, scaled(cfg_.speed), speed_err, speed_rate, dt, t_min, t_max);
  speed_.prev_error = speed_err;
  if (!obs.in_range) {
    gap_ = {};
    speed_.integral = speed.integral;
    return std::clamp(speed.output, t_min, t_max);
  }
  const double gap_err =
      obs.separation - cfg_.z0 - cfg_.standstill_gap - cfg_.time_gap * obs.host_velocity;
  // Derivative on the measured closing speed; differencing the gap error
  // would feed back host acceleration through the time-gap term.
  const Step gap = propose(gap_, scaled(cfg_.gap), gap_err, obs.relative_velocity, dt, t_min, t_max);
  gap_.prev_error = gap_err;
  // Min-select: only the loop in command integrates, the other holds.
  if (gap.output <= speed.output) {
    gap_.integral = gap.integral;
    return std::clamp(gap.output, t_min, t_max);
  }
  speed_.integral = speed.integral;
  return std::clamp(speed.output, t_min, t_max);
}

GearFeasibility gear_feasibility(double host_velocity, double wheel_torque, int gear,
                                 const Drivetrain& dt, const VehicleParams& params) {
  const double w = raw_engine_speed(host_velocity, gear, dt, params);
  double violation = 0.0;
  if (w > dt.max_speed) violation = w - dt.max_speed;
  // First gear may slip the clutch below idle; the others may not lug.
  if (w < dt.idle_speed && gear != 1) violation = dt.idle_speed - w;
  const EnginePoint ep = engine_point(wheel_torque, host_velocity, gear, dt, params);
  const bool torque_ok = ep.torque <= dt.torque_limit.at(ep.speed);
  return {violation == 0.0 && torque_ok, violation};
}

int best_gear(double host_velocity, double desired_torque, int current_gear, const Drivetrain& dt,
              const VehicleParams& params) {
  int best = 0;
  double best_rate = std::numeric_limits<double>::infinity();
  for (int g = 1; g <= dt.gears(); ++g) {
    if (!gear_feasibility(host_velocity, desired_torque, g, dt, params).feasible) continue;
    const EnginePoint ep = engine_point(desired_torque, host_velocity, g, dt, params);
    const double rate = fuel_rate(ep.speed, ep.torque, dt);
    const bool better = rate < best_rate ||
                        (rate == best_rate && best != current_gear &&
                         (g == current_gear || g > best));
    if (better) {
      best = g;
      best_rate = rate;
    }
  }
  if (best != 0) return best;

  // Nothing feasible: smallest speed violation, then most torque headroom.
  double best_violation = std::numeric_limits<double>::infinity();
  double best_headroom = -std::numeric_limits<double>::infinity();
  for (int g = 1; g <= dt.gears(); ++g) {
    const GearFeasibility f = gear_feasibility(host_velocity, desired_torque, g, dt, params);
    const double headroom = max_wheel_torque(host_velocity, g, dt, params) - desired_torque;
    if (f.speed_violation < best_violation ||
        (f.speed_violation == best_violation && headroom > best_headroom)) {
      best = g;
      best_violation = f.speed_violation;
      best_headroom = headroom;
    }
  }
  return best;
}

int pid_gear(double host_velocity, double desired_torque, int current_gear, const Drivetrain& dt,
             const VehicleParams& params) {
  const int target = best_gear(host_velocity, desired_torque, current_gear, dt, params);
  return std::clamp(target, current_gear - 1, current_gear + 1);
}

}  // namespace accsim
