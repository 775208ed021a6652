#pragma once

// Exponential control barrier function for the gap constraint z >= z0.
//
// The barrier h = z - z0 has relative degree two with respect to wheel
// torque, so the filter works on the virtual double integrator
//   d/dt [h, h_dot] = [h_dot, mu],   mu = a_l + F_r/m - T/(m r_w),
// and requires mu >= -k1*h - k2*h_dot. Gains are certified offline by
// rolling the saturated virtual system forward from a worst-case state.

#include <string>
#include <vector>

#include "accsim/dynamics.hpp"

namespace accsim {

struct EcbfGains {
  double k1 = 0.2;  // 1/s^2
  double k2 = 5.0;  // 1/s

  /// s^2 + k2 s + k1 is Hurwitz iff both coefficients are positive.
  [[nodiscard]] bool hurwitz() const { return k1 > 0.0 && k2 > 0.0; }
};

/// Feasible virtual inputs. Larger torque gives smaller mu, so
/// at_tmax <= at_tmin.
struct MuBounds {
  double at_tmax = 0.0;
  double at_tmin = 0.0;
};

struct VirtualState {
  double h = 0.0;
  double h_dot = 0.0;
};

/// Recipe for the worst case the gains must survive: heaviest truck at
/// top speed on the steepest descent, lead braking as hard as it can.
struct WorstCase {
  double host_speed = 30.0;    // m/s
  double lead_speed = 30.0;    // m/s
  double lead_decel = 8.0;     // m/s^2, magnitude
  double grade = -0.06;        // rise over run, negative is downhill
  double mass = 10000.0;       // kg
  double initial_margin = 0.5; // h at t = 0, m
};

struct EcbfConfig {
  EcbfGains gains;
  double z0 = 10.0;               // reported minimum gap, m
  double filter_margin = 3.0;     // v_max * env dt added to z0 inside the filter, m
  double cert_dt = 0.05;          // s
  double cert_horizon = 120.0;    // s
  double converge_tol_h = 0.01;   // m
  double converge_tol_hdot = 0.01;// m/s
  MuBounds extreme;               // filled from a WorstCase
  bool certified = false;         // set only by certify()
};

struct CertificationSample {
  double t = 0.0;
  double h = 0.0;
  double h_dot = 0.0;
  double mu = 0.0;            // feedback before saturation
  double mu_saturated = 0.0;  // what was applied over the next interval
};

struct CertificationResult {
  bool certified = false;
  std::string reason;
  double min_h = 0.0;
  std::vector<CertificationSample> trace;
};

VirtualState barrier(const VehicleState& state, double z0);

MuBounds mu_bounds(double host_velocity, double lead_accel, const VehicleParams& params,
                   double grade, double t_min, double t_max);

/// Exact zero-order-hold propagation of the double integrator.
VirtualState virtual_step(const VirtualState& eta, double mu, double dt);

VirtualState extreme_state(const WorstCase& wc);
MuBounds extreme_mu_bounds(const WorstCase& wc, const VehicleParams& params,
                           const Drivetrain& drivetrain);

/// Saturated rollout of the virtual system. Throws std::invalid_argument on
/// non-positive cert_dt or horizon. Non-Hurwitz gains are rejected without a
/// rollout (certified = false, empty trace).
CertificationResult verify_gains(const EcbfConfig& cfg, const VirtualState& eta_extreme);

/// Returns cfg with `extreme` filled in and `certified` set from the verdict.
EcbfConfig certify(EcbfConfig cfg, const WorstCase& wc, const VehicleParams& params,
                   const Drivetrain& drivetrain, CertificationResult* result = nullptr);

struct TorqueLimits {
  double min = 0.0;
  double max = 0.0;
};

struct FilterResult {
  double torque = 0.0;       // T_t applied at the wheels
  double safe_bound = 0.0;   // largest torque satisfying the barrier constraint
  bool intervened = false;
};

/// Largest wheel torque satisfying mu >= -k1 h - k2 h_dot, with h measured
/// from z0 + filter_margin.
double safe_torque_bound(const VehicleState& state, double lead_accel, const EcbfConfig& cfg,
                         const VehicleParams& params);

/// Minimal-change projection of the proposed torque: closed-form solution of
/// the one-dimensional QP, torque limits applied after the barrier.
/// Throws std::logic_error for uncertified gains, std::invalid_argument for NaN.
FilterResult filter_torque(const VehicleState& state, double proposed, double lead_accel,
                           const EcbfConfig& cfg, const VehicleParams& params,
                           TorqueLimits limits);

}  // namespace accsim
