#include "accsim/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace accsim {

VirtualState barrier(const VehicleState& state, double z0) {
  return {state.separation - z0, state.lead_velocity - state.host_velocity};
}

MuBounds mu_bounds(double host_velocity, double lead_accel, const VehicleParams& params,
                   double grade, double t_min, double t_max) {
  const double base = lead_accel + resistance_force(host_velocity, params, grade) / params.mass;
  const double scale = params.mass * params.wheel_radius;
  return {base - t_max / scale, base - t_min / scale};
}

VirtualState virtual_step(const VirtualState& eta, double mu, double dt) {
  // F is nilpotent, so exp(F dt) = I + F dt and the input integral is exact.
  return {eta.h + eta.h_dot * dt + 0.5 * mu * dt * dt, eta.h_dot + mu * dt};
}

VirtualState extreme_state(const WorstCase& wc) {
  return {wc.initial_margin, wc.lead_speed - wc.host_speed};
}

MuBounds extreme_mu_bounds(const WorstCase& wc, const VehicleParams& params,
                           const Drivetrain& drivetrain) {
  const VehicleParams p = params.with_mass(wc.mass);
  return mu_bounds(wc.host_speed, -std::abs(wc.lead_decel), p, std::atan(wc.grade),
                   drivetrain.brake_torque_floor(p), drivetrain.envelope_max_wheel_torque());
}

CertificationResult verify_gains(const EcbfConfig& cfg, const VirtualState& eta_extreme) {
  if (!(cfg.cert_dt > 0.0)) throw std::invalid_argument("verify_gains: cert_dt must be positive");
  if (!(cfg.cert_horizon > 0.0)) {
    throw std::invalid_argument("verify_gains: certification horizon must be positive");
  }
  CertificationResult out;
  if (!cfg.gains.hurwitz()) {
    out.reason = "gains are not Hurwitz (k1 and k2 must both be positive)";
    out.min_h = eta_extreme.h;
    return out;
  }
  const double lo = cfg.extreme.at_tmax;
  const double hi = cfg.extreme.at_tmin;
  const auto feedback = [&](const VirtualState& e) {
    return -cfg.gains.k1 * e.h - cfg.gains.k2 * e.h_dot;
  };

  const auto steps = static_cast<long>(std::llround(cfg.cert_horizon / cfg.cert_dt));
  out.trace.reserve(static_cast<std::size_t>(steps) + 1);
  VirtualState eta = eta_extreme;
  double mu = feedback(eta);
  double min_h = std::numeric_limits<double>::infinity();
  for (long n = 0; n <= steps; ++n) {
    const double mu_sat = std::clamp(mu, lo, hi);
    out.trace.push_back({static_cast<double>(n) * cfg.cert_dt, eta.h, eta.h_dot, mu, mu_sat});
    if (n == steps) break;
    eta = virtual_step(eta, mu_sat, cfg.cert_dt);
    mu = feedback(eta);
    min_h = std::min(min_h, eta.h);
  }
  out.min_h = min_h;

  const bool positive = min_h > 0.0;
  const bool converged =
      std::abs(eta.h) < cfg.converge_tol_h && std::abs(eta.h_dot) < cfg.converge_tol_hdot;
  out.certified = positive && converged;
  if (!positive) {
    out.reason = "h crosses zero under saturated feedback";
  } else if (!converged) {
    out.reason = "virtual state has not converged by the horizon";
  }
  return out;
}

EcbfConfig certify(EcbfConfig cfg, const WorstCase& wc, const VehicleParams& params,
                   const Drivetrain& drivetrain, CertificationResult* result) {
  cfg.extreme = extreme_mu_bounds(wc, params, drivetrain);
  CertificationResult r = verify_gains(cfg, extreme_state(wc));
  cfg.certified = r.certified;
  if (result != nullptr) *result = std::move(r);
  return cfg;
}

double safe_torque_bound(const VehicleState& state, double lead_accel, const EcbfConfig& cfg,
                         const VehicleParams& params) {
  const VehicleParams p = params.with_mass(state.mass);
  const VirtualState eta = barrier(state, cfg.z0 + cfg.filter_margin);
  const double resist = resistance_force(state.host_velocity, p, state.grade);
  return p.mass * p.wheel_radius *
         (lead_accel + resist / p.mass + cfg.gains.k1 * eta.h + cfg.gains.k2 * eta.h_dot);
}

FilterResult filter_torque(const VehicleState& state, double proposed, double lead_accel,
                           const EcbfConfig& cfg, const VehicleParams& params,
                           TorqueLimits limits) {
  if (!cfg.certified) throw std::logic_error("filter_torque: ECBF gains are not certified");
  if (std::isnan(proposed) || std::isnan(lead_accel) || std::isnan(state.separation) ||
      std::isnan(state.host_velocity) || std::isnan(state.lead_velocity) ||
      std::isnan(state.grade) || std::isnan(state.mass)) {
    throw std::invalid_argument("filter_torque: NaN input");
  }
  FilterResult r;
  r.safe_bound = safe_torque_bound(state, lead_accel, cfg, params);
  r.torque = std::clamp(std::min(proposed, r.safe_bound), limits.min, limits.max);
  r.intervened = r.torque != proposed;
  return r;
}

}  // namespace accsim
