#pragma once

// Reference implementations used only by tests. Each one is written from
// the defining formula rather than from the production code path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "accsim/dynamics.hpp"
#include "accsim/mlp.hpp"
#include "accsim/retrace.hpp"
#include "accsim/safety.hpp"

namespace accsim::oracle {

/// One classical RK4 step of the host speed ODE at constant torque and grade.
inline double rk4_host_velocity(double v, double torque, const VehicleParams& p, double grade,
                                double dt) {
  const auto f = [&](double x) {
    const double drag = 0.5 * p.air_density * p.frontal_area * p.drag_coeff * x * x;
    const double roll = p.mass * p.gravity * p.rolling_coeff * std::cos(grade);
    const double slope = p.mass * p.gravity * std::sin(grade);
    return (torque / p.wheel_radius - drag - roll - slope) / p.mass;
  };
  const double k1 = f(v);
  const double k2 = f(v + 0.5 * dt * k1);
  const double k3 = f(v + 0.5 * dt * k2);
  const double k4 = f(v + dt * k3);
  return v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Bilinear interpolation by linear search and explicit corner weights.
inline double bilinear(const FuelMap& m, double w, double t) {
  const auto locate = [](const std::vector<double>& axis, double x, std::size_t& i, double& f) {
    x = std::clamp(x, axis.front(), axis.back());
    i = 0;
    while (i + 2 < axis.size() && x > axis[i + 1]) ++i;
    f = (x - axis[i]) / (axis[i + 1] - axis[i]);
  };
  std::size_t i = 0;
  std::size_t j = 0;
  double a = 0.0;
  double b = 0.0;
  locate(m.speed_axis, w, i, a);
  locate(m.torque_axis, t, j, b);
  return (1 - a) * (1 - b) * m.node(i, j) + a * (1 - b) * m.node(i + 1, j) +
         (1 - a) * b * m.node(i, j + 1) + a * b * m.node(i + 1, j + 1);
}

/// exp(A dt) by a truncated Taylor series.
inline Eigen::Matrix2d expm_series(const Eigen::Matrix2d& a, double dt, int terms) {
  Eigen::Matrix2d sum = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d term = Eigen::Matrix2d::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * a * dt / static_cast<double>(k);
    sum += term;
  }
  return sum;
}

/// Zero-order-hold step of the double integrator from the series:
/// eta' = e^{F dt} eta + (sum_k F^k dt^{k+1} / (k+1)!) G mu.
inline VirtualState zoh_series(const VirtualState& eta, double mu, double dt, int terms = 6) {
  Eigen::Matrix2d f;
  f << 0, 1, 0, 0;
  const Eigen::Vector2d g(0, 1);
  const Eigen::Matrix2d phi = expm_series(f, dt, terms);
  Eigen::Matrix2d gamma = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d fk = Eigen::Matrix2d::Identity();
  double fact = 1.0;
  for (int k = 0; k < terms; ++k) {
    fact *= static_cast<double>(k + 1);
    gamma += fk * std::pow(dt, k + 1) / fact;
    fk = fk * f;
  }
  const Eigen::Vector2d next = phi * Eigen::Vector2d(eta.h, eta.h_dot) + gamma * g * mu;
  return {next(0), next(1)};
}

/// The filter as a generic scalar QP: minimise (T - T_a)^2 subject to the
/// barrier inequality, solved by bisection on its multiplier, then clamped.
inline double qp_filter(const VehicleState& s, double proposed, double lead_accel,
                        const EcbfConfig& cfg, const VehicleParams& params, TorqueLimits limits) {
  const double m = s.mass;
  const double r = params.wheel_radius;
  const double h = s.separation - (cfg.z0 + cfg.filter_margin);
  const double h_dot = s.lead_velocity - s.host_velocity;
  const double v = s.host_velocity;
  const double resist = 0.5 * params.air_density * params.frontal_area * params.drag_coeff * v * v +
                        m * params.gravity * params.rolling_coeff * std::cos(s.grade) +
                        m * params.gravity * std::sin(s.grade);
  // g(T) = mu(T) + k1 h + k2 h_dot >= 0, with dg/dT = -1 / (m r).
  const auto g = [&](double t) {
    return lead_accel + resist / m - t / (m * r) + cfg.gains.k1 * h + cfg.gains.k2 * h_dot;
  };
  const auto t_of = [&](double lambda) { return proposed - lambda / (m * r); };
  double t = proposed;
  if (g(proposed) < 0.0) {
    double lo = 0.0;
    double hi = 1.0;
    while (g(t_of(hi)) < 0.0) hi *= 2.0;
    for (int it = 0; it < 400 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      (g(t_of(mid)) < 0.0 ? lo : hi) = mid;
    }
    t = t_of(hi);
  }
  return std::clamp(t, limits.min, limits.max);
}

/// Q_ret as the explicit sum of discounted, trace-weighted TD errors.
inline std::vector<double> retrace_sum(const std::vector<RetraceStep>& seg, double gamma, int n) {
  std::vector<double> out(seg.size());
  for (std::size_t t = 0; t < seg.size(); ++t) {
    const std::size_t end = std::min(seg.size(), t + static_cast<std::size_t>(n));
    double q = seg[t].q_taken;
    double disc = 1.0;
    double prod = 1.0;
    for (std::size_t j = t; j < end; ++j) {
      if (j > t) prod *= seg[j].trace;
      const double boot = seg[j].terminal ? 0.0 : gamma * seg[j].expected_next;
      q += disc * prod * (seg[j].reward + boot - seg[j].q_taken);
      if (seg[j].terminal) break;
      disc *= gamma;
    }
    out[t] = q;
  }
  return out;
}

/// Largest relative error between `analytic` and central differences of
/// `loss` at `probes` random parameter indices.
inline double max_fd_error(Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                           const std::function<double()>& loss, int probes, std::mt19937_64& rng,
                           double step = 1e-5) {
  std::uniform_int_distribution<Eigen::Index> pick(0, params.size() - 1);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    const Eigen::Index i = pick(rng);
    const double keep = params[i];
    params[i] = keep + step;
    const double up = loss();
    params[i] = keep - step;
    const double down = loss();
    params[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

/// Gradient check of sum <c, net(x)> for a random batch and random c.
inline double mlp_fd_error(Mlp& net, int batch, int probes, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(net.input_size(), batch);
  Eigen::MatrixXd c(net.output_size(), batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
  Mlp::Cache cache;
  (void)net.forward(x, &cache);
  const Eigen::VectorXd grad = net.backward(cache, c);
  const auto loss = [&] { return net.forward(x).cwiseProduct(c).sum(); };
  return max_fd_error(net.params(), grad, loss, probes, rng);
}

}  // namespace accsim::oracle
