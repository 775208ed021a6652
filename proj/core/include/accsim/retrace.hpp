#pragma once

// Retrace targets over a time-contiguous segment. Everything here is pure
// arithmetic on precomputed critic values, so it can be checked against an
// unrolled reference independently of the networks.

#include <span>
#include <vector>

namespace accsim {

struct RetraceStep {
  double reward = 0.0;
  double q_taken = 0.0;        // Q_target(s_j, a_j)
  double expected_next = 0.0;  // E_{a'~pi} Q_target(s_{j+1}, a')
  double trace = 1.0;          // c_j = lambda * min(1, pi(a_j|s_j) / b(a_j|s_j))
  bool terminal = false;       // s_{j+1} is terminal
};

/// c = lambda * min(1, exp(log_pi - log_b)); always in [0, lambda].
double truncated_importance_weight(double log_pi, double log_behavior, double lambda);

/// Q_ret for every step t of the segment, each using the window
/// [t, min(t + n_steps, size)). Computed backward:
///   G_{e-1} = r + gamma * E Q(s_e)
///   G_j     = r_j + gamma * (E Q(s_{j+1}) + c_{j+1} * (G_{j+1} - Q(s_{j+1}, a_{j+1})))
/// Throws std::invalid_argument for an empty segment or n_steps < 1.
std::vector<double> retrace_targets(std::span<const RetraceStep> segment, double gamma, int n_steps);

}  // namespace accsim
