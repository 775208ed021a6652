#include "accsim/retrace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace accsim {

double truncated_importance_weight(double log_pi, double log_behavior, double lambda) {
  const double log_ratio = log_pi - log_behavior;
  return lambda * (log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio));
}

std::vector<double> retrace_targets(std::span<const RetraceStep> segment, double gamma, int n_steps) {
  if (segment.empty()) throw std::invalid_argument("retrace_targets: empty segment");
  if (n_steps < 1) throw std::invalid_argument("retrace_targets: n_steps must be >= 1");
  const std::size_t size = segment.size();
  const auto n = static_cast<std::size_t>(n_steps);
  std::vector<double> targets(size);
  for (std::size_t t = 0; t < size; ++t) {
    const std::size_t end = std::min(size, t + n);
    const RetraceStep& last = segment[end - 1];
    double g = last.reward + (last.terminal ? 0.0 : gamma * last.expected_next);
    for (std::size_t j = end - 1; j-- > t;) {
      const RetraceStep& s = segment[j];
      if (s.terminal) {
        g = s.reward;
        continue;
      }
      const RetraceStep& nx = segment[j + 1];
      g = s.reward + gamma * (s.expected_next + nx.trace * (g - nx.q_taken));
    }
    targets[t] = g;
  }
  return targets;
}

}  // namespace accsim
