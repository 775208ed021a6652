#include "accsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace accsim {

namespace {

double unit(double x, double lo, double hi) {
  return std::clamp(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0);
}

std::vector<int> layer_sizes(int in, int hidden, int layers, int out) {
  std::vector<int> sizes{in};
  for (int i = 0; i < layers; ++i) sizes.push_back(hidden);
  sizes.push_back(out);
  return sizes;
}

}  // namespace

Eigen::VectorXd ObservationBounds::normalize(const Observation& obs) const {
  Eigen::VectorXd s(kObservationSize);
  s << unit(obs.host_velocity, 0.0, speed_max),
      unit(obs.relative_velocity, -relative_speed_max, relative_speed_max),
      unit(obs.separation, 0.0, separation_max), unit(obs.gear, 1.0, gears),
      unit(obs.mass, mass_min, mass_max), unit(obs.grade, -grade_max, grade_max),
      unit(obs.set_speed, 0.0, speed_max), obs.in_range ? 1.0 : -1.0;
  return s;
}

double ActionScale::to_torque(double u) const {
  const double c = std::clamp(u, -1.0, 1.0);
  return 0.5 * (torque_max + torque_min) + 0.5 * c * (torque_max - torque_min);
}

double ActionScale::to_unit(double torque) const {
  return (torque - 0.5 * (torque_max + torque_min)) / (0.5 * (torque_max - torque_min));
}

double PolicyHead::std_dev() const { return std::exp(log_std); }

double PolicyHead::log_prob_torque(double u) const {
  const double z = (u - mean) / std_dev();
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

double PolicyHead::log_prob_gear(int index) const {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return logits[static_cast<std::size_t>(index)] - m - std::log(sum);
}

HybridPolicy::HybridPolicy(int hidden, int layers)
    : net_(layer_sizes(kObservationSize, hidden, layers, kOutputs)) {}

void HybridPolicy::initialize(std::mt19937_64& rng, double initial_log_std, double initial_mean) {
  net_.initialize(rng, 0.01);
  // Output biases are the last kOutputs parameters.
  auto& p = net_.params();
  p[p.size() - kOutputs] = initial_mean;
  p[p.size() - kOutputs + 1] = initial_log_std;
}

Eigen::MatrixXd HybridPolicy::raw(const Eigen::MatrixXd& obs, Mlp::Cache* cache) const {
  return net_.forward(obs, cache);
}

PolicyHead HybridPolicy::head_from_raw(const Eigen::Ref<const Eigen::VectorXd>& raw) {
  PolicyHead h;
  h.mean = raw[0];
  h.log_std = std::clamp(raw[1], kLogStdMin, kLogStdMax);
  double m = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGearChoices; ++k) {
    h.logits[static_cast<std::size_t>(k)] = raw[2 + k];
    m = std::max(m, raw[2 + k]);
  }
  double sum = 0.0;
  for (int k = 0; k < kGearChoices; ++k) {
    h.probs[static_cast<std::size_t>(k)] = std::exp(raw[2 + k] - m);
    sum += h.probs[static_cast<std::size_t>(k)];
  }
  for (double& p : h.probs) p /= sum;
  return h;
}

PolicyHead HybridPolicy::head(const Eigen::VectorXd& obs) const {
  const Eigen::MatrixXd out = raw(obs);
  return head_from_raw(out.col(0));
}

double HybridPolicy::log_prob(const Eigen::VectorXd& obs, double unit_torque, int gear) const {
  const PolicyHead h = head(obs);
  return h.log_prob_torque(unit_torque) + h.log_prob_gear(gear);
}

SampledAction sample_head(const PolicyHead& head, const ActionScale& scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::discrete_distribution<int> cat(head.probs.begin(), head.probs.end());
  SampledAction s;
  s.unit_torque = head.mean + head.std_dev() * normal(rng);
  s.gear = cat(rng);
  s.log_prob_torque = head.log_prob_torque(s.unit_torque);
  s.log_prob_gear = head.log_prob_gear(s.gear);
  s.action = {scale.to_torque(s.unit_torque), gear_from_index(s.gear)};
  return s;
}

SampledAction HybridPolicy::sample(const Eigen::VectorXd& obs, const ActionScale& scale,
                                   std::mt19937_64& rng) const {
  return sample_head(head(obs), scale, rng);
}

SampledAction HybridPolicy::greedy(const Eigen::VectorXd& obs, const ActionScale& scale) const {
  const PolicyHead h = head(obs);
  SampledAction s;
  s.unit_torque = h.mean;
  s.gear = static_cast<int>(std::distance(h.probs.begin(), std::max_element(h.probs.begin(), h.probs.end())));
  s.log_prob_torque = h.log_prob_torque(s.unit_torque);
  s.log_prob_gear = h.log_prob_gear(s.gear);
  s.action = {scale.to_torque(s.unit_torque), gear_from_index(s.gear)};
  return s;
}

Critic::Critic(int hidden, int layers) : net_(layer_sizes(kInputs, hidden, layers, 1)) {}

void Critic::initialize(std::mt19937_64& rng) { net_.initialize(rng, 0.01); }

void Critic::write_input(Eigen::Ref<Eigen::VectorXd> column, const Eigen::VectorXd& obs,
                         double unit_torque, int gear) {
  column.head(kObservationSize) = obs;
  column[kObservationSize] = std::clamp(unit_torque, -1.0, 1.0);
  for (int k = 0; k < kGearChoices; ++k) column[kObservationSize + 1 + k] = (k == gear) ? 1.0 : 0.0;
}

Eigen::RowVectorXd Critic::evaluate(const Eigen::MatrixXd& inputs) const {
  return net_.forward(inputs).row(0);
}

}  // namespace accsim
