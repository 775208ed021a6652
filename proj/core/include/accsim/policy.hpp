#pragma once

// Hybrid action policy: Gaussian wheel torque x categorical gear change,
// assumed independent so log pi(a|s) = log N(u) + log Cat(g).

#include <array>
#include <random>

#include <Eigen/Dense>

#include "accsim/dynamics.hpp"
#include "accsim/mlp.hpp"
#include "accsim/observation.hpp"

namespace accsim {

inline constexpr int kObservationSize = 8;
inline constexpr int kGearChoices = 3;  // index = gear change + 1

inline int gear_index(GearChange g) { return static_cast<int>(g) + 1; }
inline GearChange gear_from_index(int k) { return static_cast<GearChange>(k - 1); }

/// Affine map of each observation entry onto [-1, 1] with fixed bounds,
/// clamped outside them.
struct ObservationBounds {
  double speed_max = 35.0;
  double relative_speed_max = 35.0;
  double separation_max = 400.0;
  int gears = 10;
  double mass_min = 5000.0;
  double mass_max = 10000.0;
  double grade_max = 0.1;

  [[nodiscard]] Eigen::VectorXd normalize(const Observation& obs) const;
};

/// Torque envelope that the policy's unit interval is mapped onto.
struct ActionScale {
  double torque_min = -44000.0;
  double torque_max = 49000.0;

  [[nodiscard]] double to_torque(double u) const;  // clamps u to [-1, 1]
  [[nodiscard]] double to_unit(double torque) const;
};

struct Action {
  double torque = 0.0;  // N*m at the wheels
  GearChange gear_change = GearChange::Hold;
};

/// Distribution parameters for one state.
struct PolicyHead {
  double mean = 0.0;
  double log_std = 0.0;
  std::array<double, kGearChoices> logits{};
  std::array<double, kGearChoices> probs{};

  [[nodiscard]] double std_dev() const;
  [[nodiscard]] double log_prob_torque(double u) const;
  [[nodiscard]] double log_prob_gear(int index) const;
};

struct SampledAction {
  Action action;
  double unit_torque = 0.0;  // pre-clamp sample
  int gear = 1;              // gear index
  double log_prob_torque = 0.0;
  double log_prob_gear = 0.0;
};

class HybridPolicy {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;
  static constexpr int kOutputs = 2 + kGearChoices;  // mean, log-std, logits

  HybridPolicy() = default;
  HybridPolicy(int hidden, int layers);

  void initialize(std::mt19937_64& rng, double initial_log_std, double initial_mean = 0.0);

  [[nodiscard]] Mlp& net() { return net_; }
  [[nodiscard]] const Mlp& net() const { return net_; }

  /// Raw network output for a batch of normalized observations.
  [[nodiscard]] Eigen::MatrixXd raw(const Eigen::MatrixXd& obs, Mlp::Cache* cache = nullptr) const;
  [[nodiscard]] static PolicyHead head_from_raw(const Eigen::Ref<const Eigen::VectorXd>& raw);
  [[nodiscard]] PolicyHead head(const Eigen::VectorXd& obs) const;

  [[nodiscard]] double log_prob(const Eigen::VectorXd& obs, double unit_torque, int gear) const;

  [[nodiscard]] SampledAction sample(const Eigen::VectorXd& obs, const ActionScale& scale,
                                     std::mt19937_64& rng) const;
  /// Mean torque and most likely gear change.
  [[nodiscard]] SampledAction greedy(const Eigen::VectorXd& obs, const ActionScale& scale) const;

 private:
  Mlp net_;
};

/// Sample from a head; shared by the policy and the learner.
SampledAction sample_head(const PolicyHead& head, const ActionScale& scale, std::mt19937_64& rng);

/// Q(s, a) over observation + clamped unit torque + one-hot gear change.
class Critic {
 public:
  static constexpr int kInputs = kObservationSize + 1 + kGearChoices;

  Critic() = default;
  Critic(int hidden, int layers);

  void initialize(std::mt19937_64& rng);

  [[nodiscard]] Mlp& net() { return net_; }
  [[nodiscard]] const Mlp& net() const { return net_; }

  /// Column-wise critic input.
  static void write_input(Eigen::Ref<Eigen::VectorXd> column, const Eigen::VectorXd& obs,
                          double unit_torque, int gear);
  [[nodiscard]] Eigen::RowVectorXd evaluate(const Eigen::MatrixXd& inputs) const;

 private:
  Mlp net_;
};

}  // namespace accsim
