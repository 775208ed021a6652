#pragma once

// Off-policy actor-critic for the hybrid torque/gear action.
//
// Policy evaluation fits Q to retrace targets built from the delayed target
// networks. Policy improvement is the sample-based weighted maximum
// likelihood step: actions drawn from the target policy are weighted by
// softmax(Q / eta), eta minimising the temperature dual for a KL bound of
// `dual_epsilon`, and the online policy is fitted to them with decoupled
// Lagrangian trust regions on the mean, the spread and the gear logits.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "accsim/policy.hpp"
#include "accsim/replay.hpp"
#include "accsim/retrace.hpp"

namespace accsim {

struct LearnConfig {
  int hidden = 64;
  int layers = 3;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  double gamma = 0.99;
  double lambda = 1.0;
  int retrace_steps = 15;
  int action_samples = 16;      // candidate actions per state in the policy step
  int expectation_samples = 4;  // torque samples per gear for E_pi Q in retrace
  int batch_segments = 16;
  double dual_epsilon = 0.1;
  double kl_mean = 0.1;
  double kl_std = 0.001;
  double kl_discrete = 0.1;
  double multiplier_step_discrete = 10.0;
  double multiplier_step_continuous = 10.0;
  double initial_multiplier = 1.0;
  int target_sync = 200;        // critic updates between hard target copies
  double value_scale = 0.01;    // critic regresses value_scale * Q
  int update_every = 10;        // environment decisions per learner update
  int warmup = 2000;            // transitions before the first update
  std::size_t replay_capacity = 200000;
  double initial_log_std = -1.6;

  void validate() const;
};

/// Lagrange multipliers of the policy step.
struct PolicyDuals {
  double mean = 1.0;
  double std = 1.0;
  double discrete = 1.0;
  double temperature = 1.0;  // last eta, for reporting
};

struct ActorStats {
  double loss = 0.0;
  double temperature = 0.0;
  double kl_mean = 0.0;
  double kl_std = 0.0;
  double kl_discrete = 0.0;
  Eigen::MatrixXd weights;   // states x samples
};

struct UpdateStats {
  double critic_loss = 0.0;
  ActorStats actor;
};

/// Maps a batch of critic input columns to Q values.
using QFunction = std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&)>;

/// Minimiser of eta*eps + eta * mean_s log mean_j exp(Q_sj / eta) (Q is
/// states x samples), found by golden-section search on log eta.
double solve_temperature(const Eigen::MatrixXd& q, double epsilon);

/// Row-wise softmax(Q / eta).
Eigen::MatrixXd sample_weights(const Eigen::MatrixXd& q, double eta);

/// One optimizer step on mean((Q(inputs) - targets)^2). Returns the loss
/// before the step.
double critic_update(Critic& critic, Adam& opt, const Eigen::MatrixXd& inputs,
                     const Eigen::RowVectorXd& targets);

/// Gradient of the critic loss, exposed for checking.
Eigen::VectorXd critic_loss_gradient(const Critic& critic, const Eigen::MatrixXd& inputs,
                                     const Eigen::RowVectorXd& targets, double* loss = nullptr);

/// One weighted-likelihood policy step. `states` holds normalized
/// observations column-wise; candidates come from `target`.
ActorStats actor_update(HybridPolicy& policy, const HybridPolicy& target, Adam& opt,
                        PolicyDuals& duals, const Eigen::MatrixXd& states, const QFunction& q,
                        const LearnConfig& cfg, std::mt19937_64& rng);

class MpoAgent {
 public:
  MpoAgent(LearnConfig cfg, ActionScale scale, ObservationBounds bounds, std::uint64_t seed);

  [[nodiscard]] SampledAction act(const Observation& obs, bool explore);

  /// One learner step from replay. Requires a non-empty buffer.
  UpdateStats update(const ReplayBuffer& buffer);

  /// Retrace targets (in critic units) for one segment, using the target
  /// networks.
  [[nodiscard]] std::vector<double> segment_targets(const std::vector<Transition>& segment);

  void sync_targets();

  [[nodiscard]] const LearnConfig& config() const { return cfg_; }
  [[nodiscard]] const ActionScale& action_scale() const { return scale_; }
  [[nodiscard]] const ObservationBounds& bounds() const { return bounds_; }
  [[nodiscard]] HybridPolicy& actor() { return actor_; }
  [[nodiscard]] const HybridPolicy& actor() const { return actor_; }
  [[nodiscard]] const HybridPolicy& target_actor() const { return target_actor_; }
  [[nodiscard]] Critic& critic() { return critic_; }
  [[nodiscard]] const Critic& critic() const { return critic_; }
  [[nodiscard]] const Critic& target_critic() const { return target_critic_; }
  [[nodiscard]] long updates() const { return updates_; }
  [[nodiscard]] std::mt19937_64& rng() { return rng_; }

  [[nodiscard]] nlohmann::json to_json() const;
  static MpoAgent from_json(const nlohmann::json& j);

 private:
  LearnConfig cfg_;
  ActionScale scale_;
  ObservationBounds bounds_;
  HybridPolicy actor_;
  HybridPolicy target_actor_;
  Critic critic_;
  Critic target_critic_;
  Adam actor_opt_;
  Adam critic_opt_;
  PolicyDuals duals_;
  long updates_ = 0;
  std::mt19937_64 rng_;
};

/// Versioned JSON checkpoint. `tag` carries the caller's config hash and seed.
struct CheckpointMeta {
  std::string config_hash;
  std::string model_hash;
  std::uint64_t seed = 0;
  long episodes = 0;
};

void save_checkpoint(const std::string& path, const MpoAgent& agent, const CheckpointMeta& meta);
MpoAgent load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace accsim
