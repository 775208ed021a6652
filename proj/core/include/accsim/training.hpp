#pragma once

// Learner-in-the-loop training: episodes are collected with the stochastic
// policy, pushed to replay whole, and the learner steps once per
// `update_every` decisions after warm-up.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "accsim/agent.hpp"
#include "accsim/replay.hpp"
#include "accsim/scenario.hpp"

namespace accsim {

/// Drives the environment with an MpoAgent; stochastic when exploring.
class RlDriver final : public Controller {
 public:
  RlDriver(MpoAgent& agent, bool explore) : agent_(agent), explore_(explore) {}
  Decision decide(const Observation& obs, const DecisionContext& ctx) override;

 private:
  MpoAgent& agent_;
  bool explore_;
};

/// Replay transitions from a recorded episode.
std::vector<Transition> to_transitions(const EpisodeReport& report, const ObservationBounds& bounds,
                                       std::uint64_t episode);

struct CurveRow {
  long episode = 0;
  double reward = 0.0;
  double mpg = 0.0;
  bool collision = false;
  long violations = 0;      // environment steps with z < z0
  long interventions = 0;
  double min_separation = 0.0;
  double critic_loss = 0.0;  // mean over this episode's updates, 0 if none
  long updates = 0;          // cumulative
};

struct TrainOptions {
  long episodes = 0;
  std::uint64_t seed = 1;
  /// Called after every episode, in order.
  std::function<void(const CurveRow&)> on_episode;
  /// Called every `checkpoint_every` episodes (0 disables).
  long checkpoint_every = 0;
  std::function<void(long episode)> on_checkpoint;
};

/// Runs `opts.episodes` training episodes. Deterministic for a fixed agent
/// state, environment, cycle and seed.
std::vector<CurveRow> train(MpoAgent& agent, ReplayBuffer& buffer, const EnvironmentSetup& env,
                            const DriveCycle& cycle, const TrainOptions& opts);

}  // namespace accsim
