#include "accsim/training.hpp"

namespace accsim {

Decision RlDriver::decide(const Observation& obs, const DecisionContext&) {
  const SampledAction a = agent_.act(obs, explore_);
  Decision d;
  d.torque = a.action.torque;
  d.gear_change = a.action.gear_change;
  d.behavior = BehaviorInfo{a.unit_torque, a.gear, a.log_prob_torque, a.log_prob_gear};
  return d;
}

std::vector<Transition> to_transitions(const EpisodeReport& report, const ObservationBounds& bounds,
                                       std::uint64_t episode) {
  std::vector<Transition> out;
  out.reserve(report.records.size());
  for (const DecisionRecord& r : report.records) {
    if (!r.decision.behavior) throw std::logic_error("to_transitions: decision without behaviour info");
    const BehaviorInfo& b = *r.decision.behavior;
    Transition t;
    t.obs = bounds.normalize(r.obs);
    t.next_obs = bounds.normalize(r.next_obs);
    t.unit_torque = b.unit_torque;
    t.gear = b.gear;
    t.log_prob_torque = b.log_prob_torque;
    t.log_prob_gear = b.log_prob_gear;
    t.reward = r.reward;
    t.terminal = r.terminal;
    t.episode = episode;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<CurveRow> train(MpoAgent& agent, ReplayBuffer& buffer, const EnvironmentSetup& env_in,
                            const DriveCycle& cycle, const TrainOptions& opts) {
  EnvironmentSetup env = env_in;
  env.record_decisions = true;
  env.record_trace = false;
  std::mt19937_64 episode_rng(opts.seed);
  const LearnConfig& cfg = agent.config();
  std::vector<CurveRow> curve;
  curve.reserve(static_cast<std::size_t>(std::max(0L, opts.episodes)));
  long pending = 0;  // decisions not yet paid for with an update

  for (long ep = 0; ep < opts.episodes; ++ep) {
    RlDriver driver(agent, true);
    const EpisodeReport report = run_episode(driver, env, cycle, episode_rng);
    buffer.push_episode(to_transitions(report, agent.bounds(), static_cast<std::uint64_t>(ep)));

    CurveRow row;
    row.episode = ep;
    row.reward = report.total_reward;
    row.mpg = report.mpg;
    row.collision = report.collision;
    row.violations = report.violations;
    row.interventions = report.interventions;
    row.min_separation = report.min_separation;

    double loss_sum = 0.0;
    long n_updates = 0;
    if (buffer.size() >= static_cast<std::size_t>(cfg.warmup)) {
      pending += report.decisions;
      while (pending >= cfg.update_every) {
        loss_sum += agent.update(buffer).critic_loss;
        ++n_updates;
        pending -= cfg.update_every;
      }
    }
    row.critic_loss = n_updates > 0 ? loss_sum / static_cast<double>(n_updates) : 0.0;
    row.updates = agent.updates();
    curve.push_back(row);
    if (opts.on_episode) opts.on_episode(row);
    if (opts.checkpoint_every > 0 && (ep + 1) % opts.checkpoint_every == 0 && opts.on_checkpoint) {
      opts.on_checkpoint(ep + 1);
    }
  }
  return curve;
}

}  // namespace accsim
