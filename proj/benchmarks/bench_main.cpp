#include <random>

#include <benchmark/benchmark.h>

#include "accsim/agent.hpp"
#include "accsim/config.hpp"
#include "accsim/training.hpp"

using namespace accsim;

namespace {

const RunConfig& config() {
  static const RunConfig cfg = load_config("");
  return cfg;
}

const EnvironmentSetup& ecbf_env() {
  static const EnvironmentSetup env = make_environment(config(), SafetyMode::Ecbf);
  return env;
}

}  // namespace

static void BM_CriticForward(benchmark::State& state) {
  const auto& cfg = config();
  Critic critic(cfg.learn.hidden, cfg.learn.layers);
  std::mt19937_64 rng(1);
  critic.initialize(rng);
  const Eigen::MatrixXd inputs = Eigen::MatrixXd::Random(Critic::kInputs, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(critic.evaluate(inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CriticForward)->Arg(1)->Arg(64)->Arg(512);

static void BM_FilterTorque(benchmark::State& state) {
  const auto& env = ecbf_env();
  VehicleState s;
  s.separation = 25.0;
  s.host_velocity = 20.0;
  s.lead_velocity = 15.0;
  s.mass = 9000.0;
  const TorqueLimits limits{env.drivetrain.brake_torque_floor(env.params),
                            max_wheel_torque(s.host_velocity, 5, env.drivetrain, env.params)};
  double proposed = 0.0;
  for (auto _ : state) {
    proposed += 1.0;
    benchmark::DoNotOptimize(filter_torque(s, proposed, -0.5, *env.filter, env.params, limits));
  }
}
BENCHMARK(BM_FilterTorque);

static void BM_DynamicsStep(benchmark::State& state) {
  const auto& env = ecbf_env();
  VehicleState s;
  s.separation = 50.0;
  s.host_velocity = 20.0;
  s.lead_velocity = 20.0;
  s.gear = 8;
  for (auto _ : state) {
    VehicleState next = step(s, 2000.0, GearChange::Hold, 0.0, 0.1, env.params, env.drivetrain);
    benchmark::DoNotOptimize(next);
  }
}
BENCHMARK(BM_DynamicsStep);

static void BM_PidEpisode(benchmark::State& state) {
  const auto& cfg = config();
  const auto& env = ecbf_env();
  const DriveCycle cycle = resolve_cycle(cfg.cycles.train, cfg.cycles.duration, 1.0);
  PidDriver pid(cfg.pid);
  std::mt19937_64 rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(pid, env, cycle, rng));
}
BENCHMARK(BM_PidEpisode)->Unit(benchmark::kMillisecond);

static void BM_AgentUpdate(benchmark::State& state) {
  const auto& cfg = config();
  const auto& env = ecbf_env();
  const DriveCycle cycle = resolve_cycle(cfg.cycles.train, cfg.cycles.duration, 1.0);
  MpoAgent agent(cfg.learn, cfg.action_scale, cfg.observation, 5);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.learn.replay_capacity));
  RlDriver driver(agent, true);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 4; ++i) {
    EnvironmentSetup e = env;
    e.record_decisions = true;
    buffer.push_episode(to_transitions(run_episode(driver, e, cycle, rng), cfg.observation, i));
  }
  for (auto _ : state) benchmark::DoNotOptimize(agent.update(buffer));
}
BENCHMARK(BM_AgentUpdate)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
