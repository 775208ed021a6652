#pragma once

// Drive cycles, episode randomisation and the closed-loop environment:
// controller proposes -> (optional) ECBF filter -> plant step -> reward.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "accsim/control.hpp"
#include "accsim/dynamics.hpp"
#include "accsim/observation.hpp"
#include "accsim/safety.hpp"

namespace accsim {

struct DriveCycle {
  std::string name;
  double dt = 1.0;             // s, uniform spacing
  std::vector<double> speed;   // m/s
  std::vector<double> grade;   // rad, empty or same length as speed

  [[nodiscard]] double duration() const { return dt * static_cast<double>(speed.size() - 1); }
  /// Linear interpolation, held constant past either end.
  [[nodiscard]] double speed_at(double t) const;
  [[nodiscard]] double grade_at(double t) const;
  /// Trapezoidal integral of speed over the whole cycle, m.
  [[nodiscard]] double distance() const;
  void validate() const;
};

/// Resample onto a uniform grid of spacing dt by linear interpolation.
DriveCycle resample(const DriveCycle& cycle, double dt);

/// Build a cycle from (t, v[, grade]) samples; times need not be uniform but
/// must be strictly increasing. Resampled to `dt`.
DriveCycle make_cycle(std::string name, const std::vector<double>& t, const std::vector<double>& v,
                      const std::vector<double>& grade, double dt);

/// CSV with header `t,v` or `t,v,grade` in SI units; lines starting with
/// '#' are comments.
DriveCycle load_cycle(const std::string& path, double dt);
void save_cycle(const std::string& path, const DriveCycle& cycle, const std::string& comment = {});

enum class CycleKind { Urban, Highway };

/// Synthetic cycles: urban is stop-and-go (mean around 8 m/s), highway is
/// sustained 22-30 m/s cruising with gentle speed changes.
DriveCycle generate_cycle(CycleKind kind, double duration, std::uint64_t seed);

enum class SafetyMode { Ecbf, RewardShaping, None };

SafetyMode parse_safety_mode(const std::string& s);
std::string to_string(SafetyMode m);

struct ScenarioConfig {
  double set_speed = 15.0;         // m/s
  double z_init_min = 20.0;        // m
  double z_init_max = 120.0;       // m
  double mass_min = 5000.0;        // kg
  double mass_max = 10000.0;       // kg
  double mass_change_interval = 0.0;  // s; 0 disables in-episode load changes
  double lead_noise_std = 0.3;     // m/s, per cycle sample
  double sensor_range = 350.0;     // m
  double horizon = 200.0;          // s
  double env_dt = 0.1;             // s
  double decision_dt = 1.0;        // s
  bool random_offset = true;       // start the lead at a random point of the cycle
  std::uint64_t seed = 1;

  void validate(double z0) const;
};

struct EpisodeInit {
  double mass = 9000.0;
  double z_init = 50.0;
  double cycle_offset = 0.0;             // s
  std::vector<double> lead_noise;        // m/s, one per decision step (+1)
  std::vector<double> mass_schedule;     // masses queued at each change interval
};

EpisodeInit randomize(const ScenarioConfig& cfg, double cycle_duration, double z0,
                      std::mt19937_64& rng);

/// Learner bookkeeping carried by a decision; absent for classical controllers.
struct BehaviorInfo {
  double unit_torque = 0.0;
  int gear = 1;
  double log_prob_torque = 0.0;
  double log_prob_gear = 0.0;
};

struct Decision {
  double torque = 0.0;  // proposed wheel torque, N*m
  GearChange gear_change = GearChange::Hold;
  std::optional<BehaviorInfo> behavior;
};

struct DecisionContext {
  const VehicleParams& params;  // mass already set to the current load
  const Drivetrain& drivetrain;
  TorqueLimits envelope;        // gear-independent limits at this load
  double decision_dt = 1.0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() {}
  virtual Decision decide(const Observation& obs, const DecisionContext& ctx) = 0;
};

/// PID torque plus fuel-optimal gear, both at the decision cadence.
class PidDriver final : public Controller {
 public:
  explicit PidDriver(PidConfig cfg) : pid_(cfg) {}
  void reset() override { pid_.reset(); }
  Decision decide(const Observation& obs, const DecisionContext& ctx) override;

 private:
  PidController pid_;
};

struct DecisionRecord {
  Observation obs;
  Decision decision;
  double reward = 0.0;
  bool terminal = false;
  Observation next_obs;
};

struct TraceRow {
  double t = 0.0;
  double separation = 0.0;
  double host_velocity = 0.0;
  double lead_velocity = 0.0;
  int gear = 1;
  double torque = 0.0;      // applied wheel torque
  double fuel_used = 0.0;   // g, cumulative
  double distance = 0.0;    // m, cumulative host travel
  bool in_range = false;
  bool intervened = false;
};

struct EpisodeReport {
  double mpg = 0.0;
  double mean_in_range_separation = 0.0;  // NaN when never in range
  double min_separation = 0.0;
  bool collision = false;
  long interventions = 0;   // environment steps where the filter changed the torque
  long violations = 0;      // environment steps ending with z < z0
  double total_reward = 0.0;
  long steps = 0;           // environment steps
  long decisions = 0;
  double distance = 0.0;    // m
  double fuel = 0.0;        // g
  double duration = 0.0;    // s
  double mass = 0.0;        // initial mass
  std::vector<TraceRow> trace;
  std::vector<DecisionRecord> records;
};

/// Miles per gallon from metres and grams of diesel (832 g/L, 3.785 L/gal).
double miles_per_gallon(double distance_m, double fuel_g);

struct EnvironmentSetup {
  VehicleParams params;
  Drivetrain drivetrain;
  RewardWeights rewards;
  ScenarioConfig scenario;
  double z0 = 10.0;
  SafetyMode safety = SafetyMode::Ecbf;
  std::optional<EcbfConfig> filter;  // required (and certified) when safety == Ecbf
  bool record_trace = false;
  bool record_decisions = false;
};

/// Run one episode from fixed initial conditions. Throws std::logic_error
/// for an uncertified filter and std::runtime_error on a non-finite state.
EpisodeReport run_episode(Controller& controller, const EnvironmentSetup& env,
                          const DriveCycle& cycle, const EpisodeInit& init);

/// Draws the initial conditions from `rng`, then runs.
EpisodeReport run_episode(Controller& controller, const EnvironmentSetup& env,
                          const DriveCycle& cycle, std::mt19937_64& rng);

/// Runs independent episodes, episode i seeded with seed + i; results come
/// back in index order regardless of scheduling.
std::vector<EpisodeReport> run_batch(const std::function<std::unique_ptr<Controller>()>& make,
                                     const EnvironmentSetup& env, const DriveCycle& cycle,
                                     std::size_t episodes, std::uint64_t seed,
                                     unsigned threads = 1);

}  // namespace accsim
