#include "accsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace accsim {

namespace {

constexpr double kMetersPerMile = 1609.344;
constexpr double kDieselGramsPerLiter = 832.0;
constexpr double kLitersPerGallon = 3.785;
constexpr double kStandstill = 0.5;  // m/s, load changes only below this

double interp(const std::vector<double>& values, double dt, double t) {
  if (values.empty()) return 0.0;
  if (t <= 0.0) return values.front();
  const double pos = t / dt;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(i);
  return values[i] + frac * (values[i + 1] - values[i]);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

}  // namespace

double DriveCycle::speed_at(double t) const { return interp(speed, dt, t); }

double DriveCycle::grade_at(double t) const { return interp(grade, dt, t); }

double DriveCycle::distance() const {
  double d = 0.0;
  for (std::size_t i = 1; i < speed.size(); ++i) d += 0.5 * (speed[i - 1] + speed[i]) * dt;
  return d;
}

void DriveCycle::validate() const {
  if (speed.size() < 2) throw std::invalid_argument("drive cycle '" + name + "' needs two samples");
  if (!(dt > 0.0)) throw std::invalid_argument("drive cycle '" + name + "' has non-positive spacing");
  if (!grade.empty() && grade.size() != speed.size()) {
    throw std::invalid_argument("drive cycle '" + name + "' grade profile length mismatch");
  }
  for (double v : speed) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("drive cycle '" + name + "' has a negative or non-finite speed");
    }
  }
}

DriveCycle make_cycle(std::string name, const std::vector<double>& t, const std::vector<double>& v,
                      const std::vector<double>& grade, double dt) {
  if (t.size() != v.size() || (!grade.empty() && grade.size() != t.size())) {
    throw std::invalid_argument("drive cycle column lengths differ");
  }
  if (t.size() < 2) throw std::invalid_argument("drive cycle needs at least two samples");
  if (!(dt > 0.0)) throw std::invalid_argument("resample spacing must be positive");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) {
      throw std::invalid_argument("drive cycle time is not strictly increasing at row " +
                                  std::to_string(i + 1));
    }
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0)) {
      throw std::invalid_argument("drive cycle speed is negative at row " + std::to_string(i + 1));
    }
  }
  DriveCycle out;
  out.name = std::move(name);
  out.dt = dt;
  const double span = t.back() - t.front();
  const auto n = static_cast<std::size_t>(std::floor(span / dt + 1e-9)) + 1;
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = t.front() + static_cast<double>(k) * dt;
    while (seg + 2 < t.size() && tk > t[seg + 1]) ++seg;
    const double frac = std::clamp((tk - t[seg]) / (t[seg + 1] - t[seg]), 0.0, 1.0);
    out.speed.push_back(v[seg] + frac * (v[seg + 1] - v[seg]));
    if (!grade.empty()) out.grade.push_back(grade[seg] + frac * (grade[seg + 1] - grade[seg]));
  }
  out.validate();
  return out;
}

DriveCycle resample(const DriveCycle& cycle, double dt) {
  std::vector<double> t(cycle.speed.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) * cycle.dt;
  return make_cycle(cycle.name, t, cycle.speed, cycle.grade, dt);
}

DriveCycle load_cycle(const std::string& path, double dt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read drive cycle " + path);
  std::string line;
  std::size_t row = 0;
  do {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty drive cycle file");
    ++row;
  } while (line.rfind('#', 0) == 0);
  const auto header = split_csv(line);
  const bool has_grade = header.size() == 3 && header[2] == "grade";
  if (header.size() < 2 || header[0] != "t" || header[1] != "v" || (header.size() == 3 && !has_grade) ||
      header.size() > 3) {
    throw std::runtime_error(path + ": expected header 't,v' or 't,v,grade'");
  }
  std::vector<double> t, v, g;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line.rfind('#', 0) == 0) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path + ":" + std::to_string(row) + ": wrong number of columns");
    }
    try {
      t.push_back(std::stod(cells[0]));
      v.push_back(std::stod(cells[1]));
      if (has_grade) g.push_back(std::stod(cells[2]));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(row) + ": not a number");
    }
  }
  try {
    std::string name = path.substr(path.find_last_of('/') + 1);
    return make_cycle(std::move(name), t, v, g, dt);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_cycle(const std::string& path, const DriveCycle& cycle, const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write drive cycle " + path);
  out.precision(17);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << (cycle.grade.empty() ? "t,v\n" : "t,v,grade\n");
  for (std::size_t i = 0; i < cycle.speed.size(); ++i) {
    out << static_cast<double>(i) * cycle.dt << ',' << cycle.speed[i];
    if (!cycle.grade.empty()) out << ',' << cycle.grade[i];
    out << '\n';
  }
}

DriveCycle generate_cycle(CycleKind kind, double duration, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  DriveCycle c;
  c.dt = 1.0;
  const auto n = static_cast<std::size_t>(std::ceil(duration)) + 1;
  c.speed.reserve(n);
  double v = 0.0;
  const auto ramp_to = [&](double target, double rate) {
    while (c.speed.size() < n && std::abs(v - target) > 1e-9) {
      v = v < target ? std::min(target, v + rate) : std::max(target, v - rate);
      c.speed.push_back(v);
    }
  };
  const auto hold = [&](double seconds, double wobble) {
    for (int s = 0; s < static_cast<int>(seconds) && c.speed.size() < n; ++s) {
      c.speed.push_back(std::max(0.0, v + wobble * std::sin(0.3 * s)));
    }
  };
  if (kind == CycleKind::Urban) {
    c.name = "synthetic-urban";
    c.speed.push_back(0.0);
    while (c.speed.size() < n) {
      hold(uniform(4.0, 15.0), 0.0);
      ramp_to(uniform(8.0, 17.0), uniform(0.6, 1.2));
      hold(uniform(15.0, 50.0), uniform(0.0, 0.8));
      if (u01(rng) < 0.4) {
        ramp_to(uniform(5.0, 10.0), uniform(0.5, 1.0));
        hold(uniform(5.0, 20.0), 0.3);
        ramp_to(uniform(10.0, 16.0), uniform(0.5, 1.0));
        hold(uniform(5.0, 20.0), 0.3);
      }
      ramp_to(0.0, uniform(0.6, 1.3));
    }
  } else {
    c.name = "synthetic-highway";
    v = 25.0;
    c.speed.push_back(v);
    while (c.speed.size() < n) {
      ramp_to(uniform(22.0, 30.0), uniform(0.1, 0.4));
      hold(uniform(20.0, 60.0), uniform(0.0, 0.5));
    }
  }
  c.speed.resize(n);
  c.validate();
  return c;
}

SafetyMode parse_safety_mode(const std::string& s) {
  if (s == "ecbf") return SafetyMode::Ecbf;
  if (s == "reward-shaping") return SafetyMode::RewardShaping;
  if (s == "none") return SafetyMode::None;
  throw std::invalid_argument("unknown safety mode '" + s + "'");
}

std::string to_string(SafetyMode m) {
  switch (m) {
    case SafetyMode::Ecbf: return "ecbf";
    case SafetyMode::RewardShaping: return "reward-shaping";
    case SafetyMode::None: return "none";
  }
  return "?";
}

void ScenarioConfig::validate(double z0) const {
  if (!(env_dt > 0.0) || !(decision_dt >= env_dt)) {
    throw std::invalid_argument("scenario: need 0 < env_dt <= decision_dt");
  }
  const double ratio = decision_dt / env_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw std::invalid_argument("scenario: decision_dt must be a multiple of env_dt");
  }
  if (!(horizon >= 0.0)) throw std::invalid_argument("scenario: horizon must be non-negative");
  if (!(z_init_min >= z0) || !(z_init_max >= z_init_min)) {
    throw std::invalid_argument("scenario: initial gap range must satisfy z0 <= min <= max");
  }
  if (!(mass_min > 0.0) || !(mass_max >= mass_min)) throw std::invalid_argument("scenario: bad mass range");
  if (!(sensor_range > 0.0) || !(lead_noise_std >= 0.0) || !(mass_change_interval >= 0.0)) {
    throw std::invalid_argument("scenario: invalid sensor range, noise or load interval");
  }
}

EpisodeInit randomize(const ScenarioConfig& cfg, double cycle_duration, double z0,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  EpisodeInit init;
  init.mass = uniform(cfg.mass_min, cfg.mass_max);
  init.z_init = uniform(std::max(cfg.z_init_min, z0), std::max(cfg.z_init_max, z0));
  init.cycle_offset = cfg.random_offset ? uniform(0.0, std::max(0.0, cycle_duration - cfg.horizon)) : 0.0;
  const auto decisions = static_cast<std::size_t>(std::floor(cfg.horizon / cfg.decision_dt + 1e-9));
  std::normal_distribution<double> noise(0.0, 1.0);
  init.lead_noise.resize(decisions + 1);
  for (double& x : init.lead_noise) x = cfg.lead_noise_std * noise(rng);
  if (cfg.mass_change_interval > 0.0) {
    const auto changes = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.mass_change_interval));
    for (std::size_t i = 0; i < changes; ++i) init.mass_schedule.push_back(uniform(cfg.mass_min, cfg.mass_max));
  }
  return init;
}

double miles_per_gallon(double distance_m, double fuel_g) {
  if (distance_m <= 0.0) return 0.0;
  const double gallons = fuel_g / kDieselGramsPerLiter / kLitersPerGallon;
  return (distance_m / kMetersPerMile) / gallons;
}

Decision PidDriver::decide(const Observation& obs, const DecisionContext& ctx) {
  Decision d;
  d.torque = pid_.torque(obs, ctx.decision_dt, ctx.envelope.min, ctx.envelope.max);
  const int gear = pid_gear(obs.host_velocity, d.torque, obs.gear, ctx.drivetrain, ctx.params);
  d.gear_change = static_cast<GearChange>(gear - obs.gear);
  return d;
}

namespace {

Observation observe(const VehicleState& s, const ScenarioConfig& cfg) {
  Observation o;
  o.host_velocity = s.host_velocity;
  o.relative_velocity = s.lead_velocity - s.host_velocity;
  o.separation = s.separation;
  o.gear = s.gear;
  o.mass = s.mass;
  o.grade = s.grade;
  o.set_speed = cfg.set_speed;
  o.in_range = s.separation <= cfg.sensor_range;
  return o;
}

bool finite_state(const VehicleState& s) {
  return std::isfinite(s.separation) && std::isfinite(s.host_velocity) &&
         std::isfinite(s.lead_velocity) && std::isfinite(s.fuel_used) && std::isfinite(s.mass);
}

}  // namespace

EpisodeReport run_episode(Controller& controller, const EnvironmentSetup& env,
                          const DriveCycle& cycle, const EpisodeInit& init) {
  const ScenarioConfig& cfg = env.scenario;
  const EcbfConfig* filter = nullptr;
  if (env.safety == SafetyMode::Ecbf) {
    if (!env.filter || !env.filter->certified) {
      throw std::logic_error("run_episode: ECBF safety requires a certified filter");
    }
    filter = &*env.filter;
  }
  const int substeps = static_cast<int>(std::lround(cfg.decision_dt / cfg.env_dt));
  const auto decisions = static_cast<long>(std::floor(cfg.horizon / cfg.decision_dt + 1e-9));

  const auto lead_speed = [&](double t) {
    const double noise = interp(init.lead_noise, cfg.decision_dt, t);
    return std::max(0.0, cycle.speed_at(init.cycle_offset + t) + noise);
  };

  VehicleState state;
  state.mass = init.mass;
  state.host_velocity = lead_speed(0.0);
  state.lead_velocity = state.host_velocity;
  state.separation = init.z_init;
  state.grade = cycle.grade_at(init.cycle_offset);
  state.gear = best_gear(state.host_velocity, 0.0, 1, env.drivetrain, env.params.with_mass(state.mass));

  EpisodeReport report;
  report.mass = init.mass;
  report.min_separation = state.separation;
  controller.reset();

  double lead_accel_estimate = 0.0;
  double prev_engine_torque = 0.0;
  double in_range_sum = 0.0;
  long in_range_count = 0;
  std::size_t next_mass = 0;
  bool mass_pending = false;
  double next_mass_time = cfg.mass_change_interval;
  bool crashed = false;

  for (long k = 0; k < decisions && !crashed; ++k) {
    const Observation obs = observe(state, cfg);
    const VehicleParams params = env.params.with_mass(state.mass);
    const TorqueLimits envelope{env.drivetrain.brake_torque_floor(params),
                                env.drivetrain.envelope_max_wheel_torque()};
    const DecisionContext ctx{params, env.drivetrain, envelope, cfg.decision_dt};
    const Decision decision = controller.decide(obs, ctx);
    if (!std::isfinite(decision.torque)) throw std::runtime_error("controller proposed a non-finite torque");

    // Shifts that would over-rev the engine are refused by the transmission.
    int target_gear = std::clamp(state.gear + static_cast<int>(decision.gear_change), 1,
                                 env.drivetrain.gears());
    if (raw_engine_speed(state.host_velocity, target_gear, env.drivetrain, params) >
        env.drivetrain.max_speed) {
      target_gear = state.gear;
    }
    const int applied_shift = target_gear - state.gear;

    const double fuel_start = state.fuel_used;
    double engine_torque_sum = 0.0;
    double min_z = std::numeric_limits<double>::infinity();
    int taken = 0;
    for (int s = 0; s < substeps; ++s) {
      const VehicleParams p = env.params.with_mass(state.mass);
      const double lead_next = lead_speed(state.time + cfg.env_dt);
      const double lead_accel = (lead_next - state.lead_velocity) / cfg.env_dt;
      const TorqueLimits limits{env.drivetrain.brake_torque_floor(p),
                                max_wheel_torque(state.host_velocity, target_gear, env.drivetrain, p)};
      double torque = 0.0;
      bool intervened = false;
      if (filter != nullptr) {
        const FilterResult fr = filter_torque(state, decision.torque, lead_accel_estimate, *filter, p, limits);
        torque = fr.torque;
        // Envelope clamping alone is not an intervention.
        intervened = fr.torque != std::clamp(decision.torque, limits.min, limits.max);
      } else {
        torque = std::clamp(decision.torque, limits.min, limits.max);
      }
      if (intervened) ++report.interventions;
      engine_torque_sum += engine_point(torque, state.host_velocity, target_gear, env.drivetrain, p).torque;

      const double prev_lead = state.lead_velocity;
      state = step(state, torque, s == 0 ? static_cast<GearChange>(applied_shift) : GearChange::Hold,
                   lead_accel, cfg.env_dt, env.params, env.drivetrain);
      lead_accel_estimate = (state.lead_velocity - prev_lead) / cfg.env_dt;
      state.grade = cycle.grade_at(init.cycle_offset + state.time);
      if (!finite_state(state)) throw std::runtime_error("non-finite vehicle state");
      ++taken;
      ++report.steps;

      min_z = std::min(min_z, state.separation);
      if (state.separation < env.z0) ++report.violations;
      const bool in_range = state.separation <= cfg.sensor_range;
      if (in_range) {
        in_range_sum += state.separation;
        ++in_range_count;
      }
      if (env.record_trace) {
        report.trace.push_back({state.time, state.separation, state.host_velocity, state.lead_velocity,
                                state.gear, torque, state.fuel_used, state.host_distance, in_range,
                                intervened});
      }

      if (cfg.mass_change_interval > 0.0 && state.time >= next_mass_time - 1e-9) {
        mass_pending = next_mass < init.mass_schedule.size();
        next_mass_time += cfg.mass_change_interval;
      }
      if (mass_pending && state.host_velocity < kStandstill) {
        state.mass = init.mass_schedule[next_mass++];
        mass_pending = false;
      }
      if (state.separation <= 0.0) {
        report.collision = true;
        crashed = true;
        break;
      }
    }

    const Observation next_obs = observe(state, cfg);
    const double mean_engine_torque = engine_torque_sum / taken;
    RewardInputs in;
    in.fuel_rate = (state.fuel_used - fuel_start) / (taken * cfg.env_dt);
    in.engine_torque_change = mean_engine_torque - prev_engine_torque;
    in.gear_change = applied_shift;
    prev_engine_torque = mean_engine_torque;
    double reward = task_reward(next_obs, in, env.rewards);
    if (env.safety == SafetyMode::RewardShaping) reward += shaping_penalty(min_z, env.z0, env.rewards);
    report.total_reward += reward;
    ++report.decisions;
    report.min_separation = std::min(report.min_separation, min_z);
    if (env.record_decisions) report.records.push_back({obs, decision, reward, crashed, next_obs});
  }

  report.distance = state.host_distance;
  report.fuel = state.fuel_used;
  report.duration = state.time;
  report.mpg = miles_per_gallon(report.distance, report.fuel);
  report.mean_in_range_separation = in_range_count > 0 ? in_range_sum / static_cast<double>(in_range_count)
                                                       : std::numeric_limits<double>::quiet_NaN();
  return report;
}

EpisodeReport run_episode(Controller& controller, const EnvironmentSetup& env,
                          const DriveCycle& cycle, std::mt19937_64& rng) {
  const EpisodeInit init = randomize(env.scenario, cycle.duration(), env.z0, rng);
  return run_episode(controller, env, cycle, init);
}

std::vector<EpisodeReport> run_batch(const std::function<std::unique_ptr<Controller>()>& make,
                                     const EnvironmentSetup& env, const DriveCycle& cycle,
                                     std::size_t episodes, std::uint64_t seed, unsigned threads) {
  std::vector<EpisodeReport> reports(episodes);
  const auto run_one = [&](std::size_t i) {
    auto controller = make();
    std::mt19937_64 rng(seed + i);
    reports[i] = run_episode(*controller, env, cycle, rng);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(episodes)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < episodes; ++i) run_one(i);
    return reports;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < episodes; i += threads) run_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reports;
}

}  // namespace accsim
