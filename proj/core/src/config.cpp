#include "accsim/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

extern char** environ;

namespace accsim {

using nlohmann::json;

namespace {

struct Writer {
  json& j;
  template <class V>
  void operator()(const char* key, const V& v) {
    j[key] = v;
  }
};

// Merges present keys into the existing value, so missing keys keep
// whatever the target already holds.
struct Reader {
  const json& j;
  std::set<std::string> known;

  template <class V>
  void operator()(const char* key, V& v) {
    known.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
      if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError(key, "expected a number");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError(key, "expected true or false");
      } else if constexpr (std::is_integral_v<V>) {
        if (!it->is_number_integer()) throw ConfigError(key, "expected an integer");
        if constexpr (std::is_unsigned_v<V>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0) {
            throw ConfigError(key, "expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError(key, "expected a string");
      }
      nlohmann::adl_serializer<V>::from_json(*it, v);
    } catch (const ConfigError& e) {
      if (e.key() == key) throw;
      throw ConfigError(std::string(key) + "." + e.key(), e.detail());
    } catch (const json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }

  void finish() const {
    if (!j.is_object()) throw ConfigError("<section>", "expected an object");
    for (const auto& item : j.items()) {
      if (known.count(item.key()) == 0) throw ConfigError(item.key(), "unknown key");
    }
  }
};

template <class T, class Fields>
void write(json& j, const T& v, Fields fields) {
  j = json::object();
  Writer w{j};
  fields(w, const_cast<T&>(v));
}

template <class T, class Fields>
void read(const json& j, T& v, Fields fields) {
  if (!j.is_object()) throw ConfigError("<section>", "expected an object");
  Reader r{j, {}};
  fields(r, v);
  r.finish();
}

#define ACCSIM_JSON(Type, ...)                                                      \
  void to_json(json& j, const Type& v) { write(j, v, [](auto& io, Type& x) { __VA_ARGS__; }); } \
  void from_json(const json& j, Type& v) { read(j, v, [](auto& io, Type& x) { __VA_ARGS__; }); }

}  // namespace

ACCSIM_JSON(VehicleParams, io("mass", x.mass); io("frontal_area", x.frontal_area);
            io("drag_coeff", x.drag_coeff); io("rolling_coeff", x.rolling_coeff);
            io("wheel_radius", x.wheel_radius); io("air_density", x.air_density);
            io("gravity", x.gravity))

ACCSIM_JSON(TorqueCurve, io("speed", x.speed); io("torque", x.torque))

ACCSIM_JSON(FuelMap, io("speed_axis", x.speed_axis); io("torque_axis", x.torque_axis);
            io("rate", x.rate); io("idle_rate", x.idle_rate))

ACCSIM_JSON(WillansModel, io("friction", x.friction); io("indicated", x.indicated);
            io("lhv", x.lhv); io("grid_points", x.grid_points))

ACCSIM_JSON(Drivetrain, io("gear_ratios", x.gear_ratios); io("final_drive", x.final_drive);
            io("efficiency", x.efficiency); io("idle_speed", x.idle_speed);
            io("max_speed", x.max_speed); io("brake_decel_g", x.brake_decel_g);
            io("torque_limit", x.torque_limit); io("fuel_map", x.fuel_map))

ACCSIM_JSON(EcbfGains, io("k1", x.k1); io("k2", x.k2))

ACCSIM_JSON(WorstCase, io("host_speed", x.host_speed); io("lead_speed", x.lead_speed);
            io("lead_decel", x.lead_decel); io("grade", x.grade); io("mass", x.mass);
            io("initial_margin", x.initial_margin))

// `extreme` and `certified` are derived by certification, never configured.
ACCSIM_JSON(EcbfConfig, io("gains", x.gains); io("z0", x.z0); io("filter_margin", x.filter_margin);
            io("cert_dt", x.cert_dt); io("cert_horizon", x.cert_horizon);
            io("converge_tol_h", x.converge_tol_h); io("converge_tol_hdot", x.converge_tol_hdot))

ACCSIM_JSON(InRangeWeights, io("gap", x.gap); io("fuel", x.fuel); io("overspeed", x.overspeed);
            io("torque", x.torque); io("gear", x.gear))

ACCSIM_JSON(OutOfRangeWeights, io("speed", x.speed); io("fuel", x.fuel); io("torque", x.torque);
            io("gear", x.gear))

// fuel_rate and sensor_range are copied from the fuel map and the scenario.
ACCSIM_JSON(RewardNormalizers, io("relative_speed", x.relative_speed);
            io("engine_torque", x.engine_torque); io("gear_change", x.gear_change))

ACCSIM_JSON(ShapingPenalties, io("near", x.near); io("crash", x.crash))

ACCSIM_JSON(RewardWeights, io("in_range", x.in_range); io("out_of_range", x.out_of_range);
            io("normalizers", x.norm); io("shaping", x.shaping))

ACCSIM_JSON(PidGains, io("kp", x.kp); io("ki", x.ki); io("kd", x.kd))

ACCSIM_JSON(PidConfig, io("speed", x.speed); io("gap", x.gap);
            io("integrator_limit", x.integrator_limit); io("time_gap", x.time_gap);
            io("standstill_gap", x.standstill_gap); io("mass_scheduled", x.mass_scheduled);
            io("reference_mass", x.reference_mass))

ACCSIM_JSON(LearnConfig, io("hidden", x.hidden); io("layers", x.layers); io("actor_lr", x.actor_lr);
            io("critic_lr", x.critic_lr); io("gamma", x.gamma); io("lambda", x.lambda);
            io("retrace_steps", x.retrace_steps); io("action_samples", x.action_samples);
            io("expectation_samples", x.expectation_samples);
            io("batch_segments", x.batch_segments); io("dual_epsilon", x.dual_epsilon);
            io("kl_mean", x.kl_mean); io("kl_std", x.kl_std); io("kl_discrete", x.kl_discrete);
            io("multiplier_step_discrete", x.multiplier_step_discrete);
            io("multiplier_step_continuous", x.multiplier_step_continuous);
            io("initial_multiplier", x.initial_multiplier); io("target_sync", x.target_sync);
            io("value_scale", x.value_scale); io("update_every", x.update_every);
            io("warmup", x.warmup); io("replay_capacity", x.replay_capacity);
            io("initial_log_std", x.initial_log_std))

ACCSIM_JSON(ActionScale, io("torque_min", x.torque_min); io("torque_max", x.torque_max))

ACCSIM_JSON(ObservationBounds, io("speed_max", x.speed_max);
            io("relative_speed_max", x.relative_speed_max); io("separation_max", x.separation_max);
            io("gears", x.gears); io("mass_min", x.mass_min); io("mass_max", x.mass_max);
            io("grade_max", x.grade_max))

ACCSIM_JSON(ScenarioConfig, io("set_speed", x.set_speed); io("z_init_min", x.z_init_min);
            io("z_init_max", x.z_init_max); io("mass_min", x.mass_min); io("mass_max", x.mass_max);
            io("mass_change_interval", x.mass_change_interval);
            io("lead_noise_std", x.lead_noise_std); io("sensor_range", x.sensor_range);
            io("horizon", x.horizon); io("env_dt", x.env_dt); io("decision_dt", x.decision_dt);
            io("random_offset", x.random_offset))

ACCSIM_JSON(CycleSource, io("source", x.source); io("seed", x.seed))

ACCSIM_JSON(CycleSettings, io("train", x.train); io("eval", x.eval); io("duration", x.duration))

ACCSIM_JSON(TrainSettings, io("episodes", x.episodes); io("checkpoint_every", x.checkpoint_every);
            io("safety", x.safety))

ACCSIM_JSON(EvalSettings, io("episodes", x.episodes); io("sweep_masses", x.sweep_masses);
            io("threads", x.threads))

#undef ACCSIM_JSON

namespace {

template <class Fields>
void run_config_fields(Fields&& io, RunConfig& x) {
  io("vehicle", x.vehicle);
  io("drivetrain", x.drivetrain);
  io("fuel_model", x.fuel_model);
  io("ecbf", x.ecbf);
  io("worst_case", x.worst_case);
  io("rewards", x.rewards);
  io("pid", x.pid);
  io("learn", x.learn);
  io("action_scale", x.action_scale);
  io("observation", x.observation);
  io("scenario", x.scenario);
  io("cycles", x.cycles);
  io("train", x.train);
  io("eval", x.eval);
  io("out_dir", x.out_dir);
  io("seed", x.seed);
}

}  // namespace

void RunConfig::finalize() {
  pid.z0 = ecbf.z0;
  rewards.norm.sensor_range = scenario.sensor_range;
  rewards.norm.fuel_rate = drivetrain.fuel_map.max_rate();
  rewards.norm.engine_torque = std::max(rewards.norm.engine_torque, 0.0);
  scenario.seed = seed;
}

void RunConfig::validate() const {
  const auto wrap = [](const char* section, const auto& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(section, e.what());
    }
  };
  wrap("vehicle", [&] { vehicle.validate(); });
  wrap("drivetrain", [&] { drivetrain.validate(); });
  wrap("rewards", [&] { rewards.validate(); });
  wrap("pid", [&] { pid.validate(); });
  wrap("learn", [&] { learn.validate(); });
  wrap("scenario", [&] { scenario.validate(ecbf.z0); });
  wrap("train", [&] { (void)parse_safety_mode(train.safety); });
  if (!(ecbf.z0 > 0.0) || !(ecbf.filter_margin >= 0.0) || !(ecbf.cert_dt > 0.0) ||
      !(ecbf.cert_horizon > 0.0)) {
    throw ConfigError("ecbf", "z0, cert_dt and cert_horizon must be positive, filter_margin non-negative");
  }
  if (!(action_scale.torque_max > action_scale.torque_min)) {
    throw ConfigError("action_scale", "torque_max must exceed torque_min");
  }
  if (train.episodes < 0 || train.checkpoint_every < 0) {
    throw ConfigError("train", "episode counts must be non-negative");
  }
  if (eval.episodes < 1 || eval.sweep_masses.empty()) {
    throw ConfigError("eval", "need at least one episode and one sweep mass");
  }
  if (!(cycles.duration > 0.0)) throw ConfigError("cycles.duration", "must be positive");
}

json to_json(const RunConfig& cfg) {
  json j = json::object();
  run_config_fields(Writer{j}, const_cast<RunConfig&>(cfg));
  return j;
}

RunConfig config_from_json(const json& tree) {
  RunConfig cfg;
  Reader r{tree, {}};
  if (!tree.is_object()) throw ConfigError("<root>", "expected an object");
  run_config_fields(r, cfg);
  r.finish();
  // A map in the file wins; otherwise synthesise one from the fuel model
  // over the (possibly reconfigured) engine speed and torque range.
  const bool explicit_map = tree.contains("drivetrain") && tree["drivetrain"].contains("fuel_map");
  if (!explicit_map) {
    try {
      cfg.drivetrain.fuel_map = make_willans_map(cfg.fuel_model, cfg.drivetrain.idle_speed,
                                                 cfg.drivetrain.max_speed,
                                                 cfg.drivetrain.torque_limit.peak());
    } catch (const std::exception& e) {
      throw ConfigError("fuel_model", e.what());
    }
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

void apply_env_overrides(json& tree, const std::vector<std::pair<std::string, std::string>>& env) {
  static const std::string kPrefix = "ACCSIM_";
  for (const auto& [name, value] : env) {
    if (name.rfind(kPrefix, 0) != 0) continue;
    std::string rest = name.substr(kPrefix.size());
    std::transform(rest.begin(), rest.end(), rest.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    json* node = &tree;
    std::size_t pos = 0;
    while (true) {
      const std::size_t sep = rest.find("__", pos);
      const std::string key = rest.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos);
      if (key.empty()) throw ConfigError(name, "malformed override name");
      if (!node->is_object()) *node = json::object();
      if (sep == std::string::npos) {
        json parsed = json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
        break;
      }
      node = &(*node)[key];
      pos = sep + 2;
    }
  }
}

std::vector<std::pair<std::string, std::string>> environment_overrides() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string entry(*e);
    if (entry.rfind("ACCSIM_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& env) {
  json tree = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    try {
      tree = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ": " + e.what());
    }
  }
  apply_env_overrides(tree, env);
  return config_from_json(tree);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  for (const char* key : {"cycles", "train", "eval", "out_dir", "seed"}) j.erase(key);
  return fnv1a_hex(j.dump());
}

std::string model_hash(const LearnConfig& learn, const ActionScale& scale,
                       const ObservationBounds& bounds) {
  const json j = {{"hidden", learn.hidden},
                  {"layers", learn.layers},
                  {"action_scale", scale},
                  {"observation", bounds}};
  return fnv1a_hex(j.dump());
}

DriveCycle resolve_cycle(const CycleSource& src, double duration, double dt) {
  if (src.source == "urban") return resample(generate_cycle(CycleKind::Urban, duration, src.seed), dt);
  if (src.source == "highway") {
    return resample(generate_cycle(CycleKind::Highway, duration, src.seed), dt);
  }
  return load_cycle(src.source, dt);
}

EnvironmentSetup make_environment(const RunConfig& cfg, SafetyMode mode,
                                  CertificationResult* certification) {
  EnvironmentSetup env;
  env.params = cfg.vehicle;
  env.drivetrain = cfg.drivetrain;
  env.rewards = cfg.rewards;
  env.scenario = cfg.scenario;
  env.z0 = cfg.ecbf.z0;
  env.safety = mode;
  if (mode == SafetyMode::Ecbf) {
    env.filter = certify(cfg.ecbf, cfg.worst_case, cfg.vehicle, cfg.drivetrain, certification);
  }
  return env;
}

}  // namespace accsim
