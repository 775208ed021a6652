#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "accsim/agent.hpp"
#include "accsim/config.hpp"
#include "accsim/scenario.hpp"
#include "accsim/training.hpp"

namespace accsim::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// All artifacts go through here so each one carries the config hash and seed.
class ArtifactWriter {
 public:
  ArtifactWriter(fs::path dir, std::string hash, std::uint64_t seed)
      : dir_(std::move(dir)), hash_(std::move(hash)), seed_(seed) {
    fs::create_directories(dir_);
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }

  std::ofstream csv(const std::string& name, const std::string& header) const {
    std::ofstream out(dir_ / name);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << "# config_hash=" << hash_ << " seed=" << seed_ << '\n' << header << '\n';
    return out;
  }

  void json_file(const std::string& name, json body) const {
    body["config_hash"] = hash_;
    body["seed"] = seed_;
    std::ofstream out(dir_ / name);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << body.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string hash_;
  std::uint64_t seed_;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = load_config(o.config_path, environment_overrides());
  if (o.seed) cfg.seed = *o.seed;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  cfg.finalize();
  cfg.validate();
  return cfg;
}

struct Summary {
  std::string controller;
  std::string safety;
  double mass = std::nan("");
  long episodes = 0;
  double mpg = 0.0;
  double z_ir = std::nan("");
  long collisions = 0;
  long violations = 0;
  long interventions = 0;
  double reward = 0.0;
  double distance = 0.0;
  double fuel = 0.0;
};

Summary summarize(const std::vector<EpisodeReport>& reports, std::string controller,
                  SafetyMode mode) {
  Summary s;
  s.controller = std::move(controller);
  s.safety = to_string(mode);
  s.episodes = static_cast<long>(reports.size());
  double z_sum = 0.0;
  long z_n = 0;
  for (const auto& r : reports) {
    s.distance += r.distance;
    s.fuel += r.fuel;
    s.reward += r.total_reward / static_cast<double>(reports.size());
    s.collisions += r.collision ? 1 : 0;
    s.violations += r.violations;
    s.interventions += r.interventions;
    if (std::isfinite(r.mean_in_range_separation)) {
      z_sum += r.mean_in_range_separation;
      ++z_n;
    }
  }
  // Fleet fuel economy: total distance over total fuel.
  s.mpg = miles_per_gallon(s.distance, s.fuel);
  if (z_n > 0) s.z_ir = z_sum / static_cast<double>(z_n);
  return s;
}

json to_json(const Summary& s) {
  json j = {{"controller", s.controller}, {"safety", s.safety},     {"episodes", s.episodes},
            {"mpg", s.mpg},               {"collisions", s.collisions}, {"violations", s.violations},
            {"interventions", s.interventions}, {"mean_reward", s.reward}, {"distance_m", s.distance},
            {"fuel_g", s.fuel}};
  j["z_ir"] = std::isfinite(s.z_ir) ? json(s.z_ir) : json(nullptr);
  if (std::isfinite(s.mass)) j["mass_kg"] = s.mass;
  return j;
}

void write_trace(const ArtifactWriter& w, const std::string& name, const EpisodeReport& r) {
  auto out = w.csv(name, "t,z,v_h,v_l,gear,torque,fuel_g,distance_m,in_range,intervened");
  for (const auto& row : r.trace) {
    out << fmt(row.t) << ',' << fmt(row.separation) << ',' << fmt(row.host_velocity) << ','
        << fmt(row.lead_velocity) << ',' << row.gear << ',' << fmt(row.torque) << ','
        << fmt(row.fuel_used) << ',' << fmt(row.distance) << ',' << (row.in_range ? 1 : 0) << ','
        << (row.intervened ? 1 : 0) << '\n';
  }
}

void write_episodes(const ArtifactWriter& w, const std::string& name,
                    const std::vector<EpisodeReport>& reports) {
  auto out = w.csv(name, "episode,mass_kg,mpg,z_ir,min_z,collision,violations,interventions,reward");
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << i << ',' << fmt(r.mass) << ',' << fmt(r.mpg) << ',' << fmt(r.mean_in_range_separation)
        << ',' << fmt(r.min_separation) << ',' << (r.collision ? 1 : 0) << ',' << r.violations << ','
        << r.interventions << ',' << fmt(r.total_reward) << '\n';
  }
}

SafetyMode pick_safety(const CommonOptions& o, const std::string& fallback) {
  return parse_safety_mode(o.safety.value_or(fallback));
}

// Builds the environment; returns nullopt (after logging) when ECBF is
// requested but the gains do not certify and no override was given.
std::optional<EnvironmentSetup> environment_for(const RunConfig& cfg, SafetyMode mode, bool override_cert,
                                                std::ostream& log) {
  CertificationResult cert;
  EnvironmentSetup env = make_environment(cfg, mode, &cert);
  if (mode == SafetyMode::Ecbf && !env.filter->certified) {
    if (!override_cert) {
      log << "refusing to run: ECBF gains (" << cfg.ecbf.gains.k1 << ", " << cfg.ecbf.gains.k2
          << ") are not certified (" << cert.reason << "); pass --unsafe-override to run anyway\n";
      return std::nullopt;
    }
    log << "warning: running with UNCERTIFIED ECBF gains (--unsafe-override)\n";
    env.filter->certified = true;
  }
  return env;
}

struct Agent {
  std::unique_ptr<MpoAgent> agent;
  CheckpointMeta meta;
};

std::optional<Agent> load_agent(const std::string& path, const RunConfig& cfg, bool allow_mismatch,
                                std::ostream& log) {
  Agent a;
  a.agent = std::make_unique<MpoAgent>(load_checkpoint(path, &a.meta));
  const std::string hash = config_hash(cfg);
  if (a.meta.config_hash != hash) {
    if (!allow_mismatch) {
      log << "refusing to evaluate: checkpoint config hash " << a.meta.config_hash
          << " does not match current config hash " << hash
          << "; pass --allow-hash-mismatch to override\n";
      return std::nullopt;
    }
    log << "warning: checkpoint config hash " << a.meta.config_hash << " differs from " << hash << '\n';
  }
  return a;
}

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

struct EvalRun {
  Summary summary;
  std::vector<EpisodeReport> reports;
  std::vector<Summary> sweep;
};

EvalRun evaluate(const ControllerFactory& make, const std::string& name, const RunConfig& cfg,
                 const EnvironmentSetup& env_in, const DriveCycle& cycle, long episodes, bool mass_sweep) {
  EvalRun run;
  EnvironmentSetup env = env_in;
  env.record_trace = true;
  const std::uint64_t seed = cfg.seed + 1000003ULL;  // disjoint from training draws
  run.reports = run_batch(make, env, cycle, static_cast<std::size_t>(episodes), seed, cfg.eval.threads);
  run.summary = summarize(run.reports, name, env.safety);
  if (mass_sweep) {
    env.record_trace = false;
    for (double m : cfg.eval.sweep_masses) {
      EnvironmentSetup e = env;
      e.scenario.mass_min = e.scenario.mass_max = m;
      e.scenario.mass_change_interval = 0.0;
      auto reports = run_batch(make, e, cycle, static_cast<std::size_t>(episodes), seed, cfg.eval.threads);
      Summary s = summarize(reports, name, env.safety);
      s.mass = m;
      run.sweep.push_back(s);
    }
  }
  return run;
}

void write_sweep(const ArtifactWriter& w, const std::string& name, const std::vector<Summary>& sweep) {
  auto out = w.csv(name, "controller,mass_t,mpg,z_ir,collisions,violations");
  for (const auto& s : sweep) {
    out << s.controller << ',' << fmt(s.mass / 1000.0) << ',' << fmt(s.mpg) << ',' << fmt(s.z_ir) << ','
        << s.collisions << ',' << s.violations << '\n';
  }
}

void print_summary(std::ostream& log, const Summary& s) {
  log << s.controller << " [" << s.safety << "]"
      << (std::isfinite(s.mass) ? " mass " + fmt(s.mass / 1000.0) + " t" : std::string()) << ": mpg "
      << fmt(s.mpg) << ", z_ir " << fmt(s.z_ir) << " m, collisions " << s.collisions << ", violations "
      << s.violations << ", interventions " << s.interventions << '\n';
}

CycleSource eval_source(const RunConfig& cfg, const CommonOptions& o) {
  CycleSource src = cfg.cycles.eval;
  if (o.cycle) src.source = *o.cycle;
  return src;
}

template <class Fn>
int guarded(std::ostream& log, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    log << "invalid configuration: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::invalid_argument& e) {
    log << "invalid argument: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailed;
  }
}

}  // namespace

int cmd_verify_gains(const VerifyOptions& opts, std::ostream& log) {
  return guarded(log, [&] {
    RunConfig cfg = resolve_config(opts.common);
    if (opts.k1) cfg.ecbf.gains.k1 = *opts.k1;
    if (opts.k2) cfg.ecbf.gains.k2 = *opts.k2;
    const ArtifactWriter w(fs::path(cfg.out_dir), config_hash(cfg), cfg.seed);

    if (opts.sweep) {
      if (opts.sweep_points < 1 || !(opts.sweep_min > 0.0) || !(opts.sweep_max >= opts.sweep_min)) {
        throw std::invalid_argument("sweep needs points >= 1 and 0 < min <= max");
      }
      auto out = w.csv("gain_sweep.csv", "k1,k2,certified,min_h,reason");
      int certified = 0;
      const auto grid = [&](int i) {
        if (opts.sweep_points == 1) return opts.sweep_min;
        const double s = static_cast<double>(i) / (opts.sweep_points - 1);
        return opts.sweep_min * std::pow(opts.sweep_max / opts.sweep_min, s);
      };
      for (int i = 0; i < opts.sweep_points; ++i) {
        for (int k = 0; k < opts.sweep_points; ++k) {
          EcbfConfig e = cfg.ecbf;
          e.gains = {grid(i), grid(k)};
          CertificationResult r;
          certify(e, cfg.worst_case, cfg.vehicle, cfg.drivetrain, &r);
          certified += r.certified ? 1 : 0;
          out << fmt(e.gains.k1) << ',' << fmt(e.gains.k2) << ',' << (r.certified ? 1 : 0) << ','
              << fmt(r.min_h) << ',' << r.reason << '\n';
        }
      }
      log << certified << " of " << opts.sweep_points * opts.sweep_points
          << " gain pairs certified; wrote " << (w.dir() / "gain_sweep.csv").string() << '\n';
      return static_cast<int>(kOk);
    }

    CertificationResult r;
    const EcbfConfig e = certify(cfg.ecbf, cfg.worst_case, cfg.vehicle, cfg.drivetrain, &r);
    auto out = w.csv("h_trace.csv", "t,h,h_dot,mu,mu_saturated");
    for (const auto& s : r.trace) {
      out << fmt(s.t) << ',' << fmt(s.h) << ',' << fmt(s.h_dot) << ',' << fmt(s.mu) << ','
          << fmt(s.mu_saturated) << '\n';
    }
    w.json_file("verify_gains.json", {{"k1", e.gains.k1},
                                      {"k2", e.gains.k2},
                                      {"certified", r.certified},
                                      {"reason", r.reason},
                                      {"min_h", r.min_h},
                                      {"mu_at_tmax", e.extreme.at_tmax},
                                      {"mu_at_tmin", e.extreme.at_tmin},
                                      {"brake_decel_g", cfg.drivetrain.brake_decel_g}});
    log << (r.certified ? "certified" : "uncertified") << ": K = [" << fmt(e.gains.k1) << ", "
        << fmt(e.gains.k2) << "], min h = " << fmt(r.min_h) << " m"
        << (r.reason.empty() ? std::string() : " (" + r.reason + ")") << '\n';
    return static_cast<int>(r.certified ? kOk : kFailed);
  });
}

int cmd_train(const TrainOptions& opts, std::ostream& log) {
  return guarded(log, [&]() -> int {
    RunConfig cfg = resolve_config(opts.common);
    if (opts.common.episodes) cfg.train.episodes = *opts.common.episodes;
    if (cfg.train.episodes < 0) throw std::invalid_argument("--episodes must be non-negative");
    const SafetyMode mode = pick_safety(opts.common, cfg.train.safety);
    CycleSource src = cfg.cycles.train;
    if (opts.common.cycle) src.source = *opts.common.cycle;

    const auto env = environment_for(cfg, mode, opts.common.unsafe_override, log);
    if (!env) return kRefused;
    const DriveCycle cycle = resolve_cycle(src, cfg.cycles.duration, cfg.scenario.env_dt);

    const std::string hash = config_hash(cfg);
    const ArtifactWriter w(fs::path(cfg.out_dir), hash, cfg.seed);
    MpoAgent agent(cfg.learn, cfg.action_scale, cfg.observation, cfg.seed);
    ReplayBuffer buffer(cfg.learn.replay_capacity);
    CheckpointMeta meta{hash, model_hash(cfg.learn, cfg.action_scale, cfg.observation), cfg.seed, 0};
    const auto checkpoint = [&](const std::string& name, long episodes) {
      meta.episodes = episodes;
      save_checkpoint((w.dir() / name).string(), agent, meta);
    };

    auto curve_out = w.csv("learning_curve.csv",
                           "episode,reward,mpg,collisions,violations,interventions,min_z,critic_loss,updates");
    std::vector<CurveRow> history;
    accsim::TrainOptions t;
    t.episodes = cfg.train.episodes;
    t.seed = cfg.seed;
    t.checkpoint_every = cfg.train.checkpoint_every;
    t.on_checkpoint = [&](long ep) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06ld.json", ep);
      checkpoint(name, ep);
    };
    t.on_episode = [&](const CurveRow& r) {
      history.push_back(r);
      curve_out << r.episode << ',' << fmt(r.reward) << ',' << fmt(r.mpg) << ',' << (r.collision ? 1 : 0)
                << ',' << r.violations << ',' << r.interventions << ',' << fmt(r.min_separation) << ','
                << fmt(r.critic_loss) << ',' << r.updates << '\n';
      if ((r.episode + 1) % 100 == 0) {
        log << "episode " << r.episode + 1 << "/" << cfg.train.episodes << ": reward " << fmt(r.reward)
            << ", mpg " << fmt(r.mpg) << ", updates " << r.updates << '\n';
      }
    };
    log << "training " << cfg.train.episodes << " episodes on " << cycle.name << " with safety "
        << to_string(mode) << " (config " << hash << ", seed " << cfg.seed << ")\n";
    try {
      train(agent, buffer, *env, cycle, t);
    } catch (const std::runtime_error& e) {
      curve_out.flush();
      checkpoint("checkpoint_failed.json", static_cast<long>(history.size()));
      json dump = {{"error", e.what()}, {"episodes_completed", history.size()}, {"updates", agent.updates()}};
      json tail = json::array();
      for (std::size_t i = history.size() > 10 ? history.size() - 10 : 0; i < history.size(); ++i) {
        tail.push_back({{"episode", history[i].episode},
                        {"reward", history[i].reward},
                        {"critic_loss", history[i].critic_loss}});
      }
      dump["recent_episodes"] = tail;
      w.json_file("diagnostic.json", dump);
      log << "training aborted: " << e.what() << "; state dumped to " << (w.dir() / "diagnostic.json").string()
          << '\n';
      return kFailed;
    }
    checkpoint("checkpoint_final.json", cfg.train.episodes);
    log << "wrote " << (w.dir() / "checkpoint_final.json").string() << '\n';
    return kOk;
  });
}

int cmd_eval(const EvalOptions& opts, std::ostream& log) {
  return guarded(log, [&]() -> int {
    RunConfig cfg = resolve_config(opts.common);
    if (opts.common.episodes) cfg.eval.episodes = *opts.common.episodes;
    if (cfg.eval.episodes < 1) throw std::invalid_argument("--episodes must be positive for eval");
    if (opts.pid == !opts.checkpoint.empty()) {
      throw std::invalid_argument("choose exactly one of --checkpoint PATH or --pid");
    }
    const SafetyMode mode = pick_safety(opts.common, opts.pid ? "none" : "ecbf");
    const auto env = environment_for(cfg, mode, opts.common.unsafe_override, log);
    if (!env) return kRefused;

    std::optional<Agent> agent;
    ControllerFactory make;
    std::string name = "pid";
    if (opts.pid) {
      make = [&] { return std::make_unique<PidDriver>(cfg.pid); };
    } else {
      agent = load_agent(opts.checkpoint, cfg, opts.allow_hash_mismatch, log);
      if (!agent) return kRefused;
      MpoAgent* a = agent->agent.get();
      make = [a] { return std::make_unique<RlDriver>(*a, false); };
      name = "rl";
    }
    const CycleSource src = eval_source(cfg, opts.common);
    const DriveCycle cycle = resolve_cycle(src, cfg.cycles.duration, cfg.scenario.env_dt);
    const ArtifactWriter w(fs::path(cfg.out_dir), config_hash(cfg), cfg.seed);
    const EvalRun run = evaluate(make, name, cfg, *env, cycle, cfg.eval.episodes, opts.mass_sweep);

    print_summary(log, run.summary);
    write_episodes(w, "eval_episodes.csv", run.reports);
    write_trace(w, "trace.csv", run.reports.front());
    json body = {{"cycle", cycle.name}, {"summary", to_json(run.summary)}};
    if (opts.mass_sweep) {
      json rows = json::array();
      for (const auto& s : run.sweep) {
        print_summary(log, s);
        rows.push_back(to_json(s));
      }
      body["mass_sweep"] = rows;
      write_sweep(w, "mass_sweep.csv", run.sweep);
    }
    if (agent) body["checkpoint_config_hash"] = agent->meta.config_hash;
    w.json_file("eval_summary.json", body);
    return kOk;
  });
}

int cmd_compare(const CompareOptions& opts, std::ostream& log) {
  return guarded(log, [&]() -> int {
    RunConfig cfg = resolve_config(opts.common);
    if (opts.common.episodes) cfg.eval.episodes = *opts.common.episodes;
    if (cfg.eval.episodes < 1) throw std::invalid_argument("--episodes must be positive for compare");
    if (opts.checkpoint.empty()) throw std::invalid_argument("compare needs --checkpoint PATH");
    const SafetyMode rl_mode = pick_safety(opts.common, "ecbf");
    const auto rl_env = environment_for(cfg, rl_mode, opts.common.unsafe_override, log);
    if (!rl_env) return kRefused;
    const EnvironmentSetup pid_env = make_environment(cfg, SafetyMode::None);
    auto agent = load_agent(opts.checkpoint, cfg, opts.allow_hash_mismatch, log);
    if (!agent) return kRefused;
    MpoAgent* a = agent->agent.get();

    const DriveCycle cycle = resolve_cycle(eval_source(cfg, opts.common), cfg.cycles.duration,
                                           cfg.scenario.env_dt);
    const ArtifactWriter w(fs::path(cfg.out_dir), config_hash(cfg), cfg.seed);
    const EvalRun pid = evaluate([&] { return std::make_unique<PidDriver>(cfg.pid); }, "pid", cfg, pid_env,
                                 cycle, cfg.eval.episodes, opts.mass_sweep);
    const EvalRun rl = evaluate([a] { return std::make_unique<RlDriver>(*a, false); }, "rl", cfg, *rl_env,
                                cycle, cfg.eval.episodes, opts.mass_sweep);
    print_summary(log, pid.summary);
    print_summary(log, rl.summary);
    const double gain = 100.0 * (rl.summary.mpg - pid.summary.mpg) / pid.summary.mpg;
    log << "mpg change vs pid: " << fmt(gain) << " %\n";

    json body = {{"cycle", cycle.name},
                 {"pid", to_json(pid.summary)},
                 {"rl", to_json(rl.summary)},
                 {"mpg_gain_percent", gain}};
    auto table = w.csv("comparison.csv", "controller,safety,mpg,mpg_gain_percent,z_ir,collisions,violations");
    table << "pid," << pid.summary.safety << ',' << fmt(pid.summary.mpg) << ",0," << fmt(pid.summary.z_ir) << ','
          << pid.summary.collisions << ',' << pid.summary.violations << '\n';
    table << "rl," << rl.summary.safety << ',' << fmt(rl.summary.mpg) << ',' << fmt(gain) << ','
          << fmt(rl.summary.z_ir) << ',' << rl.summary.collisions << ',' << rl.summary.violations << '\n';
    if (opts.mass_sweep) {
      std::vector<Summary> both = pid.sweep;
      both.insert(both.end(), rl.sweep.begin(), rl.sweep.end());
      write_sweep(w, "mass_sweep.csv", both);
      json rows = json::array();
      for (const auto& s : both) rows.push_back(to_json(s));
      body["mass_sweep"] = rows;
    }
    write_trace(w, "trace_pid.csv", pid.reports.front());
    write_trace(w, "trace_rl.csv", rl.reports.front());
    w.json_file("comparison.json", body);
    return kOk;
  });
}

int cmd_cycle_gen(const CycleGenOptions& opts, std::ostream& log) {
  return guarded(log, [&]() -> int {
    CycleKind kind;
    if (opts.kind == "urban") {
      kind = CycleKind::Urban;
    } else if (opts.kind == "highway") {
      kind = CycleKind::Highway;
    } else {
      throw std::invalid_argument("--kind must be urban or highway");
    }
    if (!(opts.duration > 0.0)) throw std::invalid_argument("--duration must be positive");
    if (opts.out.empty()) throw std::invalid_argument("--out FILE is required");
    const DriveCycle c = generate_cycle(kind, opts.duration, opts.seed);
    const fs::path parent = fs::path(opts.out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    save_cycle(opts.out, c, "kind=" + opts.kind + " seed=" + std::to_string(opts.seed));
    log << "wrote " << c.name << " (" << fmt(c.duration()) << " s, " << fmt(c.distance() / 1000.0)
        << " km, mean " << fmt(c.distance() / c.duration()) << " m/s) to " << opts.out << '\n';
    return kOk;
  });
}

}  // namespace accsim::app
