#pragma once

// Run configuration: one JSON tree with a section per module. Loading starts
// from the built-in defaults and merges the file on top; unknown keys are
// errors. Environment variables ACCSIM_<SECTION>__<KEY>=<json value> are
// applied after the file.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "accsim/agent.hpp"
#include "accsim/control.hpp"
#include "accsim/dynamics.hpp"
#include "accsim/policy.hpp"
#include "accsim/safety.hpp"
#include "accsim/scenario.hpp"

namespace accsim {

/// Invalid or unknown configuration entry; `key` is the dotted path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& detail)
      : std::invalid_argument(key + ": " + detail), key_(std::move(key)), detail_(detail) {}
  [[nodiscard]] const std::string& key() const { return key_; }
  [[nodiscard]] const std::string& detail() const { return detail_; }

 private:
  std::string key_;
  std::string detail_;
};

void to_json(nlohmann::json& j, const VehicleParams& v);
void from_json(const nlohmann::json& j, VehicleParams& v);
void to_json(nlohmann::json& j, const TorqueCurve& v);
void from_json(const nlohmann::json& j, TorqueCurve& v);
void to_json(nlohmann::json& j, const FuelMap& v);
void from_json(const nlohmann::json& j, FuelMap& v);
void to_json(nlohmann::json& j, const WillansModel& v);
void from_json(const nlohmann::json& j, WillansModel& v);
void to_json(nlohmann::json& j, const Drivetrain& v);
void from_json(const nlohmann::json& j, Drivetrain& v);
void to_json(nlohmann::json& j, const EcbfGains& v);
void from_json(const nlohmann::json& j, EcbfGains& v);
void to_json(nlohmann::json& j, const WorstCase& v);
void from_json(const nlohmann::json& j, WorstCase& v);
void to_json(nlohmann::json& j, const EcbfConfig& v);
void from_json(const nlohmann::json& j, EcbfConfig& v);
void to_json(nlohmann::json& j, const InRangeWeights& v);
void from_json(const nlohmann::json& j, InRangeWeights& v);
void to_json(nlohmann::json& j, const OutOfRangeWeights& v);
void from_json(const nlohmann::json& j, OutOfRangeWeights& v);
void to_json(nlohmann::json& j, const RewardNormalizers& v);
void from_json(const nlohmann::json& j, RewardNormalizers& v);
void to_json(nlohmann::json& j, const ShapingPenalties& v);
void from_json(const nlohmann::json& j, ShapingPenalties& v);
void to_json(nlohmann::json& j, const RewardWeights& v);
void from_json(const nlohmann::json& j, RewardWeights& v);
void to_json(nlohmann::json& j, const PidGains& v);
void from_json(const nlohmann::json& j, PidGains& v);
void to_json(nlohmann::json& j, const PidConfig& v);
void from_json(const nlohmann::json& j, PidConfig& v);
void to_json(nlohmann::json& j, const LearnConfig& v);
void from_json(const nlohmann::json& j, LearnConfig& v);
void to_json(nlohmann::json& j, const ActionScale& v);
void from_json(const nlohmann::json& j, ActionScale& v);
void to_json(nlohmann::json& j, const ObservationBounds& v);
void from_json(const nlohmann::json& j, ObservationBounds& v);
void to_json(nlohmann::json& j, const ScenarioConfig& v);
void from_json(const nlohmann::json& j, ScenarioConfig& v);

/// A drive cycle reference: "urban", "highway" (synthetic, with seed) or a
/// path to a CSV file.
struct CycleSource {
  std::string source = "urban";
  std::uint64_t seed = 11;
};

struct CycleSettings {
  CycleSource train{"urban", 11};
  CycleSource eval{"urban", 29};  // held out: same generator, unseen realisation
  double duration = 1800.0;       // s, synthetic cycles only
};

struct TrainSettings {
  long episodes = 2000;
  long checkpoint_every = 500;  // episodes; 0 keeps only the final checkpoint
  std::string safety = "ecbf";
};

struct EvalSettings {
  long episodes = 10;
  std::vector<double> sweep_masses{5000.0, 6000.0, 7000.0, 8000.0, 9000.0, 10000.0};
  unsigned threads = 1;
};

void to_json(nlohmann::json& j, const CycleSource& v);
void from_json(const nlohmann::json& j, CycleSource& v);
void to_json(nlohmann::json& j, const CycleSettings& v);
void from_json(const nlohmann::json& j, CycleSettings& v);
void to_json(nlohmann::json& j, const TrainSettings& v);
void from_json(const nlohmann::json& j, TrainSettings& v);
void to_json(nlohmann::json& j, const EvalSettings& v);
void from_json(const nlohmann::json& j, EvalSettings& v);

struct RunConfig {
  VehicleParams vehicle;
  Drivetrain drivetrain = reference_drivetrain();
  WillansModel fuel_model;
  EcbfConfig ecbf;
  WorstCase worst_case;
  RewardWeights rewards;
  PidConfig pid;
  LearnConfig learn;
  ActionScale action_scale;
  ObservationBounds observation;
  ScenarioConfig scenario;
  CycleSettings cycles;
  TrainSettings train;
  EvalSettings eval;
  std::string out_dir = "out";
  std::uint64_t seed = 1;

  /// Propagates shared values (z0, sensor range, fuel normalizer, seed).
  void finalize();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Merge `tree` over the defaults. Throws ConfigError on unknown keys or
/// wrong types, then validates.
RunConfig config_from_json(const nlohmann::json& tree);

/// ACCSIM_LEARN__HIDDEN=32 -> tree["learn"]["hidden"] = 32. Values that do
/// not parse as JSON are taken as strings.
void apply_env_overrides(nlohmann::json& tree,
                         const std::vector<std::pair<std::string, std::string>>& env);

/// Current process environment filtered to the ACCSIM_ prefix.
std::vector<std::pair<std::string, std::string>> environment_overrides();

/// Reads `path` (empty means defaults only), applies `env`, merges, validates.
RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& env = {});

/// FNV-1a 64 of the canonical JSON of the problem-defining sections
/// (everything except train/eval/cycles bookkeeping, out_dir and seed).
std::string config_hash(const RunConfig& cfg);

/// Hash of the network architecture and action/observation scaling.
std::string model_hash(const LearnConfig& learn, const ActionScale& scale,
                       const ObservationBounds& bounds);

std::string fnv1a_hex(const std::string& bytes);

/// Resolve a CycleSource to a cycle resampled at `dt`.
DriveCycle resolve_cycle(const CycleSource& src, double duration, double dt);

/// Environment wired from the config for the given safety mode. Certifies
/// the ECBF gains when mode == Ecbf; `certified` reports the verdict.
EnvironmentSetup make_environment(const RunConfig& cfg, SafetyMode mode,
                                  CertificationResult* certification = nullptr);

}  // namespace accsim
