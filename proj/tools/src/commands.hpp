#pragma once

// Subcommand implementations behind the accsim CLI. Each returns a process
// exit code and writes human-readable progress to `log`.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace accsim::app {

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,        // run-time failure or uncertified gains
  kBadConfig = 2,     // invalid configuration or arguments
  kRefused = 3,       // uncertified filter or checkpoint/config mismatch
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> safety;
  std::optional<long> episodes;
  std::optional<std::string> out_dir;
  std::optional<std::string> cycle;
  bool unsafe_override = false;
};

struct VerifyOptions {
  CommonOptions common;
  std::optional<double> k1;
  std::optional<double> k2;
  bool sweep = false;
  double sweep_min = 0.05;
  double sweep_max = 10.0;
  int sweep_points = 10;
};

struct TrainOptions {
  CommonOptions common;
};

struct EvalOptions {
  CommonOptions common;
  std::string checkpoint;  // empty with pid = true
  bool pid = false;
  bool mass_sweep = false;
  bool allow_hash_mismatch = false;
};

struct CompareOptions {
  CommonOptions common;
  std::string checkpoint;
  bool mass_sweep = false;
  bool allow_hash_mismatch = false;
};

struct CycleGenOptions {
  std::string kind = "urban";
  double duration = 1800.0;
  std::uint64_t seed = 11;
  std::string out;
};

int cmd_verify_gains(const VerifyOptions& opts, std::ostream& log);
int cmd_train(const TrainOptions& opts, std::ostream& log);
int cmd_eval(const EvalOptions& opts, std::ostream& log);
int cmd_compare(const CompareOptions& opts, std::ostream& log);
int cmd_cycle_gen(const CycleGenOptions& opts, std::ostream& log);

}  // namespace accsim::app
