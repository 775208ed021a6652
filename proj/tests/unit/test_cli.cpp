#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "accsim/safety.hpp"
#include "accsim/config.hpp"
#include "commands.hpp"

using namespace accsim;
using namespace accsim::app;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  std::string file(const std::string& name, const std::string& body) const {
    std::ofstream(dir / name) << body;
    return (dir / name).string();
  }
  std::string sub(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Short episodes keep these runs to a few seconds.
constexpr const char* kQuick = R"({
  "scenario": {"horizon": 20},
  "eval": {"episodes": 2, "sweep_masses": [5000, 10000]},
  "cycles": {"duration": 300},
  "learn": {"hidden": 8, "layers": 1, "warmup": 10, "batch_segments": 2}
})";

CommonOptions common(const std::string& config, const std::string& out) {
  CommonOptions c;
  c.config_path = config;
  c.out_dir = out;
  return c;
}

}  // namespace

TEST_CASE("verify-gains") {
  Scratch s("accsim_cli_verify");
  std::ostringstream log;

  SUBCASE("reference gains certify and write the trace") {
    VerifyOptions o;
    o.common = common("", s.sub("a"));
    CHECK(cmd_verify_gains(o, log) == kOk);
    const std::string trace = slurp(s.dir / "a" / "h_trace.csv");
    CHECK(trace.rfind("# config_hash=", 0) == 0);
    CHECK(trace.find("t,h,h_dot,mu,mu_saturated\n") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(s.dir / "a" / "verify_gains.json"));
    CHECK(j["certified"] == true);
    CHECK(j.contains("config_hash"));
    CHECK(j.contains("seed"));
  }
  SUBCASE("zero gains exit non-zero") {
    VerifyOptions o;
    o.common = common("", s.sub("b"));
    o.k1 = 0.0;
    o.k2 = 0.0;
    CHECK(cmd_verify_gains(o, log) != kOk);
  }
  SUBCASE("0.6 g of brake authority does not certify") {
    VerifyOptions o;
    o.common = common(s.file("weak.json", R"({"drivetrain": {"brake_decel_g": 0.6}})"), s.sub("c"));
    CHECK(cmd_verify_gains(o, log) == kFailed);
  }
  SUBCASE("sweep verdicts match individual runs") {
    VerifyOptions o;
    o.common = common("", s.sub("d"));
    o.sweep = true;
    o.sweep_points = 4;
    CHECK(cmd_verify_gains(o, log) == kOk);
    std::ifstream in(s.dir / "d" / "gain_sweep.csv");
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    CHECK(line == "k1,k2,certified,min_h,reason");
    const RunConfig cfg = load_config("");
    int rows = 0;
    while (std::getline(in, line)) {
      std::stringstream row(line);
      std::string k1, k2, cert;
      std::getline(row, k1, ',');
      std::getline(row, k2, ',');
      std::getline(row, cert, ',');
      EcbfConfig e = cfg.ecbf;
      e.gains = {std::stod(k1), std::stod(k2)};
      const bool ok = certify(e, cfg.worst_case, cfg.vehicle, cfg.drivetrain).certified;
      CHECK((cert == "1") == ok);
      ++rows;
    }
    CHECK(rows == 16);
  }
  SUBCASE("bad configuration exits 2") {
    VerifyOptions o;
    o.common = common(s.file("bad.json", R"({"ecbf": {"zz": 1}})"), s.sub("e"));
    CHECK(cmd_verify_gains(o, log) == kBadConfig);
  }
}

TEST_CASE("train and eval") {
  Scratch s("accsim_cli_train");
  std::ostringstream log;
  const std::string cfg = s.file("quick.json", kQuick);

  TrainOptions t;
  t.common = common(cfg, s.sub("train"));
  t.common.episodes = 0;
  REQUIRE(cmd_train(t, log) == kOk);
  const fs::path ckpt = s.dir / "train" / "checkpoint_final.json";

  SUBCASE("zero episodes writes only the initial checkpoint") {
    CHECK(fs::exists(ckpt));
    int checkpoints = 0;
    for (const auto& e : fs::directory_iterator(s.dir / "train")) {
      if (e.path().extension() == ".json") ++checkpoints;
    }
    CHECK(checkpoints == 1);
    CheckpointMeta meta;
    (void)load_checkpoint(ckpt.string(), &meta);
    CHECK(meta.episodes == 0);
  }
  SUBCASE("uncertified ECBF is refused unless overridden") {
    const std::string weak =
        s.file("weak.json", R"({"scenario": {"horizon": 20}, "eval": {"episodes": 1},
                               "drivetrain": {"brake_decel_g": 0.6}})");
    EvalOptions e;
    e.common = common(weak, s.sub("weak"));
    e.pid = true;
    e.common.safety = "ecbf";
    CHECK(cmd_eval(e, log) == kRefused);
    TrainOptions tw;
    tw.common = common(weak, s.sub("weak_train"));
    tw.common.episodes = 0;
    CHECK(cmd_train(tw, log) == kRefused);
    e.common.unsafe_override = true;
    CHECK(cmd_eval(e, log) == kOk);
  }
  SUBCASE("checkpoint from another config is refused") {
    const std::string other = s.file("other.json", R"({"scenario": {"horizon": 20, "set_speed": 20},
        "eval": {"episodes": 1}, "learn": {"hidden": 8, "layers": 1}})");
    EvalOptions e;
    e.common = common(other, s.sub("other"));
    e.checkpoint = ckpt.string();
    CHECK(cmd_eval(e, log) == kRefused);
    e.allow_hash_mismatch = true;
    CHECK(cmd_eval(e, log) == kOk);
  }
  SUBCASE("evaluation is reproducible and sweeps the masses") {
    EvalOptions e;
    e.common = common(cfg, s.sub("eval1"));
    e.checkpoint = ckpt.string();
    e.mass_sweep = true;
    REQUIRE(cmd_eval(e, log) == kOk);
    e.common.out_dir = s.sub("eval2");
    REQUIRE(cmd_eval(e, log) == kOk);
    for (const char* f : {"eval_episodes.csv", "trace.csv", "eval_summary.json", "mass_sweep.csv"}) {
      CHECK(slurp(s.dir / "eval1" / f) == slurp(s.dir / "eval2" / f));
    }
    std::ifstream sweep(s.dir / "eval1" / "mass_sweep.csv");
    std::string line;
    int rows = -2;
    while (std::getline(sweep, line)) ++rows;
    CHECK(rows == 2);
  }
  SUBCASE("compare writes both controllers") {
    CompareOptions c;
    c.common = common(cfg, s.sub("cmp"));
    c.checkpoint = ckpt.string();
    REQUIRE(cmd_compare(c, log) == kOk);
    const auto j = nlohmann::json::parse(slurp(s.dir / "cmp" / "comparison.json"));
    CHECK(j.contains("mpg_gain_percent"));
    CHECK(fs::exists(s.dir / "cmp" / "trace_pid.csv"));
    CHECK(fs::exists(s.dir / "cmp" / "trace_rl.csv"));
  }
}

TEST_CASE("training runs are bit-exact") {
  Scratch s("accsim_cli_det");
  std::ostringstream log;
  const std::string cfg = s.file("quick.json", kQuick);
  for (const char* out : {"a", "b"}) {
    TrainOptions t;
    t.common = common(cfg, s.sub(out));
    t.common.episodes = 3;
    REQUIRE(cmd_train(t, log) == kOk);
  }
  CHECK(slurp(s.dir / "a" / "learning_curve.csv") == slurp(s.dir / "b" / "learning_curve.csv"));
  CHECK(slurp(s.dir / "a" / "checkpoint_final.json") == slurp(s.dir / "b" / "checkpoint_final.json"));
}

TEST_CASE("cycle-gen") {
  Scratch s("accsim_cli_cycle");
  std::ostringstream log;
  CycleGenOptions o;
  o.kind = "highway";
  o.duration = 120;
  o.out = s.sub("hw.csv");
  CHECK(cmd_cycle_gen(o, log) == kOk);
  const DriveCycle c = load_cycle(o.out, 1.0);
  CHECK(c.speed.size() == 121);
}
