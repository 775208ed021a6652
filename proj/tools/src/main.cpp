#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

void add_common(CLI::App* cmd, accsim::app::CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (defaults when omitted)");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--safety", o.safety, "Safety mode")
      ->check(CLI::IsMember({"ecbf", "reward-shaping", "none"}));
  cmd->add_option("--episodes", o.episodes, "Episode count");
  cmd->add_option("--out", o.out_dir, "Output directory");
  cmd->add_option("--cycle", o.cycle, "Drive cycle: urban, highway or a CSV path");
  cmd->add_flag("--unsafe-override", o.unsafe_override, "Run even if the ECBF gains do not certify");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace accsim::app;
  CLI::App app{"Adaptive cruise control with a certified barrier-function safety filter"};
  app.require_subcommand(1);

  VerifyOptions verify;
  auto* v = app.add_subcommand("verify-gains", "Certify ECBF gains against the worst case");
  add_common(v, verify.common);
  v->add_option("--k1", verify.k1, "Override k1");
  v->add_option("--k2", verify.k2, "Override k2");
  v->add_flag("--sweep", verify.sweep, "Certify a log-spaced gain grid instead");
  v->add_option("--sweep-min", verify.sweep_min, "Smallest gain in the sweep");
  v->add_option("--sweep-max", verify.sweep_max, "Largest gain in the sweep");
  v->add_option("--sweep-points", verify.sweep_points, "Grid points per gain");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train the RL agent; writes checkpoints and a learning curve");
  add_common(t, train.common);

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or the PID baseline");
  add_common(e, eval.common);
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint JSON");
  e->add_flag("--pid", eval.pid, "Evaluate the PID baseline");
  e->add_flag("--mass-sweep", eval.mass_sweep, "Also sweep the vehicle mass");
  e->add_flag("--allow-hash-mismatch", eval.allow_hash_mismatch,
              "Accept a checkpoint trained under a different config");

  CompareOptions compare;
  auto* c = app.add_subcommand("compare", "PID baseline versus a checkpoint on the evaluation cycle");
  add_common(c, compare.common);
  c->add_option("--checkpoint", compare.checkpoint, "Checkpoint JSON")->required();
  c->add_flag("--mass-sweep", compare.mass_sweep, "Also sweep the vehicle mass");
  c->add_flag("--allow-hash-mismatch", compare.allow_hash_mismatch,
              "Accept a checkpoint trained under a different config");

  CycleGenOptions gen;
  auto* g = app.add_subcommand("cycle-gen", "Write a synthetic drive cycle CSV");
  g->add_option("--kind", gen.kind, "urban or highway")->check(CLI::IsMember({"urban", "highway"}));
  g->add_option("--duration", gen.duration, "Seconds");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--out", gen.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kBadConfig;
  }

  if (*v) return cmd_verify_gains(verify, std::cerr);
  if (*t) return cmd_train(train, std::cerr);
  if (*e) return cmd_eval(eval, std::cerr);
  if (*c) return cmd_compare(compare, std::cerr);
  return cmd_cycle_gen(gen, std::cerr);
}
