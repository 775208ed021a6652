#include "accsim/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "accsim/config.hpp"

namespace accsim {

namespace {

constexpr const char* kCheckpointFormat = "accsim-checkpoint";
constexpr int kCheckpointVersion = 1;

double log_mean_exp_term(const Eigen::MatrixXd& q, double eta) {
  double acc = 0.0;
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double m = q.row(s).maxCoeff();
    const double mean = ((q.row(s).array() - m) / eta).exp().mean();
    acc += m + eta * std::log(mean);
  }
  return acc / static_cast<double>(q.rows());
}

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j, Eigen::Index expected, const char* what) {
  auto values = j.get<std::vector<double>>();
  if (expected >= 0 && static_cast<Eigen::Index>(values.size()) != expected) {
    throw std::runtime_error(std::string("checkpoint: size mismatch for ") + what);
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json adam_to_json(const Adam& a) {
  return {{"lr", a.lr}, {"m", vec_to_json(a.m)}, {"v", vec_to_json(a.v)}, {"t", a.t}};
}

void adam_from_json(const nlohmann::json& j, Adam& a) {
  a.lr = j.at("lr").get<double>();
  a.m = vec_from_json(j.at("m"), -1, "adam.m");
  a.v = vec_from_json(j.at("v"), -1, "adam.v");
  a.t = j.at("t").get<long>();
}

}  // namespace

void LearnConfig::validate() const {
  if (hidden < 1 || layers < 1) throw std::invalid_argument("learn: network must have hidden units");
  if (!(actor_lr > 0 && critic_lr > 0)) throw std::invalid_argument("learn: learning rates must be positive");
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("learn: gamma must lie in (0, 1)");
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("learn: lambda must lie in [0, 1]");
  if (retrace_steps < 1 || action_samples < 1 || expectation_samples < 1 || batch_segments < 1) {
    throw std::invalid_argument("learn: sample counts must be positive");
  }
  if (!(dual_epsilon > 0 && kl_mean > 0 && kl_std > 0 && kl_discrete > 0)) {
    throw std::invalid_argument("learn: KL bounds must be positive");
  }
  if (target_sync < 1 || update_every < 1 || replay_capacity < 1 || !(value_scale > 0)) {
    throw std::invalid_argument("learn: invalid schedule");
  }
}

double solve_temperature(const Eigen::MatrixXd& q, double epsilon) {
  const auto dual = [&](double log_eta) {
    const double eta = std::exp(log_eta);
    return eta * epsilon + log_mean_exp_term(q, eta);
  };
  double lo = std::log(1e-8);
  double hi = std::log(1e8);
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - invphi * (hi - lo);
  double b = lo + invphi * (hi - lo);
  double fa = dual(a);
  double fb = dual(b);
  for (int it = 0; it < 120; ++it) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - invphi * (hi - lo);
      fa = dual(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + invphi * (hi - lo);
      fb = dual(b);
    }
  }
  return std::exp(0.5 * (lo + hi));
}

Eigen::MatrixXd sample_weights(const Eigen::MatrixXd& q, double eta) {
  Eigen::MatrixXd w(q.rows(), q.cols());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double m = q.row(s).maxCoeff();
    w.row(s) = ((q.row(s).array() - m) / eta).exp().matrix();
    w.row(s) /= w.row(s).sum();
  }
  return w;
}

Eigen::VectorXd critic_loss_gradient(const Critic& critic, const Eigen::MatrixXd& inputs,
                                     const Eigen::RowVectorXd& targets, double* loss) {
  if (inputs.cols() != targets.size()) throw std::invalid_argument("critic: batch size mismatch");
  Mlp::Cache cache;
  const Eigen::MatrixXd q = critic.net().forward(inputs, &cache);
  const Eigen::RowVectorXd residual = q.row(0) - targets;
  const auto n = static_cast<double>(targets.size());
  if (loss != nullptr) *loss = residual.squaredNorm() / n;
  return critic.net().backward(cache, (2.0 / n) * residual);
}

double critic_update(Critic& critic, Adam& opt, const Eigen::MatrixXd& inputs,
                     const Eigen::RowVectorXd& targets) {
  double loss = 0.0;
  const Eigen::VectorXd grad = critic_loss_gradient(critic, inputs, targets, &loss);
  opt.step(critic.net().params(), grad);
  return loss;
}

ActorStats actor_update(HybridPolicy& policy, const HybridPolicy& target, Adam& opt,
                        PolicyDuals& duals, const Eigen::MatrixXd& states, const QFunction& q,
                        const LearnConfig& cfg, std::mt19937_64& rng) {
  const Eigen::Index n_states = states.cols();
  const int m = cfg.action_samples;
  const Eigen::MatrixXd old_raw = target.raw(states);
  std::vector<PolicyHead> old(static_cast<std::size_t>(n_states));
  Eigen::MatrixXd u(n_states, m);
  Eigen::MatrixXi g(n_states, m);
  Eigen::MatrixXd inputs(Critic::kInputs, n_states * m);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index s = 0; s < n_states; ++s) {
    old[static_cast<std::size_t>(s)] = HybridPolicy::head_from_raw(old_raw.col(s));
    const PolicyHead& h = old[static_cast<std::size_t>(s)];
    std::discrete_distribution<int> cat(h.probs.begin(), h.probs.end());
    for (int j = 0; j < m; ++j) {
      u(s, j) = h.mean + h.std_dev() * normal(rng);
      g(s, j) = cat(rng);
      Critic::write_input(inputs.col(s * m + j), states.col(s), u(s, j), g(s, j));
    }
  }
  const Eigen::RowVectorXd q_flat = q(inputs);
  Eigen::MatrixXd q_mat(n_states, m);
  for (Eigen::Index s = 0; s < n_states; ++s) {
    for (int j = 0; j < m; ++j) q_mat(s, j) = q_flat[s * m + j];
  }

  ActorStats stats;
  stats.temperature = solve_temperature(q_mat, cfg.dual_epsilon);
  stats.weights = sample_weights(q_mat, stats.temperature);
  duals.temperature = stats.temperature;

  Mlp::Cache cache;
  const Eigen::MatrixXd raw = policy.raw(states, &cache);
  Eigen::MatrixXd d_raw = Eigen::MatrixXd::Zero(raw.rows(), raw.cols());
  const double inv_n = 1.0 / static_cast<double>(n_states);
  double loss = 0.0;
  for (Eigen::Index s = 0; s < n_states; ++s) {
    const PolicyHead h = HybridPolicy::head_from_raw(raw.col(s));
    const PolicyHead& o = old[static_cast<std::size_t>(s)];
    const double var_old = o.std_dev() * o.std_dev();
    const double sigma = h.std_dev();
    const double var = sigma * sigma;

    double d_mean = 0.0;
    double d_log_std = 0.0;
    std::array<double, kGearChoices> target_mass{};
    for (int j = 0; j < m; ++j) {
      const double w = stats.weights(s, j);
      const double du_new = u(s, j) - h.mean;
      const double du_old = u(s, j) - o.mean;
      // Decoupled likelihood: mean with the old spread, spread with the old mean.
      PolicyHead mean_part = o;
      mean_part.mean = h.mean;
      PolicyHead std_part = o;
      std_part.log_std = h.log_std;
      loss -= inv_n * w *
              (mean_part.log_prob_torque(u(s, j)) + std_part.log_prob_torque(u(s, j)) +
               h.log_prob_gear(g(s, j)));
      d_mean -= w * du_new / var_old;
      d_log_std += w * (1.0 - du_old * du_old / var);
      target_mass[static_cast<std::size_t>(g(s, j))] += w;
    }

    const double kl_mu = (h.mean - o.mean) * (h.mean - o.mean) / (2.0 * var_old);
    const double kl_sigma = (h.log_std - o.log_std) + var_old / (2.0 * var) - 0.5;
    double kl_d = 0.0;
    for (int k = 0; k < kGearChoices; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (o.probs[kk] > 0.0) kl_d += o.probs[kk] * (std::log(o.probs[kk]) - std::log(h.probs[kk]));
    }
    stats.kl_mean += inv_n * kl_mu;
    stats.kl_std += inv_n * kl_sigma;
    stats.kl_discrete += inv_n * kl_d;
    loss += inv_n * (duals.mean * kl_mu + duals.std * kl_sigma + duals.discrete * kl_d);

    d_mean += duals.mean * (h.mean - o.mean) / var_old;
    d_log_std += duals.std * (1.0 - var_old / var);
    d_raw(0, s) = inv_n * d_mean;
    const double raw_log_std = raw(1, s);
    const bool clamped = raw_log_std < HybridPolicy::kLogStdMin || raw_log_std > HybridPolicy::kLogStdMax;
    d_raw(1, s) = clamped ? 0.0 : inv_n * d_log_std;
    for (int k = 0; k < kGearChoices; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      d_raw(2 + k, s) = inv_n * ((h.probs[kk] - target_mass[kk]) +
                                 duals.discrete * (h.probs[kk] - o.probs[kk]));
    }
  }
  const Eigen::VectorXd grad = policy.net().backward(cache, d_raw);
  opt.step(policy.net().params(), grad);

  const auto ascend = [](double& alpha, double step, double kl, double eps) {
    alpha = std::clamp(alpha + step * (kl - eps), 0.0, 1e6);
  };
  ascend(duals.mean, cfg.multiplier_step_continuous, stats.kl_mean, cfg.kl_mean);
  ascend(duals.std, cfg.multiplier_step_continuous, stats.kl_std, cfg.kl_std);
  ascend(duals.discrete, cfg.multiplier_step_discrete, stats.kl_discrete, cfg.kl_discrete);
  stats.loss = loss;
  return stats;
}

MpoAgent::MpoAgent(LearnConfig cfg, ActionScale scale, ObservationBounds bounds, std::uint64_t seed)
    : cfg_(cfg),
      scale_(scale),
      bounds_(bounds),
      actor_(cfg.hidden, cfg.layers),
      critic_(cfg.hidden, cfg.layers),
      rng_(seed) {
  cfg_.validate();
  actor_.initialize(rng_, cfg_.initial_log_std, scale_.to_unit(0.0));
  critic_.initialize(rng_);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_.lr = cfg_.actor_lr;
  critic_opt_.lr = cfg_.critic_lr;
  duals_.mean = duals_.std = duals_.discrete = cfg_.initial_multiplier;
}

SampledAction MpoAgent::act(const Observation& obs, bool explore) {
  const Eigen::VectorXd s = bounds_.normalize(obs);
  return explore ? actor_.sample(s, scale_, rng_) : actor_.greedy(s, scale_);
}

void MpoAgent::sync_targets() {
  target_actor_ = actor_;
  target_critic_ = critic_;
}

std::vector<double> MpoAgent::segment_targets(const std::vector<Transition>& segment) {
  const auto n = static_cast<Eigen::Index>(segment.size());
  if (n == 0) throw std::invalid_argument("retrace: empty segment");
  const int me = cfg_.expectation_samples;
  Eigen::MatrixXd obs(kObservationSize, n);
  Eigen::MatrixXd next(kObservationSize, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    obs.col(i) = segment[static_cast<std::size_t>(i)].obs;
    next.col(i) = segment[static_cast<std::size_t>(i)].next_obs;
  }
  const Eigen::MatrixXd raw_now = target_actor_.raw(obs);
  const Eigen::MatrixXd raw_next = target_actor_.raw(next);

  // Columns: n taken actions, then n * kGearChoices * me bootstrap samples.
  const Eigen::Index per_state = static_cast<Eigen::Index>(kGearChoices) * me;
  Eigen::MatrixXd inputs(Critic::kInputs, n + n * per_state);
  std::vector<PolicyHead> next_heads(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& tr = segment[static_cast<std::size_t>(i)];
    Critic::write_input(inputs.col(i), tr.obs, tr.unit_torque, tr.gear);
    const PolicyHead h = HybridPolicy::head_from_raw(raw_next.col(i));
    next_heads[static_cast<std::size_t>(i)] = h;
    for (int k = 0; k < me; ++k) {
      const double u = h.mean + h.std_dev() * normal(rng_);
      for (int gidx = 0; gidx < kGearChoices; ++gidx) {
        Critic::write_input(inputs.col(n + i * per_state + k * kGearChoices + gidx), tr.next_obs, u,
                            gidx);
      }
    }
  }
  const Eigen::RowVectorXd q = target_critic_.evaluate(inputs);

  std::vector<RetraceStep> steps(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& tr = segment[static_cast<std::size_t>(i)];
    RetraceStep& st = steps[static_cast<std::size_t>(i)];
    st.reward = cfg_.value_scale * tr.reward;
    st.q_taken = q[i];
    const PolicyHead& h = next_heads[static_cast<std::size_t>(i)];
    double expected = 0.0;
    for (int gidx = 0; gidx < kGearChoices; ++gidx) {
      double mean_q = 0.0;
      for (int k = 0; k < me; ++k) mean_q += q[n + i * per_state + k * kGearChoices + gidx];
      expected += h.probs[static_cast<std::size_t>(gidx)] * mean_q / me;
    }
    st.expected_next = expected;
    const PolicyHead now = HybridPolicy::head_from_raw(raw_now.col(i));
    const double log_pi = now.log_prob_torque(tr.unit_torque) + now.log_prob_gear(tr.gear);
    st.trace = truncated_importance_weight(log_pi, tr.log_prob_torque + tr.log_prob_gear, cfg_.lambda);
    st.terminal = tr.terminal;
  }
  return retrace_targets(steps, cfg_.gamma, cfg_.retrace_steps);
}

UpdateStats MpoAgent::update(const ReplayBuffer& buffer) {
  const auto segments = buffer.sample_segments(static_cast<std::size_t>(cfg_.batch_segments),
                                               static_cast<std::size_t>(cfg_.retrace_steps), rng_);
  Eigen::Index total = 0;
  for (const auto& seg : segments) total += static_cast<Eigen::Index>(seg.size());

  Eigen::MatrixXd inputs(Critic::kInputs, total);
  Eigen::MatrixXd states(kObservationSize, total);
  Eigen::RowVectorXd targets(total);
  Eigen::Index col = 0;
  for (const auto& seg : segments) {
    const std::vector<double> y = segment_targets(seg);
    for (std::size_t i = 0; i < seg.size(); ++i, ++col) {
      Critic::write_input(inputs.col(col), seg[i].obs, seg[i].unit_torque, seg[i].gear);
      states.col(col) = seg[i].obs;
      targets[col] = y[i];
    }
  }

  UpdateStats stats;
  stats.critic_loss = critic_update(critic_, critic_opt_, inputs, targets);
  const QFunction q = [this](const Eigen::MatrixXd& in) { return critic_.evaluate(in); };
  stats.actor = actor_update(actor_, target_actor_, actor_opt_, duals_, states, q, cfg_, rng_);
  if (!std::isfinite(stats.critic_loss) || !std::isfinite(stats.actor.loss)) {
    throw std::runtime_error("learner produced a non-finite loss");
  }
  ++updates_;
  if (updates_ % cfg_.target_sync == 0) sync_targets();
  return stats;
}

nlohmann::json MpoAgent::to_json() const {
  std::ostringstream rng_state;
  rng_state << rng_;
  return {{"learn", cfg_},
          {"action_scale", scale_},
          {"observation_bounds", bounds_},
          {"actor", vec_to_json(actor_.net().params())},
          {"target_actor", vec_to_json(target_actor_.net().params())},
          {"critic", vec_to_json(critic_.net().params())},
          {"target_critic", vec_to_json(target_critic_.net().params())},
          {"actor_opt", adam_to_json(actor_opt_)},
          {"critic_opt", adam_to_json(critic_opt_)},
          {"duals",
           {{"mean", duals_.mean},
            {"std", duals_.std},
            {"discrete", duals_.discrete},
            {"temperature", duals_.temperature}}},
          {"updates", updates_},
          {"rng", rng_state.str()}};
}

MpoAgent MpoAgent::from_json(const nlohmann::json& j) {
  MpoAgent agent(j.at("learn").get<LearnConfig>(), j.at("action_scale").get<ActionScale>(),
                 j.at("observation_bounds").get<ObservationBounds>(), 0);
  const auto load = [&](Mlp& net, const char* key) {
    net.params() = vec_from_json(j.at(key), net.num_params(), key);
  };
  load(agent.actor_.net(), "actor");
  load(agent.target_actor_.net(), "target_actor");
  load(agent.critic_.net(), "critic");
  load(agent.target_critic_.net(), "target_critic");
  adam_from_json(j.at("actor_opt"), agent.actor_opt_);
  adam_from_json(j.at("critic_opt"), agent.critic_opt_);
  const auto& d = j.at("duals");
  agent.duals_ = {d.at("mean").get<double>(), d.at("std").get<double>(),
                  d.at("discrete").get<double>(), d.at("temperature").get<double>()};
  agent.updates_ = j.at("updates").get<long>();
  std::istringstream rng_state(j.at("rng").get<std::string>());
  rng_state >> agent.rng_;
  return agent;
}

void save_checkpoint(const std::string& path, const MpoAgent& agent, const CheckpointMeta& meta) {
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"config_hash", meta.config_hash},
                      {"model_hash", meta.model_hash},
                      {"seed", meta.seed},
                      {"episodes", meta.episodes},
                      {"agent", agent.to_json()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << j.dump(1) << '\n';
}

MpoAgent load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error(path + " is not a checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version");
  }
  if (meta != nullptr) {
    meta->config_hash = j.at("config_hash").get<std::string>();
    meta->model_hash = j.at("model_hash").get<std::string>();
    meta->seed = j.at("seed").get<std::uint64_t>();
    meta->episodes = j.at("episodes").get<long>();
  }
  return MpoAgent::from_json(j.at("agent"));
}

}  // namespace accsim
