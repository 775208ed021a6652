#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include <doctest.h>

#include "accsim/agent.hpp"
#include "oracles.hpp"

using namespace accsim;

namespace {

std::vector<RetraceStep> random_segment(std::size_t n, std::mt19937_64& rng, bool terminal_end) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RetraceStep> seg(n);
  for (auto& s : seg) {
    s.reward = nd(rng);
    s.q_taken = nd(rng);
    s.expected_next = nd(rng);
    s.trace = u(rng);
  }
  seg.back().terminal = terminal_end;
  return seg;
}

Transition fake_transition(std::uint64_t episode, double reward, bool terminal = false) {
  Transition t;
  t.obs = Eigen::VectorXd::Constant(kObservationSize, reward);
  t.next_obs = t.obs;
  t.reward = reward;
  t.episode = episode;
  t.terminal = terminal;
  return t;
}

LearnConfig small_learn() {
  LearnConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.warmup = 1;
  c.batch_segments = 4;
  c.retrace_steps = 5;
  return c;
}

}  // namespace

TEST_CASE("mlp basics") {
  SUBCASE("zero parameters give zero output") {
    Mlp net({4, 8, 3});
    CHECK(net.forward(Eigen::MatrixXd::Random(4, 5)).isZero(0.0));
  }
  SUBCASE("single identity layer passes input through") {
    Mlp net({3, 3});
    Eigen::Map<Eigen::MatrixXd>(net.params().data(), 3, 3) = Eigen::Matrix3d::Identity();
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
    CHECK(net.forward(x) == x);
  }
  SUBCASE("shape mismatch is an error") {
    Mlp net({4, 2});
    CHECK_THROWS_AS((void)net.forward(Eigen::MatrixXd::Zero(3, 1)), std::invalid_argument);
    Mlp::Cache cache;
    (void)net.forward(Eigen::MatrixXd::Zero(4, 2), &cache);
    CHECK_THROWS_AS((void)net.backward(cache, Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
  }
  SUBCASE("parameter count") {
    Mlp net({8, 64, 64, 64, 5});
    CHECK(net.num_params() == 8 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 5 + 5);
  }
}

TEST_CASE("mlp gradients match finite differences") {
  std::mt19937_64 rng(31);
  SUBCASE("actor-shaped network") {
    HybridPolicy policy(64, 3);
    policy.initialize(rng, -1.0);
    policy.net().initialize(rng, 1.0);
    CHECK(oracle::mlp_fd_error(policy.net(), 6, 40, rng) < 1e-4);
  }
  SUBCASE("critic-shaped network") {
    Critic critic(64, 3);
    critic.initialize(rng);
    CHECK(oracle::mlp_fd_error(critic.net(), 6, 40, rng) < 1e-4);
  }
  SUBCASE("input gradient") {
    Mlp net({5, 7, 2});
    net.initialize(rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 3);
    Mlp::Cache cache;
    (void)net.forward(x, &cache);
    Eigen::MatrixXd dx;
    (void)net.backward(cache, c, &dx);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + 1e-6;
      const double up = net.forward(x).cwiseProduct(c).sum();
      x.data()[i] = keep - 1e-6;
      const double down = net.forward(x).cwiseProduct(c).sum();
      x.data()[i] = keep;
      CHECK(dx.data()[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  }
  SUBCASE("critic loss gradient") {
    Critic critic(32, 2);
    critic.initialize(rng);
    const Eigen::MatrixXd in = Eigen::MatrixXd::Random(Critic::kInputs, 9);
    const Eigen::RowVectorXd y = Eigen::RowVectorXd::Random(9);
    const Eigen::VectorXd g = critic_loss_gradient(critic, in, y);
    const auto loss = [&] {
      double l = 0.0;
      (void)critic_loss_gradient(critic, in, y, &l);
      return l;
    };
    CHECK(oracle::max_fd_error(critic.net().params(), g, loss, 20, rng) < 1e-4);
  }
}

TEST_CASE("adam descends") {
  Adam opt;
  opt.lr = 0.1;
  Eigen::VectorXd p(2);
  p << 3.0, -2.0;
  for (int i = 0; i < 500; ++i) opt.step(p, 2.0 * p);
  CHECK(p.norm() < 0.05);
}

TEST_CASE("policy distribution") {
  PolicyHead h;
  h.mean = 0.2;
  h.log_std = -0.7;
  SUBCASE("uniform logits give log(1/3)") {
    for (int k = 0; k < 3; ++k) CHECK(h.log_prob_gear(k) == doctest::Approx(std::log(1.0 / 3.0)));
  }
  SUBCASE("density at the mean") {
    CHECK(h.log_prob_torque(h.mean) ==
          doctest::Approx(-std::log(h.std_dev() * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-14));
  }
  SUBCASE("joint density integrates to one") {
    Eigen::VectorXd raw(5);
    raw << 0.1, -0.9, 0.4, -1.2, 0.8;
    const PolicyHead hh = HybridPolicy::head_from_raw(raw);
    double total = 0.0;
    const int n = 20001;
    const double lo = hh.mean - 12 * hh.std_dev();
    const double hi = hh.mean + 12 * hh.std_dev();
    const double du = (hi - lo) / (n - 1);
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < n; ++i) {
        const double wgt = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        total += wgt * du * std::exp(hh.log_prob_torque(lo + i * du) + hh.log_prob_gear(k));
      }
    }
    CHECK(std::abs(total - 1.0) < 1e-3);
  }
  SUBCASE("log prob factorizes") {
    std::mt19937_64 rng(41);
    HybridPolicy policy(16, 2);
    policy.initialize(rng, -1.0);
    policy.net().initialize(rng, 1.0);
    const Eigen::VectorXd s = Eigen::VectorXd::Random(kObservationSize);
    const PolicyHead ph = policy.head(s);
    for (int k = 0; k < 3; ++k) {
      const double expect = -0.5 * std::pow((0.3 - ph.mean) / ph.std_dev(), 2) - ph.log_std -
                            0.5 * std::log(2 * std::numbers::pi) + std::log(ph.probs[k]);
      CHECK(policy.log_prob(s, 0.3, k) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("gear probabilities sum to one") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> nd(0.0, 30.0);
    for (int i = 0; i < 1000; ++i) {
      Eigen::VectorXd raw(5);
      for (int k = 0; k < 5; ++k) raw[k] = nd(rng);
      const PolicyHead hh = HybridPolicy::head_from_raw(raw);
      REQUIRE(std::abs(hh.probs[0] + hh.probs[1] + hh.probs[2] - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("action sampling") {
  std::mt19937_64 rng(47);
  ActionScale scale;
  SUBCASE("vanishing spread returns the mean") {
    PolicyHead h;
    h.mean = 0.37;
    h.log_std = -60.0;
    h.probs = {0.2, 0.5, 0.3};
    for (int i = 0; i < 100; ++i) CHECK(sample_head(h, scale, rng).unit_torque == doctest::Approx(0.37).epsilon(1e-15));
  }
  SUBCASE("a dominant logit always upshifts") {
    Eigen::VectorXd raw(5);
    raw << 0.0, -1.0, -1e300, -1e300, 1e300;
    const PolicyHead h = HybridPolicy::head_from_raw(raw);
    for (int i = 0; i < 1000; ++i) REQUIRE(sample_head(h, scale, rng).action.gear_change == GearChange::Up);
  }
  SUBCASE("gear frequencies follow the softmax") {
    Eigen::VectorXd raw(5);
    raw << 0.0, -1.0, 0.3, -0.5, 1.1;
    const PolicyHead h = HybridPolicy::head_from_raw(raw);
    std::array<int, 3> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_head(h, scale, rng).gear)];
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / double(n) - h.probs[k]) < 0.01);
  }
  SUBCASE("torque is clamped to the envelope") {
    CHECK(scale.to_torque(5.0) == scale.torque_max);
    CHECK(scale.to_torque(-5.0) == scale.torque_min);
    CHECK(scale.to_torque(scale.to_unit(1234.0)) == doctest::Approx(1234.0));
  }
}

TEST_CASE("retrace") {
  std::mt19937_64 rng(53);
  SUBCASE("one step is the TD target") {
    for (int rep = 0; rep < 100; ++rep) {
      const auto seg = random_segment(7, rng, rep % 2 == 0);
      const auto y = retrace_targets(seg, 0.99, 1);
      for (std::size_t i = 0; i < seg.size(); ++i) {
        const double td = seg[i].reward + (seg[i].terminal ? 0.0 : 0.99 * seg[i].expected_next);
        REQUIRE(y[i] == td);
      }
    }
  }
  SUBCASE("recursion equals the unrolled sum") {
    std::uniform_int_distribution<std::size_t> len(5, 20);
    for (int rep = 0; rep < 500; ++rep) {
      const auto seg = random_segment(len(rng), rng, rep % 3 == 0);
      for (int n : {1, 3, 15, 25}) {
        const auto a = retrace_targets(seg, 0.99, n);
        const auto b = oracle::retrace_sum(seg, 0.99, n);
        for (std::size_t i = 0; i < seg.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) < 1e-10);
      }
    }
  }
  SUBCASE("importance weights are truncated into [0, lambda]") {
    std::normal_distribution<double> nd(0.0, 5.0);
    for (int i = 0; i < 10000; ++i) {
      const double c = truncated_importance_weight(nd(rng), nd(rng), 0.9);
      REQUIRE(c >= 0.0);
      REQUIRE(c <= 0.9);
    }
    CHECK(truncated_importance_weight(-1.3, -1.3, 1.0) == 1.0);
  }
  SUBCASE("bad input") {
    std::vector<RetraceStep> empty;
    CHECK_THROWS_AS(retrace_targets(empty, 0.99, 5), std::invalid_argument);
    const auto seg = random_segment(3, rng, false);
    CHECK_THROWS_AS(retrace_targets(seg, 0.99, 0), std::invalid_argument);
  }
}

TEST_CASE("temperature and sample weights") {
  SUBCASE("equal values give uniform weights") {
    const Eigen::MatrixXd q = Eigen::MatrixXd::Constant(3, 8, 2.5);
    const Eigen::MatrixXd w = sample_weights(q, solve_temperature(q, 0.1));
    CHECK((w.array() - 0.125).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("at a fixed temperature a dominant candidate takes all the weight") {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(1, 8);
    q(0, 3) = 1e4;
    const Eigen::MatrixXd w = sample_weights(q, 1.0);
    CHECK(w(0, 3) > 1.0 - 1e-12);
  }
  SUBCASE("the solved temperature caps a dominant candidate") {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(1, 8);
    q(0, 3) = 1e4;
    const Eigen::MatrixXd w = sample_weights(q, solve_temperature(q, 0.1));
    // The KL bound keeps the weights from collapsing onto one sample.
    for (int j = 0; j < 8; ++j) {
      if (j != 3) CHECK(w(0, j) == doctest::Approx(w(0, 0)).epsilon(1e-12));
    }
    CHECK(w(0, 3) > w(0, 0));
    double kl = 0.0;
    for (int j = 0; j < 8; ++j) kl += w(0, j) * std::log(8.0 * w(0, j));
    CHECK(kl == doctest::Approx(0.1).epsilon(0.05));
  }
  SUBCASE("the solved temperature respects the KL bound") {
    std::mt19937_64 rng(59);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd q(16, 16);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = nd(rng);
    const double eta = solve_temperature(q, 0.1);
    const Eigen::MatrixXd w = sample_weights(q, eta);
    const double kl = (w.array() * (w.array() * 16.0).log()).sum() / 16.0;
    CHECK(kl == doctest::Approx(0.1).epsilon(0.05));
  }
}

TEST_CASE("critic update") {
  std::mt19937_64 rng(61);
  Critic critic(16, 2);
  critic.initialize(rng);
  Adam opt;
  const Eigen::MatrixXd in = Eigen::MatrixXd::Random(Critic::kInputs, 5);
  SUBCASE("targets equal to current values") {
    const Eigen::RowVectorXd y = critic.evaluate(in);
    const Eigen::VectorXd before = critic.net().params();
    CHECK(critic_update(critic, opt, in, y) == 0.0);
    CHECK(critic.net().params() == before);
  }
  SUBCASE("single sample loss is the squared residual") {
    const Eigen::MatrixXd one = in.col(0);
    const double q = critic.evaluate(one)[0];
    Eigen::RowVectorXd y(1);
    y << q + 0.7;
    CHECK(critic_update(critic, opt, one, y) == doctest::Approx(0.49).epsilon(1e-12));
  }
}

TEST_CASE("actor update on a one-state bandit finds the optimum") {
  // Q(u, g) = -(u - 0.3)^2 + 0.2 [g = up]: optimum at u = 0.3 with an upshift.
  std::mt19937_64 rng(67);
  LearnConfig cfg;
  HybridPolicy policy(16, 2);
  policy.initialize(rng, -1.0, 0.0);
  HybridPolicy target = policy;
  Adam opt;
  opt.lr = 3e-3;
  PolicyDuals duals;
  const Eigen::MatrixXd states = Eigen::MatrixXd::Constant(kObservationSize, 32, 0.1);
  const QFunction q = [](const Eigen::MatrixXd& in) {
    Eigen::RowVectorXd out(in.cols());
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      const double u = in(kObservationSize, c);
      out[c] = -(u - 0.3) * (u - 0.3) + 0.2 * in(kObservationSize + 3, c);
    }
    return out;
  };
  for (int it = 0; it < 200; ++it) {
    (void)actor_update(policy, target, opt, duals, states, q, cfg, rng);
    target = policy;
  }
  const PolicyHead h = policy.head(states.col(0));
  CHECK(std::abs(h.mean - 0.3) < 0.05 * 0.3);
  CHECK(h.probs[2] > 0.5);
}

TEST_CASE("replay buffer") {
  ReplayBuffer buf(10);
  std::vector<Transition> ep0;
  for (int i = 0; i < 6; ++i) ep0.push_back(fake_transition(0, i, i == 5));
  std::vector<Transition> ep1;
  for (int i = 0; i < 6; ++i) ep1.push_back(fake_transition(1, 10 + i));
  buf.push_episode(ep0);
  CHECK(buf.size() == 6);
  buf.push_episode(ep1);
  CHECK(buf.size() == 10);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(9).reward == 15.0);
  CHECK_THROWS_AS((void)buf.at(10), std::out_of_range);

  SUBCASE("segments stay inside one episode and are contiguous") {
    std::mt19937_64 rng(71);
    for (const auto& seg : buf.sample_segments(200, 4, rng)) {
      REQUIRE(!seg.empty());
      REQUIRE(seg.size() <= 4);
      for (std::size_t i = 1; i < seg.size(); ++i) {
        REQUIRE(seg[i].episode == seg[0].episode);
        REQUIRE(seg[i].reward == seg[i - 1].reward + 1.0);
        REQUIRE_FALSE(seg[i - 1].terminal);
      }
    }
  }
  SUBCASE("sampling is reproducible for a fixed seed") {
    std::mt19937_64 a(73);
    std::mt19937_64 b(73);
    const auto sa = buf.sample_segments(50, 3, a);
    const auto sb = buf.sample_segments(50, 3, b);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      REQUIRE(sa[i].size() == sb[i].size());
      for (std::size_t k = 0; k < sa[i].size(); ++k) REQUIRE(sa[i][k].reward == sb[i][k].reward);
    }
  }
}

TEST_CASE("agent") {
  ActionScale scale;
  ObservationBounds bounds;
  MpoAgent agent(small_learn(), scale, bounds, 5);
  ReplayBuffer buf(1000);
  std::mt19937_64 rng(79);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (std::uint64_t e = 0; e < 4; ++e) {
    std::vector<Transition> ep;
    for (int i = 0; i < 30; ++i) {
      Transition t;
      t.obs = Eigen::VectorXd::NullaryExpr(kObservationSize, [&] { return nd(rng); });
      t.next_obs = Eigen::VectorXd::NullaryExpr(kObservationSize, [&] { return nd(rng); });
      t.unit_torque = nd(rng);
      t.gear = i % 3;
      t.log_prob_torque = -1.0;
      t.log_prob_gear = std::log(1.0 / 3.0);
      t.reward = 0.5 + nd(rng);
      t.terminal = i == 29;
      t.episode = e;
      ep.push_back(t);
    }
    buf.push_episode(ep);
  }

  SUBCASE("targets equal online networks after sync") {
    for (int i = 0; i < 3; ++i) (void)agent.update(buf);
    CHECK(agent.critic().net().params() != agent.target_critic().net().params());
    agent.sync_targets();
    CHECK(agent.critic().net().params() == agent.target_critic().net().params());
    CHECK(agent.actor().net().params() == agent.target_actor().net().params());
  }
  SUBCASE("checkpoint round trip is bit exact") {
    for (int i = 0; i < 3; ++i) (void)agent.update(buf);
    const auto path = std::filesystem::temp_directory_path() / "accsim_ckpt_test.json";
    save_checkpoint(path.string(), agent, {"abc", "def", 9, 12});
    CheckpointMeta meta;
    MpoAgent back = load_checkpoint(path.string(), &meta);
    std::filesystem::remove(path);
    CHECK(meta.config_hash == "abc");
    CHECK(meta.model_hash == "def");
    CHECK(meta.seed == 9);
    CHECK(meta.episodes == 12);
    CHECK(back.actor().net().params() == agent.actor().net().params());
    CHECK(back.critic().net().params() == agent.critic().net().params());
    CHECK(back.target_critic().net().params() == agent.target_critic().net().params());
    CHECK(back.updates() == agent.updates());
    // Same RNG and optimizer state: the next update is identical too.
    const UpdateStats a = agent.update(buf);
    const UpdateStats b = back.update(buf);
    CHECK(a.critic_loss == b.critic_loss);
    CHECK(back.actor().net().params() == agent.actor().net().params());
  }
  SUBCASE("same seed, same updates") {
    MpoAgent twin(small_learn(), scale, bounds, 5);
    for (int i = 0; i < 3; ++i) {
      CHECK(agent.update(buf).critic_loss == twin.update(buf).critic_loss);
    }
    CHECK(agent.critic().net().params() == twin.critic().net().params());
  }
  SUBCASE("segment targets with n = 1 are one-step TD in critic units") {
    LearnConfig c = small_learn();
    c.retrace_steps = 1;
    MpoAgent one(c, scale, bounds, 5);
    const auto seg = buf.sample_segments(1, 5, rng).front();
    const auto y = one.segment_targets(seg);
    CHECK(y.size() == seg.size());
    if (seg.back().terminal) CHECK(y.back() == doctest::Approx(c.value_scale * seg.back().reward));
  }
}
