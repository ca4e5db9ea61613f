#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "esdrl/dqn.hpp"
#include "esdrl/value_iteration.hpp"

using namespace esdrl;

namespace {

// Same values as configs/lineworld.ini.
DqnConfig lineworld_dqn(std::uint64_t seed) {
  DqnConfig c;
  c.gamma = 0.99;
  c.learning_rate = 0.002;
  c.target_sync_every = 500;
  c.eps_start = 1.0;
  c.eps_end = 0.05;
  c.eps_anneal_fraction = 0.3;
  c.total_timesteps = 20'000;
  c.train_every = 1;
  c.learning_starts = 320;
  c.eval_interval = 1000;
  c.seed = seed;
  return c;
}

const MlpSpec kLineSpec{10, {32}, 2, Activation::Tanh};

EnvFactory lineworld_factory() {
  return [] { return std::make_unique<LineWorldEnv>(); };
}

Transition make_transition(double reward, bool done, std::vector<double> next = {1.0, 0.0}) {
  return Transition{{0.0, 1.0}, 0, reward, std::move(next), done};
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

class ContinuousEnv : public Environment {
 public:
  std::size_t observation_dim() const override { return 10; }
  std::size_t action_count() const override { return 2; }
  bool discrete_actions() const override { return false; }
  std::vector<double> reset(std::uint64_t) override { return std::vector<double>(10, 0.0); }
  EnvStep step(std::size_t) override { return {}; }
};

}  // namespace

TEST(Epsilon, DefaultScheduleExamples) {
  const DqnConfig c;
  EXPECT_EQ(epsilon_at(0, c), 0.2);
  EXPECT_EQ(epsilon_at(100'000, c), 0.0001);
  EXPECT_NEAR(epsilon_at(50'000, c), 0.10005, 1e-15);
  EXPECT_EQ(epsilon_at(999'999, c), 0.0001);
}

TEST(Epsilon, MonotoneAndBounded) {
  const DqnConfig c = lineworld_dqn(0);
  double prev = epsilon_at(0, c);
  for (std::uint64_t s = 1; s <= c.total_timesteps; s += 7) {
    const double e = epsilon_at(s, c);
    ASSERT_LE(e, prev);
    ASSERT_GE(e, c.eps_end);
    ASSERT_LE(e, c.eps_start);
    prev = e;
  }
}

TEST(SelectAction, GreedyWhenEpsilonZero) {
  const Mlp net(MlpSpec{2, {}, 3, Activation::Tanh}, {0, 0, 0, 0, 0, 0, 0.1, 0.7, 0.3});
  SplitMix64 rng(1);
  const std::vector<double> x{0.5, -0.5};
  for (int i = 0; i < 100; ++i) ASSERT_EQ(select_action(net, x, 0.0, rng), 1u);
  const Mlp tied(MlpSpec{2, {}, 2, Activation::Tanh}, {0, 0, 0, 0, 1, 1});
  EXPECT_EQ(select_action(tied, x, 0.0, rng), 0u);
}

TEST(SelectAction, UniformWhenEpsilonOne) {
  const Mlp net(MlpSpec{1, {}, 4, Activation::Tanh}, {0, 0, 0, 0, 9, 0, 0, 0});
  SplitMix64 rng(77);
  const std::vector<double> x{0.0};
  const int n = 100'000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[select_action(net, x, 1.0, rng)];
  const double p = 0.25;
  const double sd = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LE(std::abs(c - n * p), 3 * sd) << c;
}

TEST(ReplayBuffer, EvictsOldestOnceFull) {
  for (std::size_t k : {0u, 1u, 5u, 23u}) {
    ReplayBuffer buf(7);
    for (std::size_t i = 0; i < 7 + k; ++i) buf.push(make_transition(static_cast<double>(i), false));
    ASSERT_EQ(buf.size(), 7u);
    std::set<double> held;
    for (std::size_t s = 0; s < buf.size(); ++s) held.insert(buf.at(s).reward);
    std::set<double> expected;
    for (std::size_t i = k; i < 7 + k; ++i) expected.insert(static_cast<double>(i));
    EXPECT_EQ(held, expected) << "k = " << k;
  }
  EXPECT_THROW(ReplayBuffer(0), std::invalid_argument);
}

TEST(ReplayBuffer, UniformSampling) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 15; ++i) buf.push(make_transition(i, false));
  SplitMix64 rng(3);
  const auto idx = buf.sample_indices(100'000, rng);
  std::vector<int> counts(10, 0);
  for (auto i : idx) ++counts.at(i);
  const double sd = std::sqrt(100'000 * 0.1 * 0.9);
  for (int c : counts) EXPECT_LE(std::abs(c - 10'000.0), 3 * sd);
  EXPECT_THROW(ReplayBuffer(4).sample_indices(1, rng), std::logic_error);
}

TEST(TdTargets, TerminalCut) {
  const Mlp target = Mlp::glorot(MlpSpec{2, {4}, 2, Activation::Tanh}, 1);
  std::vector<Transition> batch{make_transition(-1.0, true)};
  EXPECT_EQ(td_targets(target, batch, 0.9)[0], -1.0);
  // next_state is not even read for terminal transitions.
  batch[0].next_state = {std::nan(""), 1e300};
  EXPECT_EQ(td_targets(target, batch, 0.9)[0], -1.0);
  batch[0].next_state.clear();
  EXPECT_EQ(td_targets(target, batch, 0.9)[0], -1.0);
}

TEST(TdTargets, HandArithmetic) {
  // Zero weights, output biases (2, 0.5): max Q(s') = 2 everywhere.
  const Mlp target(MlpSpec{2, {}, 2, Activation::Tanh}, {0, 0, 0, 0, 2.0, 0.5});
  const std::vector<Transition> batch{make_transition(1.0, false), make_transition(-0.5, true),
                                      make_transition(0.25, false)};
  const auto y = td_targets(target, batch, 0.9);
  EXPECT_DOUBLE_EQ(y[0], 2.8);
  EXPECT_EQ(y[1], -0.5);
  EXPECT_DOUBLE_EQ(y[2], 2.05);
  const auto myopic = td_targets(target, batch, 0.0);
  EXPECT_EQ(myopic, (std::vector<double>{1.0, -0.5, 0.25}));
  EXPECT_THROW(td_targets(target, std::span<const Transition>{}, 0.9), std::invalid_argument);
}

TEST(Adam, FirstStepByHand) {
  AdamState adam;
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.5, -4.0, 0.0};
  adam.step(p, g, 0.01);
  // Bias-corrected first step: m_hat = g, v_hat = g^2.
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Adam, MatchesReferenceRecurrence) {
  std::vector<double> p{0.3}, ref_p{0.3};
  double m = 0, v = 0;
  AdamState adam;
  for (int t = 1; t <= 50; ++t) {
    const std::vector<double> g{std::sin(t) + 0.1 * p[0]};
    const double gr = std::sin(t) + 0.1 * ref_p[0];
    adam.step(p, g, 0.05);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    ref_p[0] -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    ASSERT_NEAR(p[0], ref_p[0], 1e-12) << t;
  }
}

TEST(TrainStep, ZeroResidualLeavesParametersBitIdentical) {
  const MlpSpec spec{2, {3}, 2, Activation::Tanh};
  Mlp online(spec);
  const Mlp target(spec);
  ReplayBuffer buf(64);
  for (int i = 0; i < 64; ++i) buf.push(make_transition(0.0, i % 3 == 0));
  DqnConfig c;
  c.learning_starts = 0;
  AdamState adam;
  SplitMix64 rng(1);
  const auto before = online.flatten();
  const auto out = train_step(online, target, buf, c, adam, rng, 100);
  EXPECT_TRUE(out.trained);
  EXPECT_EQ(out.loss, 0.0);
  EXPECT_TRUE(bit_equal(online.parameters(), before));
}

TEST(TrainStep, NotReadyIsSkipped) {
  const MlpSpec spec{2, {3}, 2, Activation::Tanh};
  Mlp online = Mlp::glorot(spec, 1);
  const Mlp target = online;
  ReplayBuffer buf(64);
  DqnConfig c;
  c.learning_starts = 320;
  AdamState adam;
  SplitMix64 rng(1);
  for (int i = 0; i < 31; ++i) buf.push(make_transition(1.0, false));
  EXPECT_FALSE(train_step(online, target, buf, c, adam, rng, 1000).trained);
  buf.push(make_transition(1.0, false));
  EXPECT_FALSE(train_step(online, target, buf, c, adam, rng, 319).trained);
  EXPECT_TRUE(bit_equal(online.parameters(), target.parameters()));
  EXPECT_TRUE(train_step(online, target, buf, c, adam, rng, 320).trained);
  EXPECT_FALSE(bit_equal(online.parameters(), target.parameters()));
}

TEST(TrainStep, DeterministicAndTargetUntouched) {
  const MlpSpec spec{2, {5}, 2, Activation::Tanh};
  ReplayBuffer buf(100);
  SplitMix64 fill(9);
  for (int i = 0; i < 100; ++i)
    buf.push(Transition{{fill.uniform(), fill.uniform()}, static_cast<std::size_t>(i % 2), fill.uniform(-1, 1),
                        {fill.uniform(), fill.uniform()}, i % 7 == 0});
  DqnConfig c;
  c.learning_starts = 0;
  c.learning_rate = 1e-3;
  auto run = [&] {
    Mlp online = Mlp::glorot(spec, 4);
    const Mlp target = Mlp::glorot(spec, 5);
    const auto target_before = target.flatten();
    AdamState adam;
    SplitMix64 rng(12);
    std::vector<double> losses;
    for (int k = 0; k < 10; ++k) losses.push_back(train_step(online, target, buf, c, adam, rng, 1000).loss);
    EXPECT_TRUE(bit_equal(target.parameters(), target_before));
    return std::pair{losses, online.flatten()};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(bit_equal(a.second, b.second));
}

TEST(SyncTarget, CopiesBitExactlyAndIsIdempotent) {
  const MlpSpec spec{3, {4}, 2, Activation::ReLU};
  const Mlp online = Mlp::glorot(spec, 1);
  Mlp target = Mlp::glorot(spec, 2);
  sync_target(online, target);
  EXPECT_TRUE(bit_equal(target.parameters(), online.parameters()));
  const auto once = target.flatten();
  sync_target(online, target);
  EXPECT_TRUE(bit_equal(target.parameters(), once));
  Mlp other(MlpSpec{3, {5}, 2, Activation::ReLU});
  EXPECT_THROW(sync_target(online, other), std::invalid_argument);
}

TEST(SyncTarget, TargetsIsolatedFromOnlineUpdates) {
  const MlpSpec spec{2, {4}, 2, Activation::Tanh};
  Mlp online = Mlp::glorot(spec, 3);
  Mlp target = online;
  ReplayBuffer buf(50);
  SplitMix64 fill(5);
  for (int i = 0; i < 50; ++i)
    buf.push(Transition{{fill.uniform(), fill.uniform()}, static_cast<std::size_t>(i % 2), 1.0, {fill.uniform(), fill.uniform()}, false});
  std::vector<Transition> probe;
  for (std::size_t s = 0; s < 10; ++s) probe.push_back(buf.at(s));
  const auto before = td_targets(target, probe, 0.9);
  DqnConfig c;
  c.learning_starts = 0;
  c.learning_rate = 0.01;
  AdamState adam;
  SplitMix64 rng(1);
  for (int k = 0; k < 20; ++k) train_step(online, target, buf, c, adam, rng, 1000);
  EXPECT_EQ(td_targets(target, probe, 0.9), before);
  sync_target(online, target);
  EXPECT_NE(td_targets(target, probe, 0.9), before);
}

TEST(RunDqn, ZeroTimestepsReturnsInitialPolicy) {
  DqnConfig c = lineworld_dqn(1);
  c.total_timesteps = 0;
  const Mlp init = Mlp::glorot(kLineSpec, 42);
  const std::vector<std::uint64_t> seeds{1};
  const auto r = run_dqn(lineworld_factory(), c, kLineSpec, init, seeds);
  EXPECT_TRUE(bit_equal(r.online.parameters(), init.parameters()));
  EXPECT_TRUE(bit_equal(r.target.parameters(), init.parameters()));
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_EQ(r.curve[0].env_steps_cum, 0u);
}

TEST(RunDqn, RejectsIncompatibleEnvironments) {
  const DqnConfig c = lineworld_dqn(1);
  const std::vector<std::uint64_t> seeds{1};
  EXPECT_THROW(run_dqn([] { return std::make_unique<ContinuousEnv>(); }, c, kLineSpec, std::nullopt, seeds),
               std::invalid_argument);
  EXPECT_THROW(run_dqn(lineworld_factory(), c, MlpSpec{5, {8}, 2, Activation::Tanh}, std::nullopt, seeds),
               std::invalid_argument);
  EXPECT_THROW(run_dqn(lineworld_factory(), c, kLineSpec, Mlp(MlpSpec{10, {8}, 2, Activation::Tanh}), seeds),
               std::invalid_argument);
  DqnConfig bad = c;
  bad.batch_size = bad.buffer_capacity + 1;
  EXPECT_THROW(run_dqn(lineworld_factory(), bad, kLineSpec, std::nullopt, seeds), std::invalid_argument);
}

TEST(RunDqn, WholeRunDeterminism) {
  DqnConfig c = lineworld_dqn(7);
  c.total_timesteps = 3000;
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto a = run_dqn(lineworld_factory(), c, kLineSpec, std::nullopt, seeds);
  const auto b = run_dqn(lineworld_factory(), c, kLineSpec, std::nullopt, seeds);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].step, b.curve[i].step);
    EXPECT_EQ(a.curve[i].mean_eval_reward, b.curve[i].mean_eval_reward);
    EXPECT_TRUE(std::memcmp(&a.curve[i].loss, &b.curve[i].loss, sizeof(double)) == 0);
  }
  EXPECT_TRUE(bit_equal(a.online.parameters(), b.online.parameters()));
}

TEST(RunDqn, CurveAxesAndOffset) {
  DqnConfig c = lineworld_dqn(2);
  c.total_timesteps = 2500;
  const std::vector<std::uint64_t> seeds{1};
  const auto r = run_dqn(lineworld_factory(), c, kLineSpec, std::nullopt, seeds, CurveOffset{1234, 5.5});
  ASSERT_EQ(r.curve.size(), 4u);  // 0, 1000, 2000, 2500
  EXPECT_EQ(r.curve.front().env_steps_cum, 1234u);
  EXPECT_EQ(r.curve.front().wall_clock_s, 5.5);
  EXPECT_EQ(r.curve.back().step, 2500u);
  EXPECT_EQ(r.curve.back().env_steps_cum, 1234u + 2500u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) {
    EXPECT_GE(r.curve[i].env_steps_cum, r.curve[i - 1].env_steps_cum);
    EXPECT_GE(r.curve[i].wall_clock_s, r.curve[i - 1].wall_clock_s);
  }
  std::ostringstream os;
  write_dqn_csv_header(os);
  EXPECT_EQ(os.str(), "step,env_steps_cum,wall_clock_s,mean_eval_reward,std_eval_reward,epsilon,loss\n");
}

TEST(RunDqn, ParallelEnvsKeepStepAccounting) {
  DqnConfig c = lineworld_dqn(3);
  c.total_timesteps = 1001;
  c.num_envs = 8;
  const std::vector<std::uint64_t> seeds{1};
  const auto r = run_dqn(lineworld_factory(), c, kLineSpec, std::nullopt, seeds);
  EXPECT_EQ(r.curve.back().step, 1001u);
}

TEST(RunDqn, LineWorldMatchesValueIteration) {
  const auto oracle = value_iteration_oracle(LineWorldConfig{}, 0.99);
  int solved = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::vector<std::uint64_t> eval{seed};
    const auto r = run_dqn(lineworld_factory(), lineworld_dqn(seed), kLineSpec, std::nullopt, eval);
    if (matches_oracle(r.online, oracle)) ++solved;
  }
  EXPECT_GE(solved, 9);
}
