#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "cinfer/agent.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"
#include "cinfer/mlp.hpp"

using namespace cinfer;
using nn::matrix;

namespace {

scenario_config small_scenario(std::size_t per_service = 1) {
  auto cfg = default_scenario();
  cfg.devices.clear();
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < per_service; ++i) {
      auto d = default_scenario().devices.front();
      d.service = m;
      cfg.devices.push_back(d);
    }
  cfg.radio.device_share_count = cfg.devices.size();
  validate(cfg);
  return cfg;
}

matrix random_matrix(Eigen::Index r, Eigen::Index c, rng_engine& rng) {
  matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2 * uniform01(rng) - 1;
  return m;
}

// Central-difference gradient of f over every parameter of `net`.
template <class F>
std::vector<double> numeric_gradient(nn::mlp net, F f, double h = 1e-5) {
  auto p = net.flatten();
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    net.unflatten(p);
    const double up = f(net);
    p[i] = keep - h;
    net.unflatten(p);
    const double down = f(net);
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> flat(const nn::gradients& g) {
  std::vector<double> out;
  for (const auto& ly : g) {
    out.insert(out.end(), ly.weight.data(), ly.weight.data() + ly.weight.size());
    out.insert(out.end(), ly.bias.data(), ly.bias.data() + ly.bias.size());
  }
  return out;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-6}));
  return worst;
}

}  // namespace

TEST(Mlp, ShapesAndInitBounds) {
  rng_engine rng(1);
  nn::mlp actor({54, 64, 32, 20}, nn::output_activation::tanh, rng, 3e-3);
  ASSERT_EQ(actor.layers().size(), 3u);
  EXPECT_EQ(actor.layers()[0].weight.rows(), 64);
  EXPECT_EQ(actor.layers()[0].weight.cols(), 54);
  EXPECT_LE(actor.layers()[0].weight.cwiseAbs().maxCoeff(), 1 / std::sqrt(54.0));
  EXPECT_LE(actor.layers()[1].weight.cwiseAbs().maxCoeff(), 1 / std::sqrt(64.0));
  EXPECT_LE(actor.layers()[2].weight.cwiseAbs().maxCoeff(), 3e-3);
  EXPECT_GT(actor.layers()[2].weight.cwiseAbs().maxCoeff(), 1e-3);
  const matrix x = random_matrix(54, 5, rng);
  const matrix y = actor.forward(x);
  EXPECT_EQ(y.rows(), 20);
  EXPECT_EQ(y.cols(), 5);
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(actor.parameter_count(), 54u * 64 + 64 + 64 * 32 + 32 + 32 * 20 + 20);
  EXPECT_TRUE(actor.all_finite());
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  rng_engine rng(2);
  for (auto act : {nn::output_activation::identity, nn::output_activation::tanh}) {
    nn::mlp net({5, 7, 6, 3}, act, rng);
    const matrix x = random_matrix(5, 4, rng), w = random_matrix(3, 4, rng);
    auto f = [&](const nn::mlp& n) { return n.forward(x).cwiseProduct(w).sum(); };
    nn::mlp::tape t;
    net.forward(x, t);
    EXPECT_LT(max_rel(flat(net.backward(t, w)), numeric_gradient(net, f)), 1e-4);
  }
}

TEST(Mlp, InputGradient) {
  rng_engine rng(3);
  nn::mlp net({4, 8, 1}, nn::output_activation::identity, rng);
  matrix x = random_matrix(4, 1, rng);
  nn::mlp::tape t;
  net.forward(x, t);
  matrix gin;
  net.backward(t, matrix::Ones(1, 1), &gin);
  for (Eigen::Index i = 0; i < 4; ++i) {
    matrix up = x, down = x;
    up(i, 0) += 1e-6;
    down(i, 0) -= 1e-6;
    const double num = (net.forward(up)(0, 0) - net.forward(down)(0, 0)) / 2e-6;
    EXPECT_NEAR(gin(i, 0), num, 1e-7);
  }
}

TEST(CriticLoss, ZeroAtTargets) {
  rng_engine rng(4);
  nn::mlp critic({3, 6, 1}, nn::output_activation::identity, rng);
  const matrix s = random_matrix(2, 5, rng), a = random_matrix(1, 5, rng);
  const nn::vector y = critic.forward(stack_rows(s, a)).row(0).transpose();
  const auto r = critic_loss(critic, s, a, y);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : flat(r.grads)) EXPECT_EQ(g, 0.0);
}

TEST(CriticLoss, TargetArithmetic) {
  rng_engine rng(5);
  nn::mlp target_actor({2, 4, 1}, nn::output_activation::tanh, rng);
  nn::mlp target_critic({3, 4, 1}, nn::output_activation::identity, rng);
  for (auto& ly : target_critic.layers()) {
    ly.weight.setZero();
    ly.bias.setZero();
  }
  target_critic.layers().back().bias(0) = -2.0;
  nn::vector r(1);
  r << -1.0;
  const auto y = td_targets(target_actor, target_critic, r, random_matrix(2, 1, rng), 0.85);
  EXPECT_NEAR(y(0), -2.7, 1e-15);
}

TEST(CriticLoss, GradientMatchesFiniteDifferences) {
  rng_engine rng(6);
  nn::mlp critic({6, 8, 5, 1}, nn::output_activation::identity, rng);
  const matrix s = random_matrix(4, 7, rng), a = random_matrix(2, 7, rng);
  const nn::vector y = random_matrix(7, 1, rng);
  auto f = [&](const nn::mlp& n) { return critic_loss(n, s, a, y).loss; };
  EXPECT_LT(max_rel(flat(critic_loss(critic, s, a, y).grads), numeric_gradient(critic, f)), 1e-4);
}

TEST(CriticLoss, NonFiniteAborts) {
  rng_engine rng(7);
  nn::mlp critic({3, 4, 1}, nn::output_activation::identity, rng);
  nn::vector y(1);
  y << std::numeric_limits<double>::infinity();
  EXPECT_THROW(critic_loss(critic, random_matrix(2, 1, rng), random_matrix(1, 1, rng), y),
               training_error);
}

TEST(ActorGradient, ConstantCriticGivesZero) {
  rng_engine rng(8);
  nn::mlp actor({3, 5, 2}, nn::output_activation::tanh, rng);
  nn::mlp critic({5, 4, 1}, nn::output_activation::identity, rng);
  critic.layers()[0].weight.rightCols(2).setZero();
  const auto g = actor_gradient(actor, critic, random_matrix(3, 6, rng));
  for (double x : flat(g)) EXPECT_EQ(x, 0.0);
}

TEST(ActorGradient, IdentityCriticLinearActor) {
  // Q(s, a) = a and mu(s) = W s + b, so -mean Q has dW = -mean s^T, db = -1.
  rng_engine rng(9);
  nn::mlp actor({3, 1}, nn::output_activation::identity, rng);
  nn::mlp critic({4, 1}, nn::output_activation::identity, rng);
  critic.layers()[0].weight << 0, 0, 0, 1;
  critic.layers()[0].bias << 0;
  const matrix s = random_matrix(3, 5, rng);
  const auto g = actor_gradient(actor, critic, s);
  const Eigen::VectorXd mean = s.rowwise().mean();
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(g[0].weight(0, i), -mean(i), 1e-15);
  EXPECT_NEAR(g[0].bias(0), -1.0, 1e-15);

  auto f = [&](const nn::mlp& n) { return -critic.forward(stack_rows(s, n.forward(s))).mean(); };
  EXPECT_LT(max_rel(flat(g), numeric_gradient(actor, f)), 1e-4);
}

TEST(ActorGradient, DeepNetworksMatchFiniteDifferences) {
  rng_engine rng(10);
  nn::mlp actor({4, 6, 5, 2}, nn::output_activation::tanh, rng);
  actor.layers().back().weight *= 5;
  nn::mlp critic({6, 7, 5, 1}, nn::output_activation::identity, rng);
  const matrix s = random_matrix(4, 3, rng);
  auto f = [&](const nn::mlp& n) { return -critic.forward(stack_rows(s, n.forward(s))).mean(); };
  EXPECT_LT(max_rel(flat(actor_gradient(actor, critic, s)), numeric_gradient(actor, f)), 1e-4);
}

TEST(ActorGradient, SingleSampleIsUnaveraged) {
  rng_engine rng(11);
  nn::mlp actor({3, 4, 2}, nn::output_activation::tanh, rng);
  nn::mlp critic({5, 4, 1}, nn::output_activation::identity, rng);
  const matrix s = random_matrix(3, 1, rng);
  nn::mlp::tape at, ct;
  const matrix mu = actor.forward(s, at);
  critic.forward(stack_rows(s, mu), ct);
  matrix gin;
  critic.backward(ct, matrix::Constant(1, 1, -1.0), &gin);
  const auto expect = actor.backward(at, gin.bottomRows(2));
  EXPECT_EQ(flat(actor_gradient(actor, critic, s)), flat(expect));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  rng_engine rng(12);
  nn::mlp net({3, 4, 2}, nn::output_activation::identity, rng);
  const auto before = net.flatten();
  nn::adam opt(net, 0.9, 0.999, 1e-8);
  for (int i = 0; i < 5; ++i) opt.step(net, nn::zero_like(net), 1e-3);
  EXPECT_EQ(net.flatten(), before);
}

TEST(Adam, UnitGradientStepTendsToLearningRate) {
  rng_engine rng(13);
  nn::mlp net({1, 1}, nn::output_activation::identity, rng);
  nn::adam opt(net, 0.9, 0.999, 1e-8);
  auto g = nn::zero_like(net);
  g[0].weight(0, 0) = 1.0;
  const double lr = 1e-3;
  for (int i = 0; i < 200; ++i) {
    const double before = net.layers()[0].weight(0, 0);
    opt.step(net, g, lr);
    // bias-corrected moments are exactly 1 for a constant unit gradient
    EXPECT_NEAR(before - net.layers()[0].weight(0, 0), lr / (1 + 1e-8), 1e-15);
  }
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  rng_engine rng(14);
  nn::mlp net({3, 4, 2}, nn::output_activation::identity, rng);
  const auto before = net.flatten();
  nn::adam opt(net, 0.9, 0.999, 1e-8);
  nn::mlp::tape t;
  net.forward(random_matrix(3, 2, rng), t);
  opt.step(net, net.backward(t, matrix::Ones(2, 2)), 0.0);
  EXPECT_EQ(net.flatten(), before);
}

TEST(SoftUpdate, Examples) {
  rng_engine rng(15);
  nn::mlp online({1, 1}, nn::output_activation::identity, rng), target = online;
  online.layers()[0].weight(0, 0) = 1.0;
  target.layers()[0].weight(0, 0) = 0.0;
  auto t = target;
  nn::soft_update(t, online, 0.005);
  EXPECT_DOUBLE_EQ(t.layers()[0].weight(0, 0), 0.005);
  t = target;
  nn::soft_update(t, online, 0.0);
  EXPECT_EQ(t.flatten(), target.flatten());
  t = target;
  nn::soft_update(t, online, 1.0);
  EXPECT_EQ(t.flatten(), online.flatten());
  nn::mlp other({2, 1}, nn::output_activation::identity, rng);
  EXPECT_THROW(nn::soft_update(t, other, 0.5), std::invalid_argument);
}

TEST(SoftUpdate, ContractionFactor) {
  rng_engine rng(16);
  nn::mlp online({4, 5, 2}, nn::output_activation::tanh, rng);
  nn::mlp target({4, 5, 2}, nn::output_activation::tanh, rng);
  const double d0 = nn::parameter_distance(target, online);
  const int steps = 300;
  for (int i = 0; i < steps; ++i) nn::soft_update(target, online, 0.005);
  EXPECT_NEAR(nn::parameter_distance(target, online) / d0, std::pow(0.995, steps), 1e-9);
}

TEST(Replay, CapacityAndFifo) {
  replay_memory mem(3);
  for (int i = 0; i < 5; ++i) mem.push({{double(i)}, {0}, double(i), {0}});
  EXPECT_EQ(mem.size(), 3u);
  EXPECT_EQ(mem.at(0).reward, 2.0);
  EXPECT_EQ(mem.at(2).reward, 4.0);
  EXPECT_THROW(replay_memory(0), std::invalid_argument);
  rng_engine rng(1);
  EXPECT_THROW(mem.sample_indices(4, rng), std::invalid_argument);
}

TEST(Replay, DistinctWithinBatch) {
  replay_memory mem(100);
  for (int i = 0; i < 50; ++i) mem.push({{0}, {0}, 0, {0}});
  rng_engine rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto idx = mem.sample_indices(50, rng);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 50u);
  }
}

TEST(Replay, UniformChiSquare) {
  const std::size_t bins = 20;
  replay_memory mem(bins);
  for (std::size_t i = 0; i < bins; ++i) mem.push({{0}, {0}, 0, {0}});
  rng_engine rng(3);
  std::vector<double> count(bins, 0.0);
  const std::size_t draws = 100000, batch = 4;
  for (std::size_t i = 0; i < draws / batch; ++i)
    for (std::size_t j : mem.sample_indices(batch, rng)) count[j] += 1;
  const double expect = static_cast<double>(draws) / bins;
  double chi2 = 0;
  for (double c : count) chi2 += (c - expect) * (c - expect) / expect;
  EXPECT_LT(chi2, 43.82);  // 19 degrees of freedom, p = 0.001
}

TEST(Exploration, NoiseMoments) {
  rng_engine rng(4);
  nn::mlp zero({2, 1}, nn::output_activation::tanh, rng);
  zero.layers()[0].weight.setZero();
  zero.layers()[0].bias.setZero();
  const std::vector<double> f{0.3, 0.1};
  const int draws = 100000;
  double sum = 0, sq = 0;
  // sigma small enough that clipping at +-1 is negligible
  for (int i = 0; i < draws; ++i) {
    const double u = select_action(zero, f, 0.2, rng, true)[0];
    sum += u;
    sq += u * u;
  }
  const double mean = sum / draws, sd = std::sqrt(sq / draws - mean * mean);
  EXPECT_LT(std::abs(mean), 0.01);
  EXPECT_NEAR(sd / 0.2, 1.0, 0.05);
  EXPECT_EQ(select_action(zero, f, 0.2, rng, false)[0], 0.0);
}

TEST(Decode, Boundaries) {
  EXPECT_EQ(sampling_level(1.0, 4), 4);
  EXPECT_EQ(sampling_level(-1.0, 4), 1);
  EXPECT_EQ(sampling_level(-0.5, 4), 1);
  EXPECT_EQ(sampling_level(-0.49, 4), 2);
  EXPECT_EQ(sampling_level(0.0, 4), 2);
  EXPECT_EQ(sampling_level(0.01, 4), 3);
  EXPECT_EQ(offload_bit(0.0), 0);
  EXPECT_EQ(offload_bit(1e-12), 1);
  EXPECT_EQ(offload_bit(-0.3), 0);
}

TEST(Decode, TotalOverActionCube) {
  const auto cfg = small_scenario(2);
  environment env(cfg, 3);
  rng_engine rng(5);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> u(action_width(cfg));
    for (double& x : u) x = 2 * uniform01(rng) - 1;
    if (i % 10 == 0) u[0] = (i % 20 == 0) ? 1.0 : -1.0;
    for (auto rule : {allocation_rule::optimal, allocation_rule::fixed}) {
      const action a = decode_action(u, cfg, env.state(), rule);
      EXPECT_NO_THROW(validate_action(cfg, a));
      EXPECT_NEAR(std::accumulate(a.allocation.begin(), a.allocation.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Encode, WidthAndNormalization) {
  const auto cfg = default_scenario();
  EXPECT_EQ(feature_width(cfg), 2u * 10 + 2 * 2 + 10 * 3);
  EXPECT_EQ(feature_width(cfg), 54u);
  network_state s;
  s.local_backlog_bits.assign(10, 0.0);
  s.edge_backlog_bits.assign(2, 0.0);
  s.channel.assign(10, 1);
  s.arrival_bits.assign(10, 0.0);
  s.deficit.assign(2, 0.0);
  auto f = encode_state(s, cfg);
  ASSERT_EQ(f.size(), 54u);
  double ones = 0;
  for (double x : f) {
    EXPECT_TRUE(x == 0.0 || x == 1.0);
    ones += x;
  }
  EXPECT_EQ(ones, 10.0);

  s.local_backlog_bits[0] = cfg.devices[0].local_queue_cap_bits;
  s.edge_backlog_bits[1] = cfg.services[1].edge_queue_cap_bits;
  s.arrival_bits[0] = 1.3 * cfg.services[0].raw_task_bits;
  s.deficit[0] = 2.5;
  f = encode_state(s, cfg);
  EXPECT_EQ(f[0], 1.0);
  EXPECT_EQ(f[11], 1.0);
  EXPECT_DOUBLE_EQ(f[12 + 30], 1.0);
  EXPECT_EQ(f[52], 2.5);
}

TEST(Agent, WarmupSkipsUpdates) {
  auto cfg = small_scenario();
  cfg.agent.minibatch = 4;
  ddpg_agent agent(cfg, 1);
  EXPECT_EQ(agent.warmup(), 40u);
  const auto before = agent.actor().flatten();
  const std::vector<double> s(feature_width(cfg), 0.1), a(action_width(cfg), 0.2);
  for (int i = 0; i < 39; ++i) {
    agent.remember({s, a, -1.0, s});
    EXPECT_FALSE(agent.update().updated);
  }
  EXPECT_EQ(agent.actor().flatten(), before);
  agent.remember({s, a, -1.0, s});
  const auto st = agent.update();
  EXPECT_TRUE(st.updated);
  EXPECT_TRUE(std::isfinite(st.critic_loss));
  EXPECT_NE(agent.actor().flatten(), before);
}

TEST(Agent, CheckpointRoundTrip) {
  auto cfg = small_scenario();
  cfg.agent.minibatch = 8;
  cfg.slots_per_episode = 30;
  environment env(cfg, 2);
  ddpg_agent agent(cfg, 2);
  for (int e = 0; e < 3; ++e) train_episode(env, agent, cfg.slots_per_episode);

  std::stringstream first;
  agent.save(first);
  ddpg_agent restored(cfg, 99);
  std::stringstream in(first.str());
  restored.load(in);
  std::stringstream second;
  restored.save(second);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(restored.actor().flatten(), agent.actor().flatten());
  EXPECT_EQ(restored.target_critic().flatten(), agent.target_critic().flatten());
  // restored exploration stream continues where the original left off
  const std::vector<double> f(feature_width(cfg), 0.2);
  EXPECT_EQ(restored.act(f, true), agent.act(f, true));

  std::stringstream bad("not-a-checkpoint 1");
  EXPECT_THROW(restored.load(bad), std::runtime_error);
}

TEST(Agent, EpisodesAreDeterministic) {
  auto cfg = small_scenario();
  cfg.agent.minibatch = 8;
  environment e1(cfg, 5), e2(cfg, 5);
  ddpg_agent a1(cfg, 5), a2(cfg, 5);
  for (int e = 0; e < 3; ++e) {
    const auto m1 = train_episode(e1, a1, 50);
    const auto m2 = train_episode(e2, a2, 50);
    EXPECT_EQ(m1.mean_delay, m2.mean_delay);
    EXPECT_EQ(m1.mean_reward, m2.mean_reward);
    EXPECT_EQ(m1.mean_critic_loss, m2.mean_critic_loss);
  }
  EXPECT_EQ(a1.actor().flatten(), a2.actor().flatten());
}

TEST(Agent, SmokeTrainingImproves) {
  // 20 episodes on 2 devices: critic loss stays finite and the last quintile
  // of episode rewards beats the first.
  const auto cfg = small_scenario();
  environment env(cfg, 3);
  ddpg_agent agent(cfg, 3);
  std::vector<double> rewards;
  for (int e = 0; e < 20; ++e) {
    const auto m = train_episode(env, agent, cfg.slots_per_episode);
    ASSERT_TRUE(std::isfinite(m.mean_critic_loss));
    ASSERT_TRUE(agent.critic().all_finite());
    rewards.push_back(m.mean_reward);
  }
  const double first = std::accumulate(rewards.begin(), rewards.begin() + 4, 0.0) / 4;
  const double last = std::accumulate(rewards.end() - 4, rewards.end(), 0.0) / 4;
  EXPECT_GT(last, first);
}
