#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cinfer/baselines.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"

using namespace cinfer;

namespace {

scenario_config scenario_with(std::size_t services, std::size_t per_service) {
  auto cfg = default_scenario();
  cfg.services.resize(services);
  cfg.devices.clear();
  for (std::size_t m = 0; m < services; ++m)
    for (std::size_t i = 0; i < per_service; ++i) {
      auto d = default_scenario().devices.front();
      d.service = m;
      cfg.devices.push_back(d);
    }
  cfg.radio.device_share_count = cfg.devices.size();
  validate(cfg);
  return cfg;
}

network_state random_state(const scenario_config& cfg, rng_engine& rng) {
  network_state s;
  for (const auto& d : cfg.devices) {
    s.local_backlog_bits.push_back(uniform01(rng) * d.local_queue_cap_bits);
    s.channel.push_back(static_cast<std::size_t>(rng() % cfg.channel.size()));
    s.arrival_bits.push_back(sample_arrivals(d, cfg.services[d.service], rng));
  }
  for (const auto& srv : cfg.services) {
    s.edge_backlog_bits.push_back(uniform01(rng) * srv.edge_queue_cap_bits * 0.3);
    s.deficit.push_back(uniform01(rng));
  }
  return s;
}

// Best one-slot reward over every (level, offload) combination.
double exhaustive_best(const scenario_config& cfg, const network_state& s) {
  const std::size_t n = cfg.device_count();
  const int options = 2 * cfg.ladder.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= static_cast<std::size_t>(options);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    action a;
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      const int opt = static_cast<int>(c % static_cast<std::size_t>(options));
      c /= static_cast<std::size_t>(options);
      a.sampling.push_back(1 + opt / 2);
      a.offload.push_back(opt % 2);
    }
    a.allocation =
        allocator::optimal_allocation(service_loads(cfg, s, a.sampling, a.offload)).shares;
    best = std::max(best, evaluate_slot(cfg, s, a).report.reward);
  }
  return best;
}

}  // namespace

TEST(Static, SmallestFeasibleLevel) {
  auto cfg = default_scenario();
  cfg.services[0].acc_threshold = 0.8;
  cfg.services[1].acc_threshold = 0.9;
  const auto p = make_static_policy(cfg);
  EXPECT_EQ(p.level[0], 2);
  EXPECT_EQ(p.level[1], 3);
  EXPECT_EQ(p.offload, (std::vector<int>{0, 0}));
  EXPECT_EQ(p.allocation, fixed_allocation(cfg));
}

TEST(Static, InfeasibleThresholdIsConfigError) {
  auto cfg = default_scenario();
  cfg.services[0].acc_threshold = 0.99;
  EXPECT_THROW(make_static_policy(cfg), config_error);
}

TEST(Static, ConstantActionMeetsThreshold) {
  const auto cfg = default_scenario();
  const auto p = make_static_policy(cfg);
  const action a = static_action(cfg, p);
  EXPECT_NO_THROW(validate_action(cfg, a));
  for (std::size_t m = 0; m < cfg.service_count(); ++m) {
    std::vector<int> k, o;
    for (std::size_t n : cfg.members(m)) {
      k.push_back(a.sampling[n]);
      o.push_back(a.offload[n]);
    }
    EXPECT_GE(service_accuracy(cfg.ladder, cfg.services[m], k, o), cfg.services[m].acc_threshold);
  }
}

TEST(FixedAllocation, Examples) {
  auto cfg = scenario_with(2, 2);
  cfg.services[1] = cfg.services[0];
  auto c = fixed_allocation(cfg);
  EXPECT_DOUBLE_EQ(c[0], 0.5);
  EXPECT_DOUBLE_EQ(c[1], 0.5);

  // default services: 5 * 0.8 * 768000 * 200 vs 5 * 0.8 * 512000 * 400, i.e. 3:4
  c = fixed_allocation(default_scenario());
  EXPECT_NEAR(c[0], 3.0 / 7, 1e-15);
  EXPECT_NEAR(c[1], 4.0 / 7, 1e-15);

  cfg.devices[0].mean_arrival_rate = cfg.devices[1].mean_arrival_rate = 1.6;
  c = fixed_allocation(cfg);
  EXPECT_NEAR(c[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(c[1], 1.0 / 3, 1e-15);

  EXPECT_EQ(fixed_allocation(scenario_with(1, 3)), (std::vector<double>{1.0}));
}

TEST(Myopic, SingleDeviceMatchesExhaustive) {
  const auto cfg = scenario_with(1, 1);
  rng_engine rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_state(cfg, rng);
    const action a = myopic_action(cfg, s);
    EXPECT_EQ(evaluate_slot(cfg, s, a).report.reward, exhaustive_best(cfg, s));
  }
}

TEST(Myopic, TwoDevicesWithinFivePercent) {
  for (std::size_t services : {1u, 2u}) {
    const auto cfg = scenario_with(services, 2 / services);
    rng_engine rng(2 + services);
    for (int i = 0; i < 100; ++i) {
      const auto s = random_state(cfg, rng);
      const double got = evaluate_slot(cfg, s, myopic_action(cfg, s)).report.reward;
      const double best = exhaustive_best(cfg, s);
      EXPECT_LE(got, best + 1e-12);
      EXPECT_GE(got, best - 0.05 * std::abs(best));
    }
  }
}

TEST(Myopic, ZeroLoadTieBreak) {
  const auto cfg = default_scenario();
  environment env(cfg, 4);
  network_state s = env.state();
  std::fill(s.arrival_bits.begin(), s.arrival_bits.end(), 0.0);
  const action a = myopic_action(cfg, s);
  for (std::size_t n = 0; n < cfg.device_count(); ++n) {
    EXPECT_EQ(a.sampling[n], cfg.ladder.size());
    EXPECT_EQ(a.offload[n], 0);
  }
}

TEST(Myopic, NeverWorseThanStatic) {
  const auto cfg = default_scenario();
  const action st = static_action(cfg, make_static_policy(cfg));
  rng_engine rng(6);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_state(cfg, rng);
    const action a = myopic_action(cfg, s);
    EXPECT_NO_THROW(validate_action(cfg, a));
    EXPECT_GE(evaluate_slot(cfg, s, a).report.reward, evaluate_slot(cfg, s, st).report.reward);
  }
}

TEST(Myopic, DelayOnlyVariantIgnoresDeficit) {
  const auto cfg = scenario_with(1, 1);
  rng_engine rng(7);
  myopic_options opts;
  opts.include_deficit = false;
  for (int i = 0; i < 30; ++i) {
    auto s = random_state(cfg, rng);
    const action a = myopic_action(cfg, s, opts);
    s.deficit[0] = 50.0;
    const action b = myopic_action(cfg, s, opts);
    EXPECT_EQ(a.sampling, b.sampling);
    EXPECT_EQ(a.offload, b.offload);
  }
}

TEST(Allocate, RulesProduceFeasibleShares) {
  const auto cfg = default_scenario();
  rng_engine rng(8);
  const auto s = random_state(cfg, rng);
  action a = static_action(cfg, make_static_policy(cfg));
  allocate(cfg, s, a, allocation_rule::optimal);
  EXPECT_NEAR(std::accumulate(a.allocation.begin(), a.allocation.end(), 0.0), 1.0, 1e-12);
  allocate(cfg, s, a, allocation_rule::fixed);
  EXPECT_EQ(a.allocation, fixed_allocation(cfg));
}
