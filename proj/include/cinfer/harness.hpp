#ifndef CINFER_HARNESS_HPP
#define CINFER_HARNESS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cinfer/agent.hpp"
#include "cinfer/baselines.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"
#include "cinfer/lyapunov.hpp"

namespace cinfer {

enum class policy_kind { proposed, myopic, static_config, proposed_fixed };

inline policy_kind parse_policy(const std::string& name) {
  if (name == "proposed") return policy_kind::proposed;
  if (name == "myopic") return policy_kind::myopic;
  if (name == "static") return policy_kind::static_config;
  if (name == "proposed-fixed") return policy_kind::proposed_fixed;
  throw std::invalid_argument("unknown policy '" + name +
                              "' (expected proposed|myopic|static|proposed-fixed)");
}

inline std::string to_string(policy_kind p) {
  switch (p) {
    case policy_kind::proposed: return "proposed";
    case policy_kind::myopic: return "myopic";
    case policy_kind::static_config: return "static";
    case policy_kind::proposed_fixed: return "proposed-fixed";
  }
  return "?";
}

inline bool is_learned(policy_kind p) {
  return p == policy_kind::proposed || p == policy_kind::proposed_fixed;
}

inline allocation_rule rule_for(policy_kind p) {
  return p == policy_kind::proposed_fixed ? allocation_rule::fixed : allocation_rule::optimal;
}

struct slot_row {
  std::size_t episode = 0;
  std::size_t slot = 0;
  std::vector<double> accuracy;
  std::vector<double> deficit;       // Z_m at the start of the slot
  std::vector<double> edge_backlog;  // Q_m at the start of the slot
  double total_delay = 0;
  device_delay delay_sums;
  std::size_t local_overflow_events = 0;
  std::size_t edge_overflow_events = 0;
  double reward = 0;
  std::vector<double> drift;
  bool drift_bound_holds = true;
};

struct episode_row {
  std::size_t episode = 0;
  double mean_delay = 0;
  double mean_reward = 0;
  std::vector<double> mean_accuracy;
  std::vector<double> final_deficit;
  double mean_critic_loss = 0;
};

struct summary_row {
  std::string policy;
  double arrival_rate = 0;
  double bandwidth_hz = 0;
  std::size_t episodes = 0;
  double mean_delay = 0;
  double delay_ci95 = 0;
  std::vector<double> mean_accuracy;
  std::vector<double> accuracy_ci95;
  std::vector<double> violation_rate;  // share of episodes with mean A_m < A_th
  std::vector<double> deficit_rate;    // mean of Z_m^T / T
};

struct experiment_result {
  std::vector<slot_row> slots;
  std::vector<episode_row> episodes;
  summary_row summary;
};

inline slot_row make_slot_row(const scenario_config& cfg, std::size_t episode, std::size_t slot,
                              const network_state& before, const step_report& rep) {
  slot_row row;
  row.episode = episode;
  row.slot = slot;
  row.accuracy = rep.accuracy;
  row.deficit = before.deficit;
  row.edge_backlog = before.edge_backlog_bits;
  row.total_delay = rep.total_delay;
  for (const auto& d : rep.delays) {
    row.delay_sums.local += d.local;
    row.delay_sums.offload += d.offload;
    row.delay_sums.processing += d.processing;
    row.delay_sums.queueing += d.queueing;
    row.delay_sums.waiting += d.waiting;
  }
  row.local_overflow_events = rep.local_overflow_events;
  row.edge_overflow_events = rep.edge_overflow_events;
  row.reward = rep.reward;
  for (std::size_t m = 0; m < cfg.service_count(); ++m) {
    const double th = cfg.services[m].acc_threshold;
    const double amin = cfg.min_accuracy(m);
    const auto chk = lyapunov::drift_bound_check(before.deficit[m], rep.accuracy[m], th,
                                                 lyapunov::drift_constant(th, amin), amin);
    row.drift.push_back(chk.drift);
    row.drift_bound_holds = row.drift_bound_holds && chk.holds;
  }
  return row;
}

namespace detail {

inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline double ci95(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0;
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  return 1.96 * std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace detail

/// Column order: slot, episode, acc_m..., deficit_m..., edge_backlog_m...,
/// total_delay, delay_local, delay_offload, delay_processing, delay_queueing,
/// delay_waiting, local_overflows, edge_overflows, reward, drift_m...,
/// drift_bound_holds.
inline void write_slot_header(std::ostream& out, std::size_t services) {
  out << "slot,episode";
  for (const char* p : {"acc_", "deficit_", "edge_backlog_"})
    for (std::size_t m = 0; m < services; ++m) out << ',' << p << m;
  out << ",total_delay,delay_local,delay_offload,delay_processing,delay_queueing,delay_waiting"
         ",local_overflows,edge_overflows,reward";
  for (std::size_t m = 0; m < services; ++m) out << ",drift_" << m;
  out << ",drift_bound_holds\n";
}

inline void write_slot_row(std::ostream& out, const slot_row& r) {
  using detail::num;
  out << r.slot << ',' << r.episode;
  for (const auto* v : {&r.accuracy, &r.deficit, &r.edge_backlog})
    for (double x : *v) out << ',' << num(x);
  out << ',' << num(r.total_delay) << ',' << num(r.delay_sums.local) << ','
      << num(r.delay_sums.offload) << ',' << num(r.delay_sums.processing) << ','
      << num(r.delay_sums.queueing) << ',' << num(r.delay_sums.waiting) << ','
      << r.local_overflow_events << ',' << r.edge_overflow_events << ',' << num(r.reward);
  for (double x : r.drift) out << ',' << num(x);
  out << ',' << (r.drift_bound_holds ? 1 : 0) << '\n';
}

inline void write_episode_header(std::ostream& out, std::size_t services) {
  out << "episode,mean_delay,mean_reward";
  for (std::size_t m = 0; m < services; ++m) out << ",mean_acc_" << m;
  for (std::size_t m = 0; m < services; ++m) out << ",final_deficit_" << m;
  out << ",mean_critic_loss\n";
}

inline void write_episode_row(std::ostream& out, const episode_row& r) {
  using detail::num;
  out << r.episode << ',' << num(r.mean_delay) << ',' << num(r.mean_reward);
  for (double x : r.mean_accuracy) out << ',' << num(x);
  for (double x : r.final_deficit) out << ',' << num(x);
  out << ',' << num(r.mean_critic_loss) << '\n';
}

inline void write_summary_header(std::ostream& out, std::size_t services) {
  out << "policy,arrival_rate,bandwidth_hz,episodes,mean_delay,delay_ci95";
  for (std::size_t m = 0; m < services; ++m) out << ",mean_acc_" << m << ",acc_ci95_" << m;
  for (std::size_t m = 0; m < services; ++m) out << ",violation_rate_" << m;
  for (std::size_t m = 0; m < services; ++m) out << ",deficit_rate_" << m;
  out << '\n';
}

inline void write_summary_row(std::ostream& out, const summary_row& r) {
  using detail::num;
  out << r.policy << ',' << num(r.arrival_rate) << ',' << num(r.bandwidth_hz) << ','
      << r.episodes << ',' << num(r.mean_delay) << ',' << num(r.delay_ci95);
  for (std::size_t m = 0; m < r.mean_accuracy.size(); ++m)
    out << ',' << num(r.mean_accuracy[m]) << ',' << num(r.accuracy_ci95[m]);
  for (double x : r.violation_rate) out << ',' << num(x);
  for (double x : r.deficit_rate) out << ',' << num(x);
  out << '\n';
}

/// Optional streaming destinations; rows are written as they are produced so
/// an aborted run keeps what it finished.
struct metrics_sink {
  std::ostream* slots = nullptr;
  std::ostream* episodes = nullptr;
};

/// Summary statistics recomputed from slot rows.
inline summary_row summarize(const scenario_config& cfg, policy_kind policy,
                             const std::vector<slot_row>& slots) {
  const std::size_t n_srv = cfg.service_count();
  summary_row s;
  s.policy = to_string(policy);
  s.arrival_rate = cfg.devices.front().mean_arrival_rate;
  s.bandwidth_hz = cfg.radio.bandwidth_hz;
  s.mean_accuracy.assign(n_srv, 0.0);
  s.accuracy_ci95.assign(n_srv, 0.0);
  s.violation_rate.assign(n_srv, 0.0);
  s.deficit_rate.assign(n_srv, 0.0);
  if (slots.empty()) return s;

  std::vector<double> ep_delay;
  std::vector<std::vector<double>> ep_acc(n_srv), ep_deficit(n_srv);
  std::size_t begin = 0;
  double delay_total = 0;
  std::vector<double> acc_total(n_srv, 0.0);
  while (begin < slots.size()) {
    std::size_t end = begin;
    while (end < slots.size() && slots[end].episode == slots[begin].episode) ++end;
    const double len = static_cast<double>(end - begin);
    double d = 0;
    std::vector<double> a(n_srv, 0.0), z(n_srv, 0.0);
    for (std::size_t i = begin; i < end; ++i) {
      d += slots[i].total_delay;
      delay_total += slots[i].total_delay;
      for (std::size_t m = 0; m < n_srv; ++m) {
        a[m] += slots[i].accuracy[m];
        acc_total[m] += slots[i].accuracy[m];
      }
    }
    ep_delay.push_back(d / len);
    // replay the deficit recursion to the end of the episode
    for (std::size_t m = 0; m < n_srv; ++m) {
      double zm = slots[begin].deficit[m];
      for (std::size_t i = begin; i < end; ++i)
        zm = lyapunov::update_deficit(zm, cfg.services[m].acc_threshold, slots[i].accuracy[m]);
      ep_acc[m].push_back(a[m] / len);
      ep_deficit[m].push_back(zm / len);
    }
    begin = end;
  }
  const double total = static_cast<double>(slots.size());
  s.episodes = ep_delay.size();
  s.mean_delay = delay_total / total;
  s.delay_ci95 = detail::ci95(ep_delay);
  for (std::size_t m = 0; m < n_srv; ++m) {
    s.mean_accuracy[m] = acc_total[m] / total;
    s.accuracy_ci95[m] = detail::ci95(ep_acc[m]);
    double viol = 0, zr = 0;
    for (std::size_t e = 0; e < ep_acc[m].size(); ++e) {
      viol += ep_acc[m][e] < cfg.services[m].acc_threshold;
      zr += ep_deficit[m][e];
    }
    s.violation_rate[m] = viol / static_cast<double>(s.episodes);
    s.deficit_rate[m] = zr / static_cast<double>(s.episodes);
  }
  return s;
}

struct training_result {
  experiment_result result;
  ddpg_agent agent;
};

/// Trains a learned policy for cfg.episodes x cfg.slots_per_episode slots.
inline training_result run_training(const scenario_config& cfg, std::uint64_t seed,
                                    policy_kind policy = policy_kind::proposed,
                                    metrics_sink sink = {}) {
  if (!is_learned(policy))
    throw std::invalid_argument("run_training: policy '" + to_string(policy) + "' is not learned");
  validate(cfg);
  training_result out{{}, ddpg_agent(cfg, seed, rule_for(policy))};
  environment env(cfg, seed);
  if (sink.slots) write_slot_header(*sink.slots, cfg.service_count());
  if (sink.episodes) write_episode_header(*sink.episodes, cfg.service_count());
  try {
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
      auto observe = [&](std::size_t t, const network_state& before, const action&,
                         const step_report& rep) {
        out.result.slots.push_back(make_slot_row(cfg, e, t, before, rep));
        if (sink.slots) write_slot_row(*sink.slots, out.result.slots.back());
      };
      const auto em = train_episode(env, out.agent, cfg.slots_per_episode, observe);
      episode_row row{e, em.mean_delay, em.mean_reward, em.mean_accuracy, em.final_deficit,
                      em.mean_critic_loss};
      if (sink.episodes) write_episode_row(*sink.episodes, row);
      out.result.episodes.push_back(std::move(row));
    }
  } catch (...) {
    if (sink.slots) sink.slots->flush();
    if (sink.episodes) sink.episodes->flush();
    throw;
  }
  out.result.summary = summarize(cfg, policy, out.result.slots);
  return out;
}

/// Seed of the evaluation environment: distinct from the training stream but
/// shared by every policy evaluated with the same master seed.
inline std::uint64_t evaluation_seed(std::uint64_t seed) {
  return make_stream(seed, stream::evaluation)();
}

/// Runs `episodes` exploration-free episodes. Learned policies act through a
/// copy of `agent`, which is never trained.
inline experiment_result run_evaluation(const scenario_config& cfg, policy_kind policy,
                                        const ddpg_agent* agent, std::uint64_t seed,
                                        std::size_t episodes, metrics_sink sink = {}) {
  validate(cfg);
  std::optional<ddpg_agent> actor;
  if (is_learned(policy)) {
    if (agent == nullptr)
      throw std::invalid_argument("run_evaluation: learned policy needs a checkpoint");
    actor.emplace(*agent);
  }
  const static_policy fixed = make_static_policy(cfg);
  myopic_options mopts;
  mopts.include_deficit = cfg.myopic_includes_deficit;

  experiment_result res;
  environment env(cfg, evaluation_seed(seed));
  if (sink.slots) write_slot_header(*sink.slots, cfg.service_count());
  if (sink.episodes) write_episode_header(*sink.episodes, cfg.service_count());
  for (std::size_t e = 0; e < episodes; ++e) {
    env.reset();
    episode_row ep{e, 0, 0, std::vector<double>(cfg.service_count(), 0.0), {}, 0};
    for (std::size_t t = 0; t < cfg.slots_per_episode; ++t) {
      const network_state before = env.state();
      action a;
      switch (policy) {
        case policy_kind::static_config: a = static_action(cfg, fixed); break;
        case policy_kind::myopic: a = myopic_action(cfg, before, mopts); break;
        default: {
          const auto u = actor->act(encode_state(before, cfg), false);
          a = decode_action(u, cfg, before, rule_for(policy));
        }
      }
      const auto rep = env.step(a);
      res.slots.push_back(make_slot_row(cfg, e, t, before, rep));
      if (sink.slots) write_slot_row(*sink.slots, res.slots.back());
      ep.mean_delay += rep.total_delay;
      ep.mean_reward += rep.reward;
      for (std::size_t m = 0; m < cfg.service_count(); ++m) ep.mean_accuracy[m] += rep.accuracy[m];
    }
    const double n = static_cast<double>(cfg.slots_per_episode);
    ep.mean_delay /= n;
    ep.mean_reward /= n;
    for (double& x : ep.mean_accuracy) x /= n;
    ep.final_deficit = env.state().deficit;
    if (sink.episodes) write_episode_row(*sink.episodes, ep);
    res.episodes.push_back(std::move(ep));
  }
  res.summary = summarize(cfg, policy, res.slots);
  return res;
}

}  // namespace cinfer

#endif  // CINFER_HARNESS_HPP
