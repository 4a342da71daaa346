#ifndef CINFER_BASELINES_HPP
#define CINFER_BASELINES_HPP

#include <cstddef>
#include <limits>
#include <vector>

#include "cinfer/allocator.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"

namespace cinfer {

enum class allocation_rule { optimal, fixed };

/// Lambda_m for every service under a candidate sampling/offload choice.
inline std::vector<double> service_loads(const scenario_config& cfg, const network_state& s,
                                         const std::vector<int>& sampling,
                                         const std::vector<int>& offload) {
  std::vector<double> loads(cfg.service_count());
  const int levels = cfg.ladder.size();
  for (std::size_t m = 0; m < cfg.service_count(); ++m) {
    std::vector<int> off;
    std::vector<double> task;
    for (std::size_t n : cfg.members(m)) {
      off.push_back(offload[n]);
      task.push_back(task_bits_at(sampling[n], levels, s.arrival_bits[n]));
    }
    loads[m] = allocator::service_load(off, task, s.edge_backlog_bits[m],
                                       cfg.services[m].eta_uncompressed);
  }
  return loads;
}

/// Edge shares proportional to each service's average cycle demand.
inline std::vector<double> fixed_allocation(const scenario_config& cfg) {
  std::vector<double> demand(cfg.service_count(), 0.0);
  for (const auto& d : cfg.devices) {
    const auto& srv = cfg.services[d.service];
    demand[d.service] += d.mean_arrival_rate * srv.raw_task_bits * srv.eta_uncompressed;
  }
  double total = 0;
  for (double x : demand) total += x;
  for (double& x : demand)
    x = total > 0 ? x / total : 1.0 / static_cast<double>(demand.size());
  return demand;
}

/// Fills `a.allocation` from its sampling and offload decisions.
inline void allocate(const scenario_config& cfg, const network_state& s, action& a,
                     allocation_rule rule) {
  if (rule == allocation_rule::fixed) {
    a.allocation = fixed_allocation(cfg);
    return;
  }
  a.allocation = allocator::optimal_allocation(service_loads(cfg, s, a.sampling, a.offload)).shares;
}

/// Constant per-service configuration. `offload` uses the action convention
/// (1 local, 0 offload).
struct static_policy {
  std::vector<int> level;    // per service
  std::vector<int> offload;  // per service
  std::vector<double> allocation;
};

inline void validate(const scenario_config& cfg, const static_policy& p) {
  if (p.level.size() != cfg.service_count() || p.offload.size() != cfg.service_count() ||
      p.allocation.size() != cfg.service_count())
    throw config_error("static policy: one entry per service required");
  for (std::size_t m = 0; m < cfg.service_count(); ++m) {
    const auto& srv = cfg.services[m];
    if (p.level[m] < 1 || p.level[m] > cfg.ladder.size())
      throw config_error("static policy: level out of range");
    const double model = p.offload[m] == 1 ? srv.acc_compressed : srv.acc_uncompressed;
    if (cfg.ladder.accuracy(p.level[m]) * model < srv.acc_threshold)
      throw config_error("static policy: service " + std::to_string(m) +
                         " configuration misses its accuracy threshold");
  }
}

/// Default static configuration: everything offloaded at the smallest level
/// that meets the threshold with the edge model.
inline static_policy make_static_policy(const scenario_config& cfg) {
  static_policy p;
  for (std::size_t m = 0; m < cfg.service_count(); ++m) {
    const auto& srv = cfg.services[m];
    int chosen = 0;
    for (int k = 1; k <= cfg.ladder.size() && chosen == 0; ++k)
      if (cfg.ladder.accuracy(k) * srv.acc_uncompressed >= srv.acc_threshold) chosen = k;
    if (chosen == 0)
      throw config_error("static policy: no sampling level meets service " +
                         std::to_string(m) + " accuracy threshold");
    p.level.push_back(chosen);
    p.offload.push_back(0);
  }
  p.allocation = fixed_allocation(cfg);
  validate(cfg, p);
  return p;
}

inline action static_action(const scenario_config& cfg, const static_policy& p) {
  action a;
  for (const auto& d : cfg.devices) {
    a.sampling.push_back(p.level[d.service]);
    a.offload.push_back(p.offload[d.service]);
  }
  a.allocation = p.allocation;
  return a;
}

/// One-slot reward of an action, optionally without the deficit term.
inline double one_step_reward(const scenario_config& cfg, const network_state& s, const action& a,
                              bool include_deficit) {
  const auto rep = evaluate_slot(cfg, s, a).report;
  return include_deficit ? rep.reward : -cfg.tradeoff_v * rep.total_delay;
}

struct myopic_options {
  bool include_deficit = true;
  int max_passes = 5;
};

/// Greedy one-slot reward maximizer. Sweeps devices in index order, trying
/// every (level, offload) pair with the others held fixed and the edge split
/// from optimal_allocation. Ties go to the higher level, then to offloading.
inline action myopic_action(const scenario_config& cfg, const network_state& s,
                            myopic_options opts = {}) {
  const action start = static_action(cfg, make_static_policy(cfg));
  const double start_reward = one_step_reward(cfg, s, start, opts.include_deficit);

  action cur = start;
  allocate(cfg, s, cur, allocation_rule::optimal);
  for (int pass = 0; pass < opts.max_passes; ++pass) {
    bool changed = false;
    for (std::size_t n = 0; n < cfg.device_count(); ++n) {
      action best = cur;
      double best_reward = -std::numeric_limits<double>::infinity();
      for (int k = cfg.ladder.size(); k >= 1; --k)
        for (int o = 0; o <= 1; ++o) {
          action cand = cur;
          cand.sampling[n] = k;
          cand.offload[n] = o;
          allocate(cfg, s, cand, allocation_rule::optimal);
          const double r = one_step_reward(cfg, s, cand, opts.include_deficit);
          if (r > best_reward) {
            best_reward = r;
            best = std::move(cand);
          }
        }
      if (best.sampling[n] != cur.sampling[n] || best.offload[n] != cur.offload[n]) changed = true;
      cur = std::move(best);
    }
    if (!changed) break;
  }
  if (one_step_reward(cfg, s, cur, opts.include_deficit) < start_reward) return start;
  return cur;
}

}  // namespace cinfer

#endif  // CINFER_BASELINES_HPP
