#ifndef CINFER_VERIFY_HPP
#define CINFER_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cinfer/agent.hpp"
#include "cinfer/allocator.hpp"
#include "cinfer/baselines.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"
#include "cinfer/lyapunov.hpp"
#include "cinfer/mlp.hpp"
#include "cinfer/rng.hpp"

namespace cinfer::verify {

struct check_result {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct report {
  std::vector<check_result> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

using allocation_fn = std::function<std::vector<double>(std::span<const double>)>;
using deficit_fn = std::function<double(double z, double threshold, double accuracy)>;

inline allocation_fn closed_form_allocation() {
  return [](std::span<const double> l) { return allocator::optimal_allocation(l).shares; };
}

inline deficit_fn deficit_update() { return &lyapunov::update_deficit; }

namespace detail {

inline std::vector<double> random_loads(rng_engine& rng) {
  const int services = std::uniform_int_distribution<int>(1, 5)(rng);
  std::vector<double> loads(static_cast<std::size_t>(services));
  for (double& l : loads) l = 10.0 * (1.0 - uniform01(rng));  // (0, 10]
  return loads;
}

inline std::string describe(std::span<const double> v) {
  std::ostringstream out;
  out.precision(17);
  out << '(';
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? ", " : "") << v[i];
  out << ')';
  return out.str();
}

}  // namespace detail

struct allocator_sweep_stats {
  double max_gap = 0;       // closed form vs oracle, per component
  double max_kkt_spread = 0;  // relative spread of L_m / (f_b c_m^2)
  std::vector<double> worst_gap_instance;
  std::vector<double> worst_kkt_instance;
};

/// Random instances with M in 1..5 and loads in (0, 10].
inline allocator_sweep_stats allocator_sweep(const allocation_fn& alloc, std::uint64_t seed,
                                             std::size_t instances, double edge_cpu_hz = 2e9) {
  rng_engine rng = make_stream(seed, stream::instances, 1);
  allocator_sweep_stats st;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto loads = detail::random_loads(rng);
    const auto c = alloc(loads);
    const auto oracle = allocator::oracle_allocation(loads);
    double gap = 0;
    for (std::size_t m = 0; m < loads.size(); ++m) gap = std::max(gap, std::abs(c[m] - oracle[m]));
    if (gap > st.max_gap) {
      st.max_gap = gap;
      st.worst_gap_instance = loads;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (std::size_t m = 0; m < loads.size(); ++m) {
      const double marginal = c[m] > 0 ? loads[m] / (edge_cpu_hz * c[m] * c[m])
                                       : std::numeric_limits<double>::infinity();
      lo = std::min(lo, marginal);
      hi = std::max(hi, marginal);
    }
    const double spread = hi / lo - 1.0;
    if (!(spread <= st.max_kkt_spread)) {
      st.max_kkt_spread = spread;
      st.worst_kkt_instance = loads;
    }
  }
  return st;
}

inline std::vector<check_result> check_allocator(const allocation_fn& alloc, std::uint64_t seed,
                                                 std::size_t instances = 1000,
                                                 double gap_tol = 1e-5, double kkt_tol = 1e-9) {
  const auto st = allocator_sweep(alloc, seed, instances);
  std::vector<check_result> out;
  {
    std::ostringstream d;
    d << "max component gap " << st.max_gap << " over " << instances << " instances";
    if (st.max_gap >= gap_tol) d << "; worst loads " << detail::describe(st.worst_gap_instance);
    out.push_back({"allocator matches oracle", st.max_gap < gap_tol, d.str()});
  }
  {
    std::ostringstream d;
    d << "max relative spread of marginal delay " << st.max_kkt_spread;
    if (!(st.max_kkt_spread <= kkt_tol))
      d << "; worst loads " << detail::describe(st.worst_kkt_instance);
    out.push_back({"allocator KKT stationarity", st.max_kkt_spread <= kkt_tol, d.str()});
  }
  return out;
}

/// Drift inequality over random (Z, A) pairs, A in [A_min, 1], for every
/// service of the scenario.
inline check_result check_drift(const scenario_config& cfg, const deficit_fn& update,
                                std::uint64_t seed, std::size_t draws = 10000) {
  rng_engine rng = make_stream(seed, stream::instances, 2);
  std::size_t failures = 0;
  std::ostringstream first;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t m = i % cfg.service_count();
    const double th = cfg.services[m].acc_threshold;
    const double amin = cfg.min_accuracy(m);
    const double c = lyapunov::drift_constant(th, amin);
    const double z = 2.0 * uniform01(rng);
    const double a = amin + (1.0 - amin) * uniform01(rng);
    const double drift = lyapunov::lyapunov_value(update(z, th, a)) - lyapunov::lyapunov_value(z);
    const double bound = c + z * (th - a);
    if (!(drift <= bound + lyapunov::drift_tolerance)) {
      if (failures == 0)
        first << "; first failure Z=" << z << " A=" << a << " A_th=" << th << " drift=" << drift
              << " bound=" << bound;
      ++failures;
    }
  }
  std::ostringstream d;
  d << failures << " of " << draws << " draws violate the bound" << first.str();
  return {"drift bound", failures == 0, d.str()};
}

/// Scalar objective used by gradient checks, together with its analytic
/// weight gradient.
struct objective {
  std::function<double(const nn::mlp&)> value;
  std::function<nn::gradients(const nn::mlp&)> gradient;
};

struct gradient_error {
  double max_rel = 0;
  std::size_t layer = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Central differences with step h on every parameter; worst relative error
/// per layer.
inline std::vector<double> finite_difference_errors(nn::mlp net, const objective& obj,
                                                    double h = 1e-5) {
  const auto g = obj.gradient(net);
  std::vector<double> worst(net.layers().size(), 0.0);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto probe = [&](double& p, double analytic) {
      const double keep = p;
      p = keep + h;
      const double up = obj.value(net);
      p = keep - h;
      const double down = obj.value(net);
      p = keep;
      worst[l] = std::max(worst[l], relative_error(analytic, (up - down) / (2 * h)));
    };
    auto& ly = net.layers()[l];
    for (Eigen::Index i = 0; i < ly.weight.size(); ++i)
      probe(ly.weight.data()[i], g[l].weight.data()[i]);
    for (Eigen::Index i = 0; i < ly.bias.size(); ++i) probe(ly.bias.data()[i], g[l].bias.data()[i]);
  }
  return worst;
}

namespace detail {

// True when a hidden pre-activation sits within `margin` of the ReLU kink.
inline bool near_kink(const nn::mlp& net, const nn::matrix& x, double margin = 1e-4) {
  nn::mlp::tape t;
  net.forward(x, t);
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
    if ((t.pre[l].array().abs() < margin).any()) return true;
  return false;
}

inline nn::matrix random_matrix(Eigen::Index rows, Eigen::Index cols, rng_engine& rng,
                                double lo = -1, double hi = 1) {
  nn::matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform01(rng);
  return m;
}

}  // namespace detail

/// Finite-difference checks of the actor output map, the critic TD loss and
/// the policy gradient through the critic, on networks shaped for `cfg`.
inline check_result check_gradients(const scenario_config& cfg, std::uint64_t seed,
                                    std::size_t instances = 20, double tol = 1e-4,
                                    std::size_t batch = 3) {
  rng_engine rng = make_stream(seed, stream::instances, 3);
  const auto b = static_cast<Eigen::Index>(batch);
  double worst = 0;
  std::string where;
  for (std::size_t i = 0; i < instances; ++i) {
    ddpg_agent agent(cfg, seed + 1000 + i);
    nn::mlp actor = agent.actor(), critic = agent.critic();
    const auto in = static_cast<Eigen::Index>(feature_width(cfg));
    const auto act = static_cast<Eigen::Index>(action_width(cfg));
    // enlarge the actor's last layer so tanh is exercised away from zero
    actor.layers().back().weight *= 100.0;

    nn::matrix s, a;
    do {
      s = detail::random_matrix(in, b, rng, 0, 1);
      a = detail::random_matrix(act, b, rng);
    } while (detail::near_kink(actor, s) || detail::near_kink(critic, stack_rows(s, a)) ||
             detail::near_kink(critic, stack_rows(s, actor.forward(s))));
    const nn::vector y = detail::random_matrix(b, 1, rng);
    const nn::matrix proj = detail::random_matrix(act, b, rng);

    objective actor_out{
        [&](const nn::mlp& net) { return net.forward(s).cwiseProduct(proj).sum(); },
        [&](const nn::mlp& net) {
          nn::mlp::tape t;
          net.forward(s, t);
          return net.backward(t, proj);
        }};
    objective td_loss{[&](const nn::mlp& net) { return critic_loss(net, s, a, y).loss; },
                      [&](const nn::mlp& net) { return critic_loss(net, s, a, y).grads; }};
    objective policy{[&](const nn::mlp& net) { return -critic.forward(stack_rows(s, net.forward(s))).mean(); },
                     [&](const nn::mlp& net) { return actor_gradient(net, critic, s); }};

    const std::pair<const char*, std::vector<double>> runs[] = {
        {"actor output", finite_difference_errors(actor, actor_out)},
        {"critic loss", finite_difference_errors(critic, td_loss)},
        {"policy gradient", finite_difference_errors(actor, policy)}};
    for (const auto& [name, errs] : runs)
      for (std::size_t l = 0; l < errs.size(); ++l)
        if (errs[l] > worst) {
          worst = errs[l];
          where = std::string(name) + " layer " + std::to_string(l) + " instance " +
                  std::to_string(i);
        }
  }
  std::ostringstream d;
  d << "max relative error " << worst << (where.empty() ? "" : " at " + where) << " over "
    << instances << " instances";
  return {"gradient check", worst <= tol, d.str()};
}

namespace detail {

inline action random_action(const scenario_config& cfg, const network_state& s, rng_engine& rng) {
  action a;
  for (std::size_t n = 0; n < cfg.device_count(); ++n) {
    a.sampling.push_back(std::uniform_int_distribution<int>(1, cfg.ladder.size())(rng));
    a.offload.push_back(uniform01(rng) < 0.5 ? 1 : 0);
  }
  const double pick = uniform01(rng);
  if (pick < 0.5) {
    allocate(cfg, s, a, allocation_rule::optimal);
  } else {
    a.allocation.resize(cfg.service_count());
    double total = 0;
    for (double& c : a.allocation) total += c = -std::log(1.0 - uniform01(rng));
    for (double& c : a.allocation) c /= total;
    if (pick > 0.95) a.allocation[0] = 0.0;  // exercises the allocation floor
  }
  return a;
}

}  // namespace detail

/// Randomized-step property suite: queue bounds, overflow consistency, exact
/// delay decomposition, accuracy bounds and monotonicity, drift bound. Half
/// of the steps run on a stressed copy of the scenario so that overflows
/// actually occur.
inline check_result check_environment(const scenario_config& cfg, std::uint64_t seed,
                                      std::size_t steps = 10000) {
  scenario_config stressed = cfg;
  for (auto& d : stressed.devices) {
    d.mean_arrival_rate = 3.0;
    d.local_queue_cap_bits /= 4;
  }
  for (auto& s : stressed.services) s.edge_queue_cap_bits /= 8;

  rng_engine rng = make_stream(seed, stream::instances, 4);
  std::size_t overflows = 0;
  std::vector<std::string> failures;
  auto fail = [&](const std::string& what) {
    if (failures.size() < 5) failures.push_back(what);
  };

  for (const scenario_config* sc : std::initializer_list<const scenario_config*>{&cfg, &stressed}) {
    environment env(*sc, seed);
    for (std::size_t t = 0; t < steps / 2; ++t) {
      if (t % sc->slots_per_episode == 0) env.reset();
      const network_state s = env.state();
      const action a = detail::random_action(*sc, s, rng);
      const auto out = evaluate_slot(*sc, s, a);
      const step_report rep = env.step(a);
      const network_state& next = env.state();
      const std::string at = " at step " + std::to_string(t);

      for (std::size_t n = 0; n < sc->device_count(); ++n) {
        const auto& dev = sc->devices[n];
        const auto& srv = sc->services[dev.service];
        if (!(next.local_backlog_bits[n] >= 0 &&
              next.local_backlog_bits[n] <= dev.local_queue_cap_bits))
          fail("local backlog out of bounds" + at);
        const double raw = s.local_backlog_bits[n] + a.offload[n] * out.task_bits[n] -
                           dev.cpu_hz * sc->slot_seconds / srv.eta_compressed;
        if ((rep.local_overflow[n] > 0) != (raw > dev.local_queue_cap_bits))
          fail("local overflow inconsistent with pre-clamp backlog" + at);
        if (rep.local_overflow[n] > 0) ++overflows;
        const auto& d = rep.delays[n];
        if (!(d.local >= 0 && d.offload >= 0 && d.processing >= 0 && d.queueing >= 0 &&
              d.waiting >= 0))
          fail("negative delay component" + at);
      }
      for (std::size_t m = 0; m < sc->service_count(); ++m) {
        const auto& srv = sc->services[m];
        if (!(next.edge_backlog_bits[m] >= 0 && next.edge_backlog_bits[m] <= srv.edge_queue_cap_bits))
          fail("edge backlog out of bounds" + at);
        double offered = 0;
        for (std::size_t n : sc->members(m))
          if (a.offload[n] == 0) offered += out.task_bits[n];
        const double raw = s.edge_backlog_bits[m] + offered -
                           a.allocation[m] * sc->edge_cpu_hz * sc->slot_seconds / srv.eta_uncompressed;
        if ((rep.edge_overflow[m] > 0) != (raw > srv.edge_queue_cap_bits))
          fail("edge overflow inconsistent with pre-clamp backlog" + at);
        if (rep.edge_overflow[m] > 0) ++overflows;

        const double lo = sc->min_accuracy(m);
        const double hi = srv.acc_uncompressed * sc->ladder.accuracy(sc->ladder.size());
        if (!(rep.accuracy[m] >= lo - 1e-12 && rep.accuracy[m] <= hi + 1e-12))
          fail("accuracy outside [A_min, A_max]" + at);
        if (!(next.deficit[m] >= 0)) fail("negative deficit" + at);
        const double th = srv.acc_threshold;
        const auto chk = lyapunov::drift_bound_check(s.deficit[m], rep.accuracy[m], th,
                                                     lyapunov::drift_constant(th, lo), lo);
        if (!chk.holds) fail("drift bound violated" + at);

        // monotonicity: raise one member's level, or move it to the edge
        const auto members = sc->members(m);
        std::vector<int> samp, off;
        for (std::size_t n : members) {
          samp.push_back(a.sampling[n]);
          off.push_back(a.offload[n]);
        }
        const double base = service_accuracy(sc->ladder, srv, samp, off);
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng);
        if (samp[i] < sc->ladder.size()) {
          auto up = samp;
          ++up[i];
          if (service_accuracy(sc->ladder, srv, up, off) < base)
            fail("accuracy decreased when raising a sampling level" + at);
        }
        if (off[i] == 1) {
          auto edge = off;
          edge[i] = 0;
          if (service_accuracy(sc->ladder, srv, samp, edge) < base)
            fail("accuracy decreased when offloading" + at);
        }
      }

      double sum = 0;
      for (const auto& d : rep.delays) sum += d.sum();
      const double penalty = sc->overflow_penalty *
                             static_cast<double>(rep.local_overflow_events + rep.edge_overflow_events);
      if (rep.total_delay != sum + penalty) fail("delay decomposition mismatch" + at);
    }
  }

  std::ostringstream d;
  d << steps << " steps, " << overflows << " overflow events";
  for (const auto& f : failures) d << "; " << f;
  return {"environment invariants", failures.empty(), d.str()};
}

/// Empirical state frequencies of one long channel trajectory against the
/// stationary distribution.
inline check_result check_channel_stationarity(const scenario_config& cfg, std::uint64_t seed,
                                               std::size_t slots = 100000, double tol = 0.01) {
  rng_engine rng = make_stream(seed, stream::instances, 5);
  const auto pi = cfg.channel.stationary();
  std::vector<double> freq(pi.size(), 0.0);
  std::size_t state = 0;
  for (std::size_t t = 0; t < slots; ++t) {
    state = sample_channel(cfg.channel, state, rng);
    freq[state] += 1.0;
  }
  double worst = 0;
  for (std::size_t j = 0; j < pi.size(); ++j)
    worst = std::max(worst, std::abs(freq[j] / static_cast<double>(slots) - pi[j]));
  std::ostringstream d;
  d << "max |empirical - stationary| = " << worst << " over " << slots << " slots";
  return {"channel stationarity", worst <= tol, d.str()};
}

/// Every property suite against the shipped implementation.
inline report run_all(const scenario_config& cfg, std::uint64_t seed) {
  report r;
  for (auto& c : check_allocator(closed_form_allocation(), seed)) r.checks.push_back(std::move(c));
  r.checks.push_back(check_drift(cfg, deficit_update(), seed));
  r.checks.push_back(check_gradients(cfg, seed));
  r.checks.push_back(check_environment(cfg, seed));
  r.checks.push_back(check_channel_stationarity(cfg, seed));
  return r;
}

}  // namespace cinfer::verify

#endif  // CINFER_VERIFY_HPP
