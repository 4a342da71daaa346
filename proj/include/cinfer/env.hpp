#ifndef CINFER_ENV_HPP
#define CINFER_ENV_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cinfer/config.hpp"
#include "cinfer/lyapunov.hpp"
#include "cinfer/rng.hpp"

namespace cinfer {

/// Per-slot network state: queue backlogs in bits, channel state indices, raw
/// bits generated this slot and the accuracy deficit backlogs.
struct network_state {
  std::vector<double> local_backlog_bits;  // per device
  std::vector<double> edge_backlog_bits;   // per service
  std::vector<std::size_t> channel;        // per device
  std::vector<double> arrival_bits;        // per device
  std::vector<double> deficit;             // per service

  bool operator==(const network_state&) const = default;
};

/// Joint decision for one slot. `sampling` holds the 1-based level index k of
/// each device; `offload[n] == 1` runs the task locally, 0 sends it to the
/// access point.
struct action {
  std::vector<int> sampling;
  std::vector<int> offload;
  std::vector<double> allocation;  // per service share of the edge CPU

  bool operator==(const action&) const = default;
};

struct device_delay {
  double local = 0;
  double offload = 0;
  double processing = 0;
  double queueing = 0;
  double waiting = 0;

  double sum() const { return local + offload + processing + queueing + waiting; }
};

struct step_report {
  std::vector<device_delay> delays;
  double total_delay = 0;
  std::vector<double> accuracy;        // per service
  std::vector<double> local_overflow;  // bits dropped, per device
  std::vector<double> edge_overflow;   // bits dropped, per service
  std::size_t local_overflow_events = 0;
  std::size_t edge_overflow_events = 0;
  bool allocation_floored = false;     // a loaded service had c_m below the floor
  double reward = 0;
};

// Substitute share for a loaded service that was given no edge CPU.
inline constexpr double allocation_floor = 1e-6;

inline void validate_action(const scenario_config& cfg, const action& a) {
  const std::size_t n = cfg.device_count();
  if (a.sampling.size() != n || a.offload.size() != n ||
      a.allocation.size() != cfg.service_count())
    throw std::invalid_argument("action: dimension mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (a.sampling[i] < 1 || a.sampling[i] > cfg.ladder.size())
      throw std::invalid_argument("action: sampling level out of range");
    if (a.offload[i] != 0 && a.offload[i] != 1)
      throw std::invalid_argument("action: offload must be 0 or 1");
  }
  double total = 0;
  for (double c : a.allocation) {
    if (!(c >= 0 && c <= 1)) throw std::invalid_argument("action: allocation outside [0, 1]");
    total += c;
  }
  if (total > 1 + 1e-12) throw std::invalid_argument("action: allocation exceeds 1");
}

inline std::size_t sample_channel(const channel_model& model, std::size_t state, rng_engine& rng) {
  if (state >= model.size()) throw config_error("channel: unknown state index");
  const auto& row = model.transition[state];
  const double u = uniform01(rng);
  double acc = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    acc += row[j];
    if (u < acc) return j;
  }
  // u landed in the rounding slack at the top of the row
  for (std::size_t j = row.size(); j-- > 0;)
    if (row[j] > 0) return j;
  return state;
}

inline std::size_t sample_channel(const channel_model& model, const std::string& state,
                                  rng_engine& rng) {
  return sample_channel(model, model.index_of(state), rng);
}

/// Raw bits generated in one slot: rate ~ U(lambda - 0.5, lambda + 0.5)
/// clamped at zero, times the raw task size.
inline double sample_arrivals(const device_spec& device, const service_spec& service,
                              rng_engine& rng) {
  const double rate = device.mean_arrival_rate - 0.5 + uniform01(rng);
  return std::max(rate, 0.0) * service.raw_task_bits;
}

inline double task_bits_at(int level, int levels, double raw_bits) {
  return raw_bits * static_cast<double>(level) / static_cast<double>(levels);
}

/// Task size for a one-hot sampling selection.
inline double task_bits(std::span<const int> one_hot, double raw_bits) {
  int chosen = 0, ones = 0;
  for (std::size_t k = 0; k < one_hot.size(); ++k) {
    if (one_hot[k] == 1) {
      ++ones;
      chosen = static_cast<int>(k) + 1;
    } else if (one_hot[k] != 0) {
      ones = -1;
      break;
    }
  }
  if (ones != 1) throw std::invalid_argument("task_bits: sampling vector is not one-hot");
  return task_bits_at(chosen, static_cast<int>(one_hot.size()), raw_bits);
}

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Uplink rate of one device on its W/N sub-band.
inline double tx_rate(const radio_config& radio, double gain_db) {
  const double band = radio.bandwidth_hz / static_cast<double>(radio.device_share_count);
  const double noise = dbm_to_watts(radio.noise_density_dbm_hz) * band;
  const double snr = dbm_to_watts(radio.tx_power_dbm) * db_to_linear(gain_db) /
                     (db_to_linear(radio.noise_figure_db) * noise);
  return band * std::log2(1.0 + snr);
}

inline double local_delay(int offload, double eta_compressed, double backlog_bits,
                          double task, double cpu_hz) {
  return offload * eta_compressed * (backlog_bits + task) / cpu_hz;
}

struct queue_update {
  double backlog = 0;
  double overflow = 0;
};

inline queue_update bounded_queue(double backlog, double arrivals, double served, double cap) {
  const double raw = backlog + arrivals - served;
  return {std::min(std::max(raw, 0.0), cap), std::max(raw - cap, 0.0)};
}

inline queue_update update_local_queue(double backlog, int offload, double task, double cpu_hz,
                                       double eta_compressed, double slot_seconds, double cap) {
  return bounded_queue(backlog, offload * task, cpu_hz * slot_seconds / eta_compressed, cap);
}

inline double offload_delay(int offload, double task, double rate) {
  return (1 - offload) * task / rate;
}

struct edge_delay {
  double processing = 0;
  double queueing = 0;
  double waiting = 0;
};

struct edge_delay_result {
  std::vector<edge_delay> delays;
  bool floored = false;
};

/// Edge-side delays for the members of one service. Queueing and waiting are
/// charged to offloading devices only.
inline edge_delay_result edge_delays(std::span<const int> offload, std::span<const double> task,
                                     double edge_backlog_bits, double share, double edge_cpu_hz,
                                     double eta_uncompressed) {
  edge_delay_result out;
  out.delays.resize(offload.size());
  double offered = 0;
  bool any = false;
  for (std::size_t i = 0; i < offload.size(); ++i)
    if (offload[i] == 0) {
      offered += task[i];
      any = true;
    }
  if (!any) return out;
  if (share < allocation_floor) {
    share = allocation_floor;
    out.floored = true;
  }
  const double speed = share * edge_cpu_hz;
  for (std::size_t n = 0; n < offload.size(); ++n) {
    if (offload[n] != 0) continue;
    out.delays[n].processing = eta_uncompressed * task[n] / speed;
    out.delays[n].queueing = edge_backlog_bits * eta_uncompressed / speed;
    out.delays[n].waiting = eta_uncompressed * (offered - task[n]) / (2.0 * speed);
  }
  return out;
}

inline queue_update update_edge_queue(double backlog, double arrivals, double share,
                                      double edge_cpu_hz, double eta_uncompressed,
                                      double slot_seconds, double cap) {
  return bounded_queue(backlog, arrivals, share * edge_cpu_hz * slot_seconds / eta_uncompressed,
                       cap);
}

inline double total_delay(std::span<const device_delay> delays,
                          std::span<const double> local_overflow,
                          std::span<const double> edge_overflow, double penalty) {
  double d = 0;
  for (const auto& c : delays) d += c.sum();
  std::size_t events = 0;
  for (double o : local_overflow) events += o > 0;
  for (double o : edge_overflow) events += o > 0;
  return d + penalty * static_cast<double>(events);
}

/// Mean per-device accuracy of one service: g(theta_k) times the accuracy of
/// whichever model ran the task.
inline double service_accuracy(const sampling_ladder& ladder, const service_spec& service,
                               std::span<const int> sampling, std::span<const int> offload) {
  if (sampling.empty()) throw config_error("service_accuracy: service has no devices");
  double sum = 0;
  for (std::size_t i = 0; i < sampling.size(); ++i)
    sum += ladder.accuracy(sampling[i]) *
           (offload[i] * service.acc_compressed + (1 - offload[i]) * service.acc_uncompressed);
  return sum / static_cast<double>(sampling.size());
}

/// Deterministic part of one slot: every delay, accuracy and queue update a
/// given action produces on a given state.
struct slot_outcome {
  step_report report;
  std::vector<double> task_bits;  // per device
  std::vector<double> next_local_backlog;
  std::vector<double> next_edge_backlog;
  std::vector<double> next_deficit;
};

inline slot_outcome evaluate_slot(const scenario_config& cfg, const network_state& s,
                                  const action& a) {
  const std::size_t n_dev = cfg.device_count();
  const std::size_t n_srv = cfg.service_count();
  const int levels = cfg.ladder.size();
  slot_outcome out;
  auto& rep = out.report;
  rep.delays.resize(n_dev);
  rep.local_overflow.assign(n_dev, 0.0);
  rep.edge_overflow.assign(n_srv, 0.0);
  rep.accuracy.assign(n_srv, 0.0);
  out.task_bits.resize(n_dev);
  out.next_local_backlog.resize(n_dev);
  out.next_edge_backlog.resize(n_srv);
  out.next_deficit.resize(n_srv);

  for (std::size_t n = 0; n < n_dev; ++n) {
    const auto& dev = cfg.devices[n];
    const auto& srv = cfg.services[dev.service];
    const double task = task_bits_at(a.sampling[n], levels, s.arrival_bits[n]);
    out.task_bits[n] = task;
    rep.delays[n].local =
        local_delay(a.offload[n], srv.eta_compressed, s.local_backlog_bits[n], task, dev.cpu_hz);
    const double rate = tx_rate(cfg.radio, cfg.channel.gain_db[s.channel[n]]);
    rep.delays[n].offload = offload_delay(a.offload[n], task, rate);
    const auto q = update_local_queue(s.local_backlog_bits[n], a.offload[n], task, dev.cpu_hz,
                                      srv.eta_compressed, cfg.slot_seconds,
                                      dev.local_queue_cap_bits);
    out.next_local_backlog[n] = q.backlog;
    rep.local_overflow[n] = q.overflow;
    rep.local_overflow_events += q.overflow > 0;
  }

  std::vector<double> threshold(n_srv);
  for (std::size_t m = 0; m < n_srv; ++m) {
    const auto& srv = cfg.services[m];
    const auto members = cfg.members(m);
    std::vector<int> off, samp;
    std::vector<double> task;
    double offered = 0;
    for (std::size_t n : members) {
      off.push_back(a.offload[n]);
      samp.push_back(a.sampling[n]);
      task.push_back(out.task_bits[n]);
      if (a.offload[n] == 0) offered += out.task_bits[n];
    }
    const auto edge = edge_delays(off, task, s.edge_backlog_bits[m], a.allocation[m],
                                  cfg.edge_cpu_hz, srv.eta_uncompressed);
    rep.allocation_floored = rep.allocation_floored || edge.floored;
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto& d = rep.delays[members[i]];
      d.processing = edge.delays[i].processing;
      d.queueing = edge.delays[i].queueing;
      d.waiting = edge.delays[i].waiting;
    }
    const auto q = update_edge_queue(s.edge_backlog_bits[m], offered, a.allocation[m],
                                     cfg.edge_cpu_hz, srv.eta_uncompressed, cfg.slot_seconds,
                                     srv.edge_queue_cap_bits);
    out.next_edge_backlog[m] = q.backlog;
    rep.edge_overflow[m] = q.overflow;
    rep.edge_overflow_events += q.overflow > 0;

    rep.accuracy[m] = service_accuracy(cfg.ladder, srv, samp, off);
    threshold[m] = srv.acc_threshold;
    out.next_deficit[m] = lyapunov::update_deficit(s.deficit[m], threshold[m], rep.accuracy[m]);
  }

  rep.total_delay =
      total_delay(rep.delays, rep.local_overflow, rep.edge_overflow, cfg.overflow_penalty);
  rep.reward = cfg.reward == reward_form::exact_drift
                   ? lyapunov::exact_drift_reward(rep.total_delay, s.deficit, out.next_deficit,
                                                  cfg.tradeoff_v)
                   : lyapunov::reward(rep.total_delay, s.deficit, rep.accuracy, threshold,
                                      cfg.tradeoff_v);
  return out;
}

struct env_streams {
  rng_engine channel;
  rng_engine arrivals;

  static env_streams from_seed(std::uint64_t seed) {
    return {make_stream(seed, stream::channel), make_stream(seed, stream::arrivals)};
  }
};

/// Episode start: empty queues and deficits, channels drawn from the
/// stationary distribution, fresh arrivals.
inline network_state reset_state(const scenario_config& cfg, env_streams& rng) {
  network_state s;
  const std::size_t n_dev = cfg.device_count();
  s.local_backlog_bits.assign(n_dev, 0.0);
  s.edge_backlog_bits.assign(cfg.service_count(), 0.0);
  s.deficit.assign(cfg.service_count(), 0.0);
  const auto pi = cfg.channel.stationary();
  s.channel.resize(n_dev);
  for (std::size_t n = 0; n < n_dev; ++n) {
    const double u = uniform01(rng.channel);
    double acc = 0;
    std::size_t pick = pi.size() - 1;
    for (std::size_t j = 0; j < pi.size(); ++j) {
      acc += pi[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    s.channel[n] = pick;
  }
  s.arrival_bits.resize(n_dev);
  for (std::size_t n = 0; n < n_dev; ++n)
    s.arrival_bits[n] =
        sample_arrivals(cfg.devices[n], cfg.services[cfg.devices[n].service], rng.arrivals);
  return s;
}

inline std::pair<step_report, network_state> step(const scenario_config& cfg,
                                                  const network_state& s, const action& a,
                                                  env_streams& rng) {
  validate_action(cfg, a);
  auto out = evaluate_slot(cfg, s, a);
  network_state next;
  next.local_backlog_bits = std::move(out.next_local_backlog);
  next.edge_backlog_bits = std::move(out.next_edge_backlog);
  next.deficit = std::move(out.next_deficit);
  const std::size_t n_dev = cfg.device_count();
  next.channel.resize(n_dev);
  for (std::size_t n = 0; n < n_dev; ++n)
    next.channel[n] = sample_channel(cfg.channel, s.channel[n], rng.channel);
  next.arrival_bits.resize(n_dev);
  for (std::size_t n = 0; n < n_dev; ++n)
    next.arrival_bits[n] =
        sample_arrivals(cfg.devices[n], cfg.services[cfg.devices[n].service], rng.arrivals);
  return {std::move(out.report), std::move(next)};
}

/// Stateful wrapper owning a scenario, its random streams and the current
/// state.
class environment {
 public:
  environment(scenario_config cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), rng_(env_streams::from_seed(seed)) {
    validate(cfg_);
    state_ = reset_state(cfg_, rng_);
  }

  const network_state& reset() {
    state_ = reset_state(cfg_, rng_);
    return state_;
  }

  step_report step(const action& a) {
    auto [report, next] = cinfer::step(cfg_, state_, a, rng_);
    state_ = std::move(next);
    return report;
  }

  const network_state& state() const { return state_; }
  void set_state(network_state s) { state_ = std::move(s); }
  const scenario_config& config() const { return cfg_; }

 private:
  scenario_config cfg_;
  env_streams rng_;
  network_state state_;
};

}  // namespace cinfer

#endif  // CINFER_ENV_HPP
