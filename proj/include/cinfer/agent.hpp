#ifndef CINFER_AGENT_HPP
#define CINFER_AGENT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cinfer/baselines.hpp"
#include "cinfer/config.hpp"
#include "cinfer/env.hpp"
#include "cinfer/mlp.hpp"
#include "cinfer/rng.hpp"

namespace cinfer {

class training_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t feature_width(const scenario_config& cfg) {
  const std::size_t n = cfg.device_count(), m = cfg.service_count();
  return 2 * n + 2 * m + n * cfg.channel.size();
}

/// Learner input: normalized backlogs, one-hot channels, normalized arrivals
/// and raw deficit backlogs, in that order.
inline std::vector<double> encode_state(const network_state& s, const scenario_config& cfg) {
  std::vector<double> f;
  f.reserve(feature_width(cfg));
  for (std::size_t n = 0; n < cfg.device_count(); ++n)
    f.push_back(s.local_backlog_bits[n] / cfg.devices[n].local_queue_cap_bits);
  for (std::size_t m = 0; m < cfg.service_count(); ++m)
    f.push_back(s.edge_backlog_bits[m] / cfg.services[m].edge_queue_cap_bits);
  for (std::size_t n = 0; n < cfg.device_count(); ++n)
    for (std::size_t h = 0; h < cfg.channel.size(); ++h) f.push_back(s.channel[n] == h ? 1.0 : 0.0);
  for (std::size_t n = 0; n < cfg.device_count(); ++n) {
    const auto& d = cfg.devices[n];
    const double peak = cfg.services[d.service].raw_task_bits * (d.mean_arrival_rate + 0.5);
    f.push_back(peak > 0 ? s.arrival_bits[n] / peak : 0.0);
  }
  for (std::size_t m = 0; m < cfg.service_count(); ++m) f.push_back(s.deficit[m]);
  return f;
}

inline std::size_t action_width(const scenario_config& cfg) { return 2 * cfg.device_count(); }

/// Maps u in [-1, 1] onto levels 1..K; both ends saturate.
inline int sampling_level(double u, int levels) {
  const int k = static_cast<int>(std::ceil((u + 1.0) / 2.0 * levels));
  return std::clamp(k, 1, levels);
}

/// Strictly positive u runs locally; zero and below offload.
inline int offload_bit(double u) { return u > 0.0 ? 1 : 0; }

/// Continuous actor output (first half sampling, second half offload) to a
/// feasible joint action; the edge split comes from `rule`.
inline action decode_action(std::span<const double> u, const scenario_config& cfg,
                            const network_state& s, allocation_rule rule) {
  const std::size_t n = cfg.device_count();
  if (u.size() != 2 * n) throw std::invalid_argument("decode_action: width mismatch");
  action a;
  a.sampling.resize(n);
  a.offload.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.sampling[i] = sampling_level(u[i], cfg.ladder.size());
    a.offload[i] = offload_bit(u[n + i]);
  }
  allocate(cfg, s, a, rule);
  return a;
}

/// Actor output plus optional N(0, sigma^2) noise, clipped to [-1, 1].
inline std::vector<double> select_action(const nn::mlp& actor, std::span<const double> features,
                                         double sigma, rng_engine& rng, bool explore) {
  nn::matrix x = Eigen::Map<const nn::matrix>(features.data(),
                                              static_cast<Eigen::Index>(features.size()), 1);
  const nn::matrix out = actor.forward(x);
  std::vector<double> u(static_cast<std::size_t>(out.rows()));
  for (std::size_t i = 0; i < u.size(); ++i) {
    double v = out(static_cast<Eigen::Index>(i), 0);
    if (explore) v += gaussian(rng, sigma);
    u[i] = std::clamp(v, -1.0, 1.0);
  }
  return u;
}

struct transition {
  std::vector<double> state;
  std::vector<double> action;  // continuous, before quantization
  double reward = 0;
  std::vector<double> next_state;
};

/// Fixed-capacity FIFO of transitions.
class replay_memory {
 public:
  explicit replay_memory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay_memory: zero capacity");
  }

  void push(transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i = 0 is the oldest stored transition
  const transition& at(std::size_t i) const { return items_.at((head_ + i) % items_.size()); }

  /// Uniform draw of `count` distinct indices.
  std::vector<std::size_t> sample_indices(std::size_t count, rng_engine& rng) const {
    if (count > items_.size()) throw std::invalid_argument("replay_memory: batch exceeds size");
    std::uniform_int_distribution<std::size_t> dist(0, items_.size() - 1);
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      const std::size_t i = dist(rng);
      if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<transition> items_;
};

inline nn::matrix stack_rows(const nn::matrix& top, const nn::matrix& bottom) {
  nn::matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

/// y_i = r_i + gamma * Q'(s'_i, mu'(s'_i))
inline nn::vector td_targets(const nn::mlp& target_actor, const nn::mlp& target_critic,
                             const nn::vector& rewards, const nn::matrix& next_states,
                             double discount) {
  const nn::matrix next_actions = target_actor.forward(next_states);
  const nn::matrix q = target_critic.forward(stack_rows(next_states, next_actions));
  return rewards + discount * q.row(0).transpose();
}

struct critic_loss_result {
  double loss = 0;
  nn::gradients grads;
};

/// Mean squared TD error and its gradient w.r.t. the critic weights.
inline critic_loss_result critic_loss(const nn::mlp& critic, const nn::matrix& states,
                                      const nn::matrix& actions, const nn::vector& targets) {
  nn::mlp::tape tape;
  const nn::matrix q = critic.forward(stack_rows(states, actions), tape);
  const double batch = static_cast<double>(states.cols());
  const nn::matrix err = targets.transpose() - q;
  critic_loss_result out;
  out.loss = err.squaredNorm() / batch;
  if (!std::isfinite(out.loss)) throw training_error("critic loss is not finite");
  out.grads = critic.backward(tape, -2.0 / batch * err);
  return out;
}

/// Gradient of -mean_i Q(s_i, mu(s_i)) w.r.t. the actor weights, i.e. the
/// deterministic policy gradient in descent form.
inline nn::gradients actor_gradient(const nn::mlp& actor, const nn::mlp& critic,
                                    const nn::matrix& states) {
  nn::mlp::tape actor_tape, critic_tape;
  const nn::matrix mu = actor.forward(states, actor_tape);
  critic.forward(stack_rows(states, mu), critic_tape);
  const double batch = static_cast<double>(states.cols());
  nn::matrix grad_in;
  critic.backward(critic_tape, nn::matrix::Constant(1, states.cols(), -1.0 / batch), &grad_in);
  const nn::matrix grad_action = grad_in.bottomRows(mu.rows());
  auto g = actor.backward(actor_tape, grad_action);
  if (!nn::all_finite(g)) throw training_error("actor gradient is not finite");
  return g;
}

struct update_stats {
  bool updated = false;
  double critic_loss = 0;
};

/// Actor-critic learner with replay memory and soft-updated target networks.
/// The edge split is never learned: decode_action fills it from `rule`.
class ddpg_agent {
 public:
  ddpg_agent(const scenario_config& cfg, std::uint64_t seed,
             allocation_rule rule = allocation_rule::optimal)
      : cfg_(cfg.agent),
        rule_(rule),
        memory_(cfg.agent.replay_capacity),
        exploration_(make_stream(seed, stream::exploration)),
        replay_(make_stream(seed, stream::replay)) {
    rng_engine init = make_stream(seed, stream::init);
    const int in = static_cast<int>(feature_width(cfg));
    const int act = static_cast<int>(action_width(cfg));
    std::vector<int> aw{in}, cw{in + act};
    for (int h : cfg_.hidden) {
      aw.push_back(h);
      cw.push_back(h);
    }
    aw.push_back(act);
    cw.push_back(1);
    actor_ = nn::mlp(aw, nn::output_activation::tanh, init, 3e-3);
    critic_ = nn::mlp(cw, nn::output_activation::identity, init);
    target_actor_ = actor_;
    target_critic_ = critic_;
    actor_opt_ = nn::adam(actor_, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
    critic_opt_ = nn::adam(critic_, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
  }

  std::vector<double> act(std::span<const double> features, bool explore) {
    return select_action(actor_, features, cfg_.noise_sigma, exploration_, explore);
  }

  void remember(transition t) { memory_.push(std::move(t)); }

  std::size_t warmup() const { return cfg_.warmup_factor * cfg_.minibatch; }

  /// One minibatch step on critic, actor and targets; skipped during warm-up.
  update_stats update() {
    update_stats st;
    if (memory_.size() < std::max(warmup(), cfg_.minibatch)) return st;
    const auto idx = memory_.sample_indices(cfg_.minibatch, replay_);
    const auto& first = memory_.at(idx[0]);
    const auto batch = static_cast<Eigen::Index>(idx.size());
    nn::matrix s(static_cast<Eigen::Index>(first.state.size()), batch);
    nn::matrix a(static_cast<Eigen::Index>(first.action.size()), batch);
    nn::matrix s2(s.rows(), batch);
    nn::vector r(batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      const auto& t = memory_.at(idx[static_cast<std::size_t>(j)]);
      s.col(j) = Eigen::Map<const nn::vector>(t.state.data(), s.rows());
      a.col(j) = Eigen::Map<const nn::vector>(t.action.data(), a.rows());
      s2.col(j) = Eigen::Map<const nn::vector>(t.next_state.data(), s.rows());
      r(j) = t.reward;
    }
    const nn::vector y = td_targets(target_actor_, target_critic_, r, s2, cfg_.discount);
    auto cl = critic_loss(critic_, s, a, y);
    critic_opt_.step(critic_, cl.grads, cfg_.critic_lr);
    actor_opt_.step(actor_, actor_gradient(actor_, critic_, s), cfg_.actor_lr);
    nn::soft_update(target_critic_, critic_, cfg_.soft_update);
    nn::soft_update(target_actor_, actor_, cfg_.soft_update);
    st.updated = true;
    st.critic_loss = cl.loss;
    return st;
  }

  allocation_rule rule() const { return rule_; }
  const agent_config& config() const { return cfg_; }
  const nn::mlp& actor() const { return actor_; }
  const nn::mlp& critic() const { return critic_; }
  const nn::mlp& target_actor() const { return target_actor_; }
  const nn::mlp& target_critic() const { return target_critic_; }
  const replay_memory& memory() const { return memory_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  agent_config cfg_;
  allocation_rule rule_;
  nn::mlp actor_, critic_, target_actor_, target_critic_;
  nn::adam actor_opt_, critic_opt_;
  replay_memory memory_;
  rng_engine exploration_;
  rng_engine replay_;
};

namespace detail {

inline constexpr const char* checkpoint_magic = "cinfer-checkpoint";
inline constexpr int checkpoint_version = 1;

inline void write_values(std::ostream& out, const std::vector<double>& v) {
  out << v.size();
  for (double x : v) out << ' ' << x;
  out << '\n';
}

inline std::vector<double> read_values(std::istream& in) {
  std::size_t n = 0;
  if (!(in >> n)) throw std::runtime_error("checkpoint: truncated value block");
  std::vector<double> v(n);
  for (double& x : v)
    if (!(in >> x)) throw std::runtime_error("checkpoint: truncated value block");
  return v;
}

inline std::vector<double> flatten(const nn::gradients& g) {
  std::vector<double> out;
  for (const auto& ly : g) {
    out.insert(out.end(), ly.weight.data(), ly.weight.data() + ly.weight.size());
    out.insert(out.end(), ly.bias.data(), ly.bias.data() + ly.bias.size());
  }
  return out;
}

inline void unflatten(nn::gradients& g, const std::vector<double>& v) {
  std::size_t at = 0;
  for (auto& ly : g) {
    if (at + static_cast<std::size_t>(ly.weight.size() + ly.bias.size()) > v.size())
      throw std::runtime_error("checkpoint: optimizer state size mismatch");
    std::copy_n(v.data() + at, ly.weight.size(), ly.weight.data());
    at += static_cast<std::size_t>(ly.weight.size());
    std::copy_n(v.data() + at, ly.bias.size(), ly.bias.data());
    at += static_cast<std::size_t>(ly.bias.size());
  }
  if (at != v.size()) throw std::runtime_error("checkpoint: optimizer state size mismatch");
}

inline void expect(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token)
    throw std::runtime_error("checkpoint: expected '" + token + "', got '" + got + "'");
}

}  // namespace detail

// Text layout, one record per line:
//   cinfer-checkpoint 1
//   net <name> <count> <params...>          (actor, critic, target_actor, target_critic)
//   adam <name> <t> <count> <m...> <count> <v...>
//   rng <name> <engine state>               (exploration, replay)
//   end
// Doubles are printed with 17 significant digits so reloads are exact.
inline void ddpg_agent::save(std::ostream& out) const {
  out << std::setprecision(17);
  out << detail::checkpoint_magic << ' ' << detail::checkpoint_version << '\n';
  const std::pair<const char*, const nn::mlp*> nets[] = {{"actor", &actor_},
                                                         {"critic", &critic_},
                                                         {"target_actor", &target_actor_},
                                                         {"target_critic", &target_critic_}};
  for (const auto& [name, net] : nets) {
    out << "net " << name << ' ';
    detail::write_values(out, net->flatten());
  }
  const std::pair<const char*, const nn::adam*> opts[] = {{"actor", &actor_opt_},
                                                          {"critic", &critic_opt_}};
  for (const auto& [name, opt] : opts) {
    out << "adam " << name << ' ' << opt->t << ' ';
    detail::write_values(out, detail::flatten(opt->m));
    detail::write_values(out, detail::flatten(opt->v));
  }
  out << "rng exploration " << exploration_ << '\n';
  out << "rng replay " << replay_ << '\n';
  out << "end\n";
}

inline void ddpg_agent::load(std::istream& in) {
  detail::expect(in, detail::checkpoint_magic);
  int version = 0;
  if (!(in >> version) || version != detail::checkpoint_version)
    throw std::runtime_error("checkpoint: unsupported version");
  std::pair<const char*, nn::mlp*> nets[] = {{"actor", &actor_},
                                             {"critic", &critic_},
                                             {"target_actor", &target_actor_},
                                             {"target_critic", &target_critic_}};
  for (auto& [name, net] : nets) {
    detail::expect(in, "net");
    detail::expect(in, name);
    const auto v = detail::read_values(in);
    if (v.size() != net->parameter_count())
      throw std::runtime_error(std::string("checkpoint: network '") + name +
                               "' does not match the configured architecture");
    net->unflatten(v);
  }
  std::pair<const char*, nn::adam*> opts[] = {{"actor", &actor_opt_}, {"critic", &critic_opt_}};
  for (auto& [name, opt] : opts) {
    detail::expect(in, "adam");
    detail::expect(in, name);
    if (!(in >> opt->t)) throw std::runtime_error("checkpoint: truncated optimizer state");
    detail::unflatten(opt->m, detail::read_values(in));
    detail::unflatten(opt->v, detail::read_values(in));
  }
  detail::expect(in, "rng");
  detail::expect(in, "exploration");
  in >> exploration_;
  detail::expect(in, "rng");
  detail::expect(in, "replay");
  in >> replay_;
  detail::expect(in, "end");
  if (!in) throw std::runtime_error("checkpoint: read failure");
}

struct episode_metrics {
  double mean_delay = 0;
  double mean_reward = 0;
  std::vector<double> mean_accuracy;
  std::vector<double> final_deficit;
  double mean_critic_loss = 0;
  std::size_t updates = 0;
};

using slot_observer = std::function<void(std::size_t slot, const network_state& before,
                                         const action& act, const step_report& report)>;

/// Runs one training episode: act with exploration noise, store the
/// transition, then one learner update per slot.
inline episode_metrics train_episode(environment& env, ddpg_agent& agent, std::size_t slots,
                                     const slot_observer& observe = {}) {
  const auto& cfg = env.config();
  episode_metrics em;
  em.mean_accuracy.assign(cfg.service_count(), 0.0);
  env.reset();
  auto features = encode_state(env.state(), cfg);
  double loss_sum = 0;
  for (std::size_t t = 0; t < slots; ++t) {
    const auto u = agent.act(features, true);
    const network_state before = env.state();
    const action a = decode_action(u, cfg, before, agent.rule());
    const step_report rep = env.step(a);
    auto next = encode_state(env.state(), cfg);
    agent.remember({features, u, rep.reward, next});
    const auto st = agent.update();
    if (st.updated) {
      loss_sum += st.critic_loss;
      ++em.updates;
    }
    if (observe) observe(t, before, a, rep);
    em.mean_delay += rep.total_delay;
    em.mean_reward += rep.reward;
    for (std::size_t m = 0; m < cfg.service_count(); ++m) em.mean_accuracy[m] += rep.accuracy[m];
    features = std::move(next);
  }
  const double n = static_cast<double>(slots);
  em.mean_delay /= n;
  em.mean_reward /= n;
  for (double& x : em.mean_accuracy) x /= n;
  em.final_deficit = env.state().deficit;
  em.mean_critic_loss = em.updates ? loss_sum / static_cast<double>(em.updates) : 0.0;
  return em;
}

}  // namespace cinfer

#endif  // CINFER_AGENT_HPP
