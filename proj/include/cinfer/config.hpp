#ifndef CINFER_CONFIG_HPP
#define CINFER_CONFIG_HPP

#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cinfer {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One inference service: a task family served by a compressed DNN on the
/// devices and an uncompressed DNN at the access point.
struct service_spec {
  std::string name;
  double raw_task_bits = 0;        // bits per task at the raw sampling rate
  double eta_compressed = 0;       // CPU cycles per bit, on-device model
  double eta_uncompressed = 0;     // CPU cycles per bit, edge model
  double acc_compressed = 0;
  double acc_uncompressed = 0;
  double acc_threshold = 0;        // long-term accuracy requirement
  double edge_queue_cap_bits = 0;
};

struct device_spec {
  std::size_t service = 0;
  double cpu_hz = 0;
  double mean_arrival_rate = 0;    // requests per slot
  double local_queue_cap_bits = 0;
};

/// Finite-state Markov channel; row i of `transition` is the next-state
/// distribution out of state i.
struct channel_model {
  std::vector<std::string> states;
  std::vector<std::vector<double>> transition;
  std::vector<double> gain_db;

  std::size_t size() const { return states.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i] == name) return i;
    throw config_error("channel: unknown state '" + name + "'");
  }

  // Power iteration; the chain is assumed ergodic (validated at load).
  std::vector<double> stationary() const {
    const std::size_t n = size();
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    for (int it = 0; it < 100000; ++it) {
      std::fill(next.begin(), next.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) next[j] += pi[i] * transition[i][j];
      double diff = 0;
      for (std::size_t j = 0; j < n; ++j) diff += std::abs(next[j] - pi[j]);
      pi.swap(next);
      if (diff < 1e-15) break;
    }
    return pi;
  }
};

struct radio_config {
  double bandwidth_hz = 0;
  std::size_t device_share_count = 0;  // bandwidth divisor N
  double tx_power_dbm = 0;
  double noise_figure_db = 0;
  double noise_density_dbm_hz = 0;
};

/// Accuracy g(theta_k) of each sampling level, k = 1..K, with
/// theta_k = k / K of the raw rate.
struct sampling_ladder {
  std::vector<double> levels;

  int size() const { return static_cast<int>(levels.size()); }
  double accuracy(int k) const { return levels.at(static_cast<std::size_t>(k - 1)); }
  double fraction(int k) const { return static_cast<double>(k) / size(); }
};

struct agent_config {
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double discount = 0.85;
  double soft_update = 0.005;
  double noise_sigma = 0.2;
  std::size_t minibatch = 64;
  std::size_t replay_capacity = 100000;
  std::vector<int> hidden{64, 32};
  std::size_t warmup_factor = 10;  // updates start once memory holds warmup_factor * minibatch
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// Per-slot learning signal. `drift_plus_cost` is -V D - sum_m Z_m (A_th - A_m);
/// `exact_drift` replaces the deficit term with the realized change of
/// Z_m^2 / 2, which keeps the square term the bound drops.
enum class reward_form { drift_plus_cost, exact_drift };

struct scenario_config {
  std::vector<service_spec> services;
  std::vector<device_spec> devices;
  channel_model channel;
  radio_config radio;
  sampling_ladder ladder;
  double edge_cpu_hz = 0;
  double slot_seconds = 1;
  double overflow_penalty = 1;
  double tradeoff_v = 0.05;
  std::size_t episodes = 1000;
  std::size_t slots_per_episode = 200;
  std::size_t eval_episodes = 50;
  bool myopic_includes_deficit = true;
  reward_form reward = reward_form::drift_plus_cost;
  agent_config agent;

  std::size_t device_count() const { return devices.size(); }
  std::size_t service_count() const { return services.size(); }

  std::vector<std::size_t> members(std::size_t service) const {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < devices.size(); ++n)
      if (devices[n].service == service) out.push_back(n);
    return out;
  }

  /// Lowest reachable service accuracy: every device at the lowest sampling
  /// level running the compressed model.
  double min_accuracy(std::size_t service) const {
    return ladder.accuracy(1) * services[service].acc_compressed;
  }
};

namespace detail {

inline service_spec type_one_service() {
  return {"type-1", 768000.0, 80.0, 200.0, 0.8, 1.0, 0.8, 19.2e6};
}

inline service_spec type_two_service() {
  return {"type-2", 512000.0, 160.0, 400.0, 0.8, 1.0, 0.9, 19.2e6};
}

inline service_spec default_service(std::size_t index) {
  return index == 1 ? type_two_service() : type_one_service();
}

inline device_spec default_device(std::size_t service) {
  return {service, 1e8, 0.8, 3.84e6};
}

}  // namespace detail

/// Scenario of the reference factory cell: five devices per service, two
/// services, 20 MHz shared uplink, 2 GHz edge server.
inline scenario_config default_scenario() {
  scenario_config cfg;
  cfg.services = {detail::type_one_service(), detail::type_two_service()};
  for (std::size_t m = 0; m < 2; ++m)
    for (int i = 0; i < 5; ++i) cfg.devices.push_back(detail::default_device(m));
  cfg.channel.states = {"good", "normal", "bad"};
  cfg.channel.transition = {{0.3, 0.7, 0.0}, {0.25, 0.5, 0.25}, {0.0, 0.7, 0.3}};
  cfg.channel.gain_db = {-95.0, -105.0, -115.0};
  cfg.radio = {20e6, cfg.devices.size(), 20.0, 5.0, -174.0};
  cfg.ladder.levels = {0.59, 0.884, 0.950, 0.987};
  cfg.edge_cpu_hz = 2e9;
  return cfg;
}

inline void validate(const scenario_config& cfg) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw config_error(what);
  };
  auto finite_pos = [](double x) { return std::isfinite(x) && x > 0; };

  require(!cfg.services.empty(), "services: at least one service is required");
  require(!cfg.devices.empty(), "devices: at least one device is required");
  for (std::size_t n = 0; n < cfg.devices.size(); ++n) {
    const auto& d = cfg.devices[n];
    const std::string at = "devices[" + std::to_string(n) + "].";
    require(d.service < cfg.services.size(), at + "service index out of range");
    require(finite_pos(d.cpu_hz), at + "cpu_hz must be > 0");
    // -0.5 is the rate whose U(rate - 0.5, rate + 0.5) draw clamps to zero
    require(std::isfinite(d.mean_arrival_rate) && d.mean_arrival_rate >= -0.5,
            at + "mean_arrival_rate must be >= -0.5");
    require(finite_pos(d.local_queue_cap_bits), at + "local_queue_cap_bits must be > 0");
  }

  for (std::size_t m = 0; m < cfg.services.size(); ++m) {
    const auto& s = cfg.services[m];
    const std::string at = "services[" + std::to_string(m) + "].";
    require(finite_pos(s.raw_task_bits), at + "raw_task_bits must be > 0");
    require(finite_pos(s.eta_compressed), at + "eta_compressed must be > 0");
    require(finite_pos(s.eta_uncompressed), at + "eta_uncompressed must be > 0");
    require(s.eta_uncompressed > s.eta_compressed,
            at + "eta_uncompressed must exceed eta_compressed");
    require(s.acc_compressed > 0 && s.acc_compressed <= 1,
            at + "acc_compressed must lie in (0, 1]");
    require(s.acc_uncompressed > 0 && s.acc_uncompressed <= 1,
            at + "acc_uncompressed must lie in (0, 1]");
    require(s.acc_compressed < s.acc_uncompressed,
            at + "acc_compressed must be below acc_uncompressed");
    require(s.acc_threshold > 0 && s.acc_threshold <= 1,
            at + "acc_threshold must lie in (0, 1]");
    require(finite_pos(s.edge_queue_cap_bits), at + "edge_queue_cap_bits must be > 0");
    require(!cfg.members(m).empty(), at + "service has no devices");
  }

  const auto& ch = cfg.channel;
  require(ch.size() > 0, "channel.states must be non-empty");
  require(ch.transition.size() == ch.size(), "channel.transition must be square over states");
  require(ch.gain_db.size() == ch.size(), "channel.gain_db must have one entry per state");
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const auto& row = ch.transition[i];
    require(row.size() == ch.size(), "channel.transition must be square over states");
    double sum = 0;
    for (double p : row) {
      require(std::isfinite(p) && p >= 0,
              "channel.transition[" + std::to_string(i) + "] has a negative entry");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-12,
            "channel.transition[" + std::to_string(i) + "] must sum to 1");
    require(std::isfinite(ch.gain_db[i]), "channel.gain_db must be finite");
  }

  require(finite_pos(cfg.radio.bandwidth_hz), "radio.bandwidth_hz must be > 0");
  require(cfg.radio.device_share_count >= 1, "radio.device_share_count must be >= 1");
  require(std::isfinite(cfg.radio.tx_power_dbm), "radio.tx_power_dbm must be finite");
  require(std::isfinite(cfg.radio.noise_figure_db), "radio.noise_figure_db must be finite");
  require(std::isfinite(cfg.radio.noise_density_dbm_hz),
          "radio.noise_density_dbm_hz must be finite");

  require(cfg.ladder.size() >= 1, "sampling_accuracy must be non-empty");
  for (int k = 1; k <= cfg.ladder.size(); ++k) {
    double g = cfg.ladder.accuracy(k);
    require(g >= 0 && g <= 1, "sampling_accuracy values must lie in [0, 1]");
    if (k > 1)
      require(g > cfg.ladder.accuracy(k - 1), "sampling_accuracy must be strictly increasing");
  }

  require(finite_pos(cfg.edge_cpu_hz), "edge_cpu_hz must be > 0");
  require(finite_pos(cfg.slot_seconds), "slot_seconds must be > 0");
  require(std::isfinite(cfg.overflow_penalty) && cfg.overflow_penalty > 0,
          "overflow_penalty must be > 0");
  require(finite_pos(cfg.tradeoff_v), "tradeoff_v must be > 0");
  require(cfg.slots_per_episode >= 1, "training.slots_per_episode must be >= 1");

  const auto& a = cfg.agent;
  require(a.discount > 0 && a.discount < 1, "agent.discount must lie in (0, 1)");
  require(a.soft_update > 0 && a.soft_update < 1, "agent.soft_update must lie in (0, 1)");
  require(a.minibatch >= 1, "agent.minibatch must be >= 1");
  require(a.replay_capacity >= a.minibatch, "agent.replay_capacity must be >= minibatch");
  require(a.noise_sigma >= 0, "agent.noise_sigma must be >= 0");
  require(a.actor_lr >= 0 && a.critic_lr >= 0, "agent learning rates must be >= 0");
  require(!a.hidden.empty(), "agent.hidden must list at least one layer");
  for (int h : a.hidden) require(h > 0, "agent.hidden widths must be > 0");
}

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw config_error(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) throw config_error(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(where + key + ": " + e.what());
  }
}

}  // namespace detail

/// Overlays the keys present in `doc` onto the default scenario and validates
/// the result.
inline scenario_config parse_config(const nlohmann::json& doc) {
  using detail::read;
  scenario_config cfg = default_scenario();
  detail::check_keys(doc, "config",
                     {"services", "device", "devices", "channel", "radio",
                      "sampling_accuracy", "edge_cpu_hz", "slot_seconds",
                      "overflow_penalty", "tradeoff_v", "training", "evaluation",
                      "agent", "myopic_includes_deficit", "reward"});

  device_spec device_defaults = detail::default_device(0);
  if (doc.contains("device")) {
    const auto& d = doc["device"];
    detail::check_keys(d, "device", {"cpu_hz", "mean_arrival_rate", "local_queue_cap_bits"});
    read(d, "cpu_hz", device_defaults.cpu_hz, "device.");
    read(d, "mean_arrival_rate", device_defaults.mean_arrival_rate, "device.");
    read(d, "local_queue_cap_bits", device_defaults.local_queue_cap_bits, "device.");
  }

  std::vector<std::size_t> per_service(cfg.services.size(), 5);
  if (doc.contains("services")) {
    const auto& list = doc["services"];
    if (!list.is_array() || list.empty())
      throw config_error("services: expected a non-empty array");
    cfg.services.clear();
    per_service.clear();
    for (std::size_t m = 0; m < list.size(); ++m) {
      const auto& s = list[m];
      const std::string at = "services[" + std::to_string(m) + "].";
      detail::check_keys(s, at.substr(0, at.size() - 1),
                         {"name", "raw_task_bits", "eta_compressed", "eta_uncompressed",
                          "acc_compressed", "acc_uncompressed", "acc_threshold",
                          "edge_queue_cap_bits", "devices"});
      service_spec spec = detail::default_service(m);
      read(s, "name", spec.name, at);
      read(s, "raw_task_bits", spec.raw_task_bits, at);
      read(s, "eta_compressed", spec.eta_compressed, at);
      read(s, "eta_uncompressed", spec.eta_uncompressed, at);
      read(s, "acc_compressed", spec.acc_compressed, at);
      read(s, "acc_uncompressed", spec.acc_uncompressed, at);
      read(s, "acc_threshold", spec.acc_threshold, at);
      read(s, "edge_queue_cap_bits", spec.edge_queue_cap_bits, at);
      std::size_t count = 5;
      read(s, "devices", count, at);
      cfg.services.push_back(spec);
      per_service.push_back(count);
    }
  }

  cfg.devices.clear();
  if (doc.contains("devices")) {
    const auto& list = doc["devices"];
    if (!list.is_array()) throw config_error("devices: expected an array");
    for (std::size_t n = 0; n < list.size(); ++n) {
      const auto& d = list[n];
      const std::string at = "devices[" + std::to_string(n) + "].";
      detail::check_keys(d, at.substr(0, at.size() - 1),
                         {"service", "cpu_hz", "mean_arrival_rate", "local_queue_cap_bits"});
      device_spec dev = device_defaults;
      if (!d.contains("service")) throw config_error(at + "service is required");
      read(d, "service", dev.service, at);
      read(d, "cpu_hz", dev.cpu_hz, at);
      read(d, "mean_arrival_rate", dev.mean_arrival_rate, at);
      read(d, "local_queue_cap_bits", dev.local_queue_cap_bits, at);
      cfg.devices.push_back(dev);
    }
  } else {
    for (std::size_t m = 0; m < per_service.size(); ++m)
      for (std::size_t i = 0; i < per_service[m]; ++i) {
        device_spec dev = device_defaults;
        dev.service = m;
        cfg.devices.push_back(dev);
      }
  }

  if (doc.contains("channel")) {
    const auto& c = doc["channel"];
    detail::check_keys(c, "channel", {"states", "transition", "gain_db"});
    read(c, "states", cfg.channel.states, "channel.");
    read(c, "transition", cfg.channel.transition, "channel.");
    read(c, "gain_db", cfg.channel.gain_db, "channel.");
  }

  cfg.radio.device_share_count = 0;
  if (doc.contains("radio")) {
    const auto& r = doc["radio"];
    detail::check_keys(r, "radio", {"bandwidth_hz", "device_share_count", "tx_power_dbm",
                                    "noise_figure_db", "noise_density_dbm_hz"});
    read(r, "bandwidth_hz", cfg.radio.bandwidth_hz, "radio.");
    read(r, "device_share_count", cfg.radio.device_share_count, "radio.");
    read(r, "tx_power_dbm", cfg.radio.tx_power_dbm, "radio.");
    read(r, "noise_figure_db", cfg.radio.noise_figure_db, "radio.");
    read(r, "noise_density_dbm_hz", cfg.radio.noise_density_dbm_hz, "radio.");
  }
  if (cfg.radio.device_share_count == 0) cfg.radio.device_share_count = cfg.devices.size();

  read(doc, "sampling_accuracy", cfg.ladder.levels, "");
  read(doc, "edge_cpu_hz", cfg.edge_cpu_hz, "");
  read(doc, "slot_seconds", cfg.slot_seconds, "");
  read(doc, "overflow_penalty", cfg.overflow_penalty, "");
  read(doc, "tradeoff_v", cfg.tradeoff_v, "");
  read(doc, "myopic_includes_deficit", cfg.myopic_includes_deficit, "");
  if (doc.contains("reward")) {
    std::string form;
    read(doc, "reward", form, "");
    if (form == "drift-plus-cost")
      cfg.reward = reward_form::drift_plus_cost;
    else if (form == "exact-drift")
      cfg.reward = reward_form::exact_drift;
    else
      throw config_error("reward: expected 'drift-plus-cost' or 'exact-drift'");
  }

  if (doc.contains("training")) {
    const auto& t = doc["training"];
    detail::check_keys(t, "training", {"episodes", "slots_per_episode"});
    read(t, "episodes", cfg.episodes, "training.");
    read(t, "slots_per_episode", cfg.slots_per_episode, "training.");
  }
  if (doc.contains("evaluation")) {
    const auto& e = doc["evaluation"];
    detail::check_keys(e, "evaluation", {"episodes"});
    read(e, "episodes", cfg.eval_episodes, "evaluation.");
  }
  if (doc.contains("agent")) {
    const auto& a = doc["agent"];
    detail::check_keys(a, "agent", {"actor_lr", "critic_lr", "discount", "soft_update",
                                    "noise_sigma", "minibatch", "replay_capacity", "hidden",
                                    "warmup_factor"});
    read(a, "actor_lr", cfg.agent.actor_lr, "agent.");
    read(a, "critic_lr", cfg.agent.critic_lr, "agent.");
    read(a, "discount", cfg.agent.discount, "agent.");
    read(a, "soft_update", cfg.agent.soft_update, "agent.");
    read(a, "noise_sigma", cfg.agent.noise_sigma, "agent.");
    read(a, "minibatch", cfg.agent.minibatch, "agent.");
    read(a, "replay_capacity", cfg.agent.replay_capacity, "agent.");
    read(a, "hidden", cfg.agent.hidden, "agent.");
    read(a, "warmup_factor", cfg.agent.warmup_factor, "agent.");
  }

  validate(cfg);
  return cfg;
}

inline scenario_config parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  return parse_config(doc);
}

inline scenario_config parse_config(const char* text) { return parse_config(std::string(text)); }

inline scenario_config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Fully resolved scenario, suitable for reloading with parse_config.
inline nlohmann::json to_json(const scenario_config& cfg) {
  nlohmann::json doc;
  doc["services"] = nlohmann::json::array();
  for (const auto& s : cfg.services)
    doc["services"].push_back({{"name", s.name},
                               {"raw_task_bits", s.raw_task_bits},
                               {"eta_compressed", s.eta_compressed},
                               {"eta_uncompressed", s.eta_uncompressed},
                               {"acc_compressed", s.acc_compressed},
                               {"acc_uncompressed", s.acc_uncompressed},
                               {"acc_threshold", s.acc_threshold},
                               {"edge_queue_cap_bits", s.edge_queue_cap_bits}});
  doc["devices"] = nlohmann::json::array();
  for (const auto& d : cfg.devices)
    doc["devices"].push_back({{"service", d.service},
                              {"cpu_hz", d.cpu_hz},
                              {"mean_arrival_rate", d.mean_arrival_rate},
                              {"local_queue_cap_bits", d.local_queue_cap_bits}});
  doc["channel"] = {{"states", cfg.channel.states},
                    {"transition", cfg.channel.transition},
                    {"gain_db", cfg.channel.gain_db}};
  doc["radio"] = {{"bandwidth_hz", cfg.radio.bandwidth_hz},
                  {"device_share_count", cfg.radio.device_share_count},
                  {"tx_power_dbm", cfg.radio.tx_power_dbm},
                  {"noise_figure_db", cfg.radio.noise_figure_db},
                  {"noise_density_dbm_hz", cfg.radio.noise_density_dbm_hz}};
  doc["sampling_accuracy"] = cfg.ladder.levels;
  doc["edge_cpu_hz"] = cfg.edge_cpu_hz;
  doc["slot_seconds"] = cfg.slot_seconds;
  doc["overflow_penalty"] = cfg.overflow_penalty;
  doc["tradeoff_v"] = cfg.tradeoff_v;
  doc["myopic_includes_deficit"] = cfg.myopic_includes_deficit;
  doc["reward"] = cfg.reward == reward_form::exact_drift ? "exact-drift" : "drift-plus-cost";
  doc["training"] = {{"episodes", cfg.episodes}, {"slots_per_episode", cfg.slots_per_episode}};
  doc["evaluation"] = {{"episodes", cfg.eval_episodes}};
  doc["agent"] = {{"actor_lr", cfg.agent.actor_lr},
                  {"critic_lr", cfg.agent.critic_lr},
                  {"discount", cfg.agent.discount},
                  {"soft_update", cfg.agent.soft_update},
                  {"noise_sigma", cfg.agent.noise_sigma},
                  {"minibatch", cfg.agent.minibatch},
                  {"replay_capacity", cfg.agent.replay_capacity},
                  {"hidden", cfg.agent.hidden},
                  {"warmup_factor", cfg.agent.warmup_factor}};
  return doc;
}

// Sweep helpers: copies of a scenario with one knob changed.
inline scenario_config with_arrival_rate(scenario_config cfg, double rate) {
  for (auto& d : cfg.devices) d.mean_arrival_rate = rate;
  validate(cfg);
  return cfg;
}

inline scenario_config with_bandwidth(scenario_config cfg, double hz) {
  cfg.radio.bandwidth_hz = hz;
  validate(cfg);
  return cfg;
}

}  // namespace cinfer

#endif  // CINFER_CONFIG_HPP
