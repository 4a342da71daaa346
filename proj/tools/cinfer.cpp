// Command-line front end: training, evaluation, baselines and verification.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cinfer/agent.hpp"
#include "cinfer/config.hpp"
#include "cinfer/harness.hpp"
#include "cinfer/verify.hpp"

namespace fs = std::filesystem;
using namespace cinfer;

namespace {

struct common_opts {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = "out";
};

void add_common(CLI::App* cmd, common_opts& o) {
  cmd->add_option("--config", o.config, "Scenario JSON; defaults apply to absent keys");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--out", o.out, "Output directory");
}

scenario_config resolve_config(const common_opts& o) {
  return o.config.empty() ? default_scenario() : load_config(o.config);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

void write_config(const fs::path& dir, const scenario_config& cfg) {
  auto f = open_out(dir / "config.json");
  f << to_json(cfg).dump(2) << '\n';
}

// One configuration per sweep point; an empty sweep yields the base config.
std::vector<scenario_config> sweep_points(const scenario_config& base,
                                          const std::vector<double>& rates,
                                          const std::vector<double>& bandwidths) {
  std::vector<scenario_config> out;
  for (double r : rates) out.push_back(with_arrival_rate(base, r));
  for (double w : bandwidths) out.push_back(with_bandwidth(base, w));
  if (out.empty()) out.push_back(base);
  for (const auto& c : out) validate(c);
  return out;
}

struct eval_request {
  common_opts common;
  std::vector<std::string> policies;
  std::string checkpoint;
  std::size_t episodes = 0;
  std::vector<double> rates, bandwidths;
};

int run_eval(const eval_request& req) {
  const scenario_config base = resolve_config(req.common);
  const auto points = sweep_points(base, req.rates, req.bandwidths);
  const std::size_t episodes = req.episodes ? req.episodes : base.eval_episodes;
  const fs::path dir(req.common.out);
  fs::create_directories(dir);
  write_config(dir, base);

  std::optional<ddpg_agent> agent;
  auto summary = open_out(dir / "summary.csv");
  write_summary_header(summary, base.service_count());
  // per-slot and per-episode files only when there is a single run
  const bool single = points.size() == 1 && req.policies.size() == 1;
  std::ofstream slots, eps;
  metrics_sink sink;
  if (single) {
    slots = open_out(dir / "slots.csv");
    eps = open_out(dir / "episodes.csv");
    sink = {&slots, &eps};
  }
  for (const auto& name : req.policies) {
    const policy_kind policy = parse_policy(name);
    if (is_learned(policy)) {
      if (req.checkpoint.empty())
        throw std::invalid_argument("policy '" + name + "' needs --checkpoint");
      agent.emplace(base, req.common.seed, rule_for(policy));
      std::ifstream in(req.checkpoint, std::ios::binary);
      if (!in) throw std::runtime_error("cannot read " + req.checkpoint);
      agent->load(in);
    }
    for (const auto& cfg : points) {
      const auto res = run_evaluation(cfg, policy, agent ? &*agent : nullptr, req.common.seed,
                                      episodes, sink);
      write_summary_row(summary, res.summary);
      std::printf("%-14s lambda=%-5g W=%-9g delay=%.6f\n", name.c_str(), res.summary.arrival_rate,
                  res.summary.bandwidth_hz, res.summary.mean_delay);
    }
  }
  return 0;
}

int print_report(const std::vector<verify::check_result>& checks) {
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%s %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative inference offloading simulator and learner"};
  app.require_subcommand(1);

  common_opts train_opts;
  std::string train_policy = "proposed";
  std::size_t train_episodes = 0;
  auto* train = app.add_subcommand("train", "Train a learned policy");
  add_common(train, train_opts);
  train->add_option("--policy", train_policy, "proposed | proposed-fixed");
  train->add_option("--episodes", train_episodes, "Override the training episode count");

  eval_request eval_req;
  eval_req.policies = {"proposed"};
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate policies without exploration");
  add_common(evaluate, eval_req.common);
  evaluate->add_option("--policy", eval_req.policies, "Policy names, comma separated")
      ->delimiter(',');
  evaluate->add_option("--checkpoint", eval_req.checkpoint, "Checkpoint for learned policies");
  evaluate->add_option("--episodes", eval_req.episodes, "Evaluation episodes");
  evaluate->add_option("--arrival-rates", eval_req.rates, "Sweep of mean arrival rates")
      ->delimiter(',');
  evaluate->add_option("--bandwidths", eval_req.bandwidths, "Sweep of system bandwidths in Hz")
      ->delimiter(',');

  eval_request base_req;
  base_req.policies = {"static"};
  auto* baseline = app.add_subcommand("baseline", "Evaluate the myopic or static baseline");
  add_common(baseline, base_req.common);
  baseline->add_option("--policy", base_req.policies, "myopic | static, comma separated")
      ->delimiter(',');
  baseline->add_option("--episodes", base_req.episodes, "Evaluation episodes");
  baseline->add_option("--arrival-rates", base_req.rates, "Sweep of mean arrival rates")
      ->delimiter(',');
  baseline->add_option("--bandwidths", base_req.bandwidths, "Sweep of system bandwidths in Hz")
      ->delimiter(',');

  std::uint64_t valloc_seed = 1;
  std::size_t valloc_instances = 1000;
  auto* valloc = app.add_subcommand("verify-allocator", "Closed form vs oracle sweep");
  valloc->add_option("--seed", valloc_seed, "Master seed");
  valloc->add_option("--instances", valloc_instances, "Random instances");

  common_opts verify_opts;
  auto* verify_cmd = app.add_subcommand("verify", "Run every property suite");
  verify_cmd->add_option("--config", verify_opts.config, "Scenario JSON");
  verify_cmd->add_option("--seed", verify_opts.seed, "Master seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      scenario_config cfg = resolve_config(train_opts);
      if (train_episodes) cfg.episodes = train_episodes;
      const policy_kind policy = parse_policy(train_policy);
      const fs::path dir(train_opts.out);
      fs::create_directories(dir);
      write_config(dir, cfg);
      auto slots = open_out(dir / "slots.csv");
      auto eps = open_out(dir / "episodes.csv");
      const auto res = run_training(cfg, train_opts.seed, policy, {&slots, &eps});
      auto summary = open_out(dir / "summary.csv");
      write_summary_header(summary, cfg.service_count());
      write_summary_row(summary, res.result.summary);
      auto ckpt = open_out(dir / "checkpoint.txt");
      res.agent.save(ckpt);
      std::printf("trained %zu episodes, mean delay %.6f\n", cfg.episodes,
                  res.result.summary.mean_delay);
      return 0;
    }
    if (evaluate->parsed()) return run_eval(eval_req);
    if (baseline->parsed()) {
      for (const auto& p : base_req.policies)
        if (is_learned(parse_policy(p)))
          throw std::invalid_argument("baseline: '" + p + "' is learned; use evaluate");
      return run_eval(base_req);
    }
    if (valloc->parsed())
      return print_report(
          verify::check_allocator(verify::closed_form_allocation(), valloc_seed, valloc_instances));
    if (verify_cmd->parsed())
      return print_report(verify::run_all(resolve_config(verify_opts), verify_opts.seed).checks);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
