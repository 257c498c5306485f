// SPDX-License-Identifier: Apache-2.0
// Value-based learner over salient-patch states: epsilon-greedy acting,
// double-Q n-step targets with prioritized replay, training and evaluation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "spirl/agent/network.hpp"
#include "spirl/agent/replay.hpp"
#include "spirl/env/env.hpp"
#include "spirl/mae/model.hpp"
#include "spirl/tensor/optim.hpp"

namespace spirl::agent {

struct AgentConfig {
  // Salient-patch pipeline.
  saliency::KneeRule knee_rule = saliency::KneeRule::mean_threshold;
  int mr_percent = 20;    // slot budget as a percentage of P*P
  std::size_t fixed_k = 0;  // > 0 replaces dynamic-K with top-K

  AggregatorConfig agg;
  QConfig q;

  double gamma = 0.99;
  std::size_t n_step = 20;
  double lr = 1e-4;
  double adam_eps = 1.5e-4;
  std::size_t batch = 32;
  std::size_t min_replay = 1600;  // env steps before updates start
  std::size_t steps_per_update = 1;
  std::size_t target_sync = 2000;  // updates
  double grad_clip = 10.0;
  ReplayConfig replay;
  double beta_start = 0.4;
  std::size_t beta_steps = 100000;
  double eps_start = 1.0;
  double eps_end = 0.01;
  double eps_fraction = 0.2;  // of total_steps
  double eval_epsilon = 0.001;
  std::size_t total_steps = 100000;  // agent (env) steps
  std::size_t checkpoint_every = 0;  // env steps; 0 = final only
  std::uint64_t seed = 0;

  // "100K": buffer 100K, one update per step; "400K": buffer 400K, one
  // update every 4 steps. Both give 100K updates over the run.
  static AgentConfig regime(const std::string& name);
  void validate() const;
  double epsilon(std::size_t step) const;
  double beta(std::size_t step) const;
  // Canonical key=value text; its FNV-1a digest identifies checkpoints.
  std::string describe() const;
  std::uint64_t hash() const;
};

// Frame -> salient set through the frozen MAE.
class Observer {
 public:
  Observer(const mae::MAEParams<float>& mae, const AgentConfig& config);

  SalientSet observe(const Frame& frame, std::size_t* selected = nullptr) const;
  std::size_t budget() const { return budget_; }
  const mae::MAEParams<float>& mae() const { return mae_; }

 private:
  const mae::MAEParams<float>& mae_;
  saliency::KneeRule rule_;
  std::size_t fixed_k_;
  std::size_t budget_;
  saliency::PadMode pad_;
};

class Agent {
 public:
  Agent(const AgentConfig& config, std::size_t action_count);

  const AgentConfig& config() const { return config_; }
  std::vector<double> q(const State& state) const;
  // With probability eps a uniform action, else argmax Q (lowest index on ties).
  std::size_t act(const State& state, double eps, Rng& rng) const;
  // One prioritized double-Q update; returns the loss.
  double update(PrioritizedReplay& replay, double beta, Rng& rng);
  void sync_target() { target_.copy_values_from(online_); }

  const Network<float>& online() const { return online_; }
  const Network<float>& target() const { return target_; }
  Network<float>& online() { return online_; }
  std::uint64_t updates() const { return updates_; }

  void save(const std::filesystem::path& dir, std::size_t step) const;
  static Agent load(const std::filesystem::path& dir, const AgentConfig& config, std::size_t action_count);

 private:
  AgentConfig config_;
  Network<float> online_;
  Network<float> target_;
  ad::AdamW<float> optim_;
  std::uint64_t updates_ = 0;
};

// Greedy selection for a hand-given Q row (exposed for tests).
std::size_t greedy_action(std::span<const double> q);

struct EpisodeLog {
  std::size_t step = 0;  // env steps at episode end
  std::size_t episode = 0;
  double ret = 0.0;
  double loss = 0.0;  // mean over the episode's updates, NaN if none
  double epsilon = 0.0;
  double beta = 0.0;
  double k_mean = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpisodeLog& row);

struct TrainOptions {
  std::filesystem::path out_dir;  // log.csv and checkpoints when set
  std::function<void(const EpisodeLog&)> on_episode;
};

struct TrainResult {
  std::vector<EpisodeLog> episodes;
  std::vector<std::size_t> actions;
  std::vector<double> losses;
  std::size_t replay_size = 0;
};

TrainResult train(env::EnvInterface& env, const Observer& observer, Agent& agent,
                  const TrainOptions& options = {});

struct EvalStats {
  std::vector<double> returns;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
};

EvalStats summarize(std::vector<double> returns);

// Episode i uses reset seed splitmix64(base_seed + i).
EvalStats evaluate(env::EnvInterface& env, const Observer& observer, const Agent& agent,
                   std::size_t episodes = 50, std::uint64_t base_seed = 1000003, double eps = -1.0);
EvalStats evaluate_random(env::EnvInterface& env, std::size_t episodes = 50, std::uint64_t base_seed = 1000003);

// Smallest set of slots whose weights, taken in descending order, reach
// mass * total. Returns slot indices in that order.
std::vector<std::size_t> attended_prefix(std::span<const double> weights, double mass = 0.6);

// Slots of one set holding at least `mass` of the [cls] attention.
// Requires cls pooling.
std::vector<std::size_t> policy_attention(const Network<float>& net, const SalientSet& set, double mass = 0.6);

}  // namespace spirl::agent
