// SPDX-License-Identifier: Apache-2.0
// Prioritized replay over n-step transitions and the double-Q target.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <vector>

#include "spirl/agent/network.hpp"
#include "spirl/common/rng.hpp"

namespace spirl::agent {

// Complete binary tree of partial sums over `capacity` leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return tree_[base_ + leaf]; }
  double total() const { return tree_[1]; }
  // Leaf whose cumulative range contains mass in [0, total()).
  std::size_t find(double mass) const;
  // Largest |node - (left + right)| over internal nodes.
  double max_invariant_error() const;

 private:
  std::size_t capacity_;
  std::size_t base_;  // first leaf index (power of two)
  std::vector<double> tree_;
};

using SetPtr = std::shared_ptr<const SalientSet>;
using State = std::array<SetPtr, kStackedFrames>;

struct Transition {
  State state;
  std::size_t action = 0;
  double reward = 0.0;  // discounted n-step return, each raw reward clipped
  std::size_t steps = 0;  // rewards summed (<= n)
  bool terminal = false;  // bootstrap dropped
  State next;
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  double alpha = 0.5;
  double priority_eps = 1e-6;
};

struct ReplaySample {
  std::vector<std::size_t> indices;
  std::vector<double> weights;  // normalized by the batch max
  std::vector<double> probabilities;
};

class PrioritizedReplay {
 public:
  explicit PrioritizedReplay(ReplayConfig config);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return config_.capacity; }
  const ReplayConfig& config() const { return config_; }
  const SumTree& tree() const { return tree_; }
  double max_priority() const { return max_priority_; }

  // New transitions enter with the largest priority seen so far.
  std::size_t push(Transition t);
  // Stratified proportional sampling: one draw per equal-mass segment.
  ReplaySample sample(std::size_t batch, double beta, Rng& rng) const;
  void update(std::span<const std::size_t> indices, std::span<const double> priorities);
  const Transition& at(std::size_t index) const { return items_[index]; }

 private:
  ReplayConfig config_;
  SumTree tree_;
  std::vector<Transition> items_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  double max_priority_ = 1.0;
};

// sum_{m<k} gamma^m r_m for the k rewards given.
double discounted_return(std::span<const double> rewards, double gamma);

// n-step target; the bootstrap term gamma^k * bootstrap is dropped for
// terminal windows. Throws on an empty window.
double n_step_target(std::span<const double> rewards, bool terminal, double gamma, double bootstrap);

// Double-Q bootstrap: target value of the online argmax (lowest index on ties).
template <class T>
double double_q_bootstrap(std::span<const T> q_online, std::span<const T> q_target);

std::size_t argmax_lowest(std::span<const double> values);

// Turns a stream of (state, action, reward) steps into n-step transitions.
class NStepWindow {
 public:
  NStepWindow(std::size_t n, double gamma);

  // Records a step taken from `state`. `next` is the state after it. Emits
  // the transitions that become complete.
  std::vector<Transition> push(const State& state, std::size_t action, double reward, const State& next,
                               bool done, bool truncated);
  std::size_t pending() const { return steps_.size(); }

 private:
  struct Step {
    State state;
    std::size_t action;
    double reward;
  };
  Transition emit(const State& next, bool terminal) const;
  std::size_t n_;
  double gamma_;
  std::deque<Step> steps_;
};

}  // namespace spirl::agent
