// SPDX-License-Identifier: Apache-2.0
#include "spirl/agent/replay.hpp"

#include <algorithm>
#include <cmath>

#include "spirl/common/error.hpp"

namespace spirl::agent {

SumTree::SumTree(std::size_t capacity) : capacity_(capacity), base_(1) {
  if (capacity == 0) throw InvalidArgument("sum tree capacity must be positive");
  while (base_ < capacity) base_ <<= 1;
  tree_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw ShapeError("sum tree leaf out of range");
  if (!(value >= 0.0) || !std::isfinite(value)) throw NumericError("sum tree values must be finite and >= 0");
  std::size_t i = base_ + leaf;
  tree_[i] = value;
  for (i >>= 1; i >= 1; i >>= 1) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = tree_[2 * i];
    if (mass < left || tree_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  // Rounding can walk into an empty leaf; step back to the last nonzero one.
  std::size_t leaf = i - base_;
  while (leaf > 0 && tree_[base_ + leaf] <= 0.0) --leaf;
  return std::min(leaf, capacity_ - 1);
}

double SumTree::max_invariant_error() const {
  double worst = 0.0;
  for (std::size_t i = 1; i < base_; ++i) worst = std::max(worst, std::abs(tree_[i] - tree_[2 * i] - tree_[2 * i + 1]));
  return worst;
}

PrioritizedReplay::PrioritizedReplay(ReplayConfig config) : config_(config), tree_(config.capacity) {
  if (config.alpha < 0.0) throw InvalidArgument("priority exponent must be >= 0");
  items_.resize(config.capacity);
}

std::size_t PrioritizedReplay::push(Transition t) {
  const std::size_t index = next_;
  items_[index] = std::move(t);
  tree_.set(index, std::pow(max_priority_, config_.alpha));
  next_ = (next_ + 1) % config_.capacity;
  size_ = std::min(size_ + 1, config_.capacity);
  return index;
}

ReplaySample PrioritizedReplay::sample(std::size_t batch, double beta, Rng& rng) const {
  if (size_ == 0) throw InvalidArgument("sample from an empty replay buffer");
  if (batch == 0) throw InvalidArgument("batch must be positive");
  ReplaySample out;
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch);
  double max_w = 0.0;
  for (std::size_t k = 0; k < batch; ++k) {
    const double mass = std::min((static_cast<double>(k) + rng.uniform01()) * segment, std::nextafter(total, 0.0));
    const std::size_t idx = tree_.find(mass);
    const double p = tree_.get(idx) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    out.indices.push_back(idx);
    out.probabilities.push_back(p);
    out.weights.push_back(w);
    max_w = std::max(max_w, w);
  }
  for (auto& w : out.weights) w /= max_w;
  return out;
}

void PrioritizedReplay::update(std::span<const std::size_t> indices, std::span<const double> priorities) {
  if (indices.size() != priorities.size()) throw ShapeError("priority update size mismatch");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size_) throw ShapeError("priority update for an empty slot");
    const double p = priorities[k] + config_.priority_eps;
    if (!std::isfinite(p)) throw NumericError("non-finite priority");
    tree_.set(indices[k], std::pow(p, config_.alpha));
    max_priority_ = std::max(max_priority_, p);
  }
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double g = 0.0, discount = 1.0;
  for (double r : rewards) {
    g += discount * r;
    discount *= gamma;
  }
  return g;
}

double n_step_target(std::span<const double> rewards, bool terminal, double gamma, double bootstrap) {
  if (rewards.empty()) throw InvalidArgument("n-step target of an empty window");
  double g = discounted_return(rewards, gamma);
  if (!terminal) g += std::pow(gamma, static_cast<double>(rewards.size())) * bootstrap;
  return g;
}

std::size_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of nothing");
  std::size_t best = 0;
  for (std::size_t a = 1; a < values.size(); ++a) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

template <class T>
double double_q_bootstrap(std::span<const T> q_online, std::span<const T> q_target) {
  if (q_online.size() != q_target.size() || q_online.empty()) throw ShapeError("double-Q tables differ in size");
  std::vector<double> online(q_online.begin(), q_online.end());
  return static_cast<double>(q_target[argmax_lowest(online)]);
}

template double double_q_bootstrap(std::span<const float>, std::span<const float>);
template double double_q_bootstrap(std::span<const double>, std::span<const double>);

NStepWindow::NStepWindow(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
  if (n == 0) throw InvalidArgument("n-step window needs n >= 1");
}

Transition NStepWindow::emit(const State& next, bool terminal) const {
  Transition t;
  t.state = steps_.front().state;
  t.action = steps_.front().action;
  std::vector<double> rewards;
  for (const auto& s : steps_) rewards.push_back(s.reward);
  t.reward = discounted_return(rewards, gamma_);
  t.steps = rewards.size();
  t.terminal = terminal;
  t.next = next;
  return t;
}

std::vector<Transition> NStepWindow::push(const State& state, std::size_t action, double reward, const State& next,
                                          bool done, bool truncated) {
  std::vector<Transition> out;
  steps_.push_back({state, action, reward});
  if (!done) {
    if (steps_.size() == n_) {
      out.push_back(emit(next, false));
      steps_.pop_front();
    }
    return out;
  }
  // Episode over: flush every pending window against the final state. Time
  // limit truncation still bootstraps.
  while (!steps_.empty()) {
    out.push_back(emit(next, !truncated));
    steps_.pop_front();
  }
  return out;
}

}  // namespace spirl::agent
