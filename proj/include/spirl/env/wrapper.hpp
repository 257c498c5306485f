// SPDX-License-Identifier: Apache-2.0
// Atari-style preprocessing: action repeat, reward clipping, random start
// no-ops, episode frame cap, and k-frame state stacking.
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "spirl/common/error.hpp"
#include "spirl/env/env.hpp"

namespace spirl::env {

struct WrapperConfig {
  std::size_t frame_skip = 4;
  // Same mechanism as frame_skip: each agent action is repeated and the last
  // raw frame returned. Must equal frame_skip.
  std::size_t action_repeat = 4;
  std::size_t frame_stack = 4;
  std::size_t noop_max = 30;
  double reward_clip = 1.0;
  std::size_t max_episode_frames = 108000;
  // Pass-through; the environments here have a single life.
  bool terminal_on_life_loss = false;

  void validate() const;
};

class Wrapper final : public EnvInterface {
 public:
  Wrapper(std::unique_ptr<EnvInterface> inner, WrapperConfig config = {});

  std::size_t action_count() const override { return inner_->action_count(); }
  std::size_t height() const override { return inner_->height(); }
  std::size_t width() const override { return inner_->width(); }
  std::size_t channels() const override { return inner_->channels(); }

  Frame reset(std::uint64_t seed) override;
  StepResult step(std::size_t action) override;

  const WrapperConfig& config() const { return config_; }
  EnvInterface& inner() { return *inner_; }
  std::size_t last_noops() const { return noops_; }
  std::size_t episode_frames() const { return frames_; }

 private:
  std::unique_ptr<EnvInterface> inner_;
  WrapperConfig config_;
  std::size_t noops_ = 0;
  std::size_t frames_ = 0;
  bool started_ = false;
  bool done_ = false;
};

// Number of start no-ops for a reset seed, uniform in [0, noop_max].
std::size_t start_noops(std::uint64_t seed, std::size_t noop_max);

// The last k observations, oldest first. reset replicates its argument k
// times so a fresh episode starts with a full history.
template <class Item>
class History {
 public:
  explicit History(std::size_t k) : k_(k) {
    if (k == 0) throw InvalidArgument("history length must be positive");
  }
  void reset(const Item& first) { items_.assign(k_, first); }
  void push(const Item& item) {
    if (items_.empty()) {
      reset(item);
      return;
    }
    items_.pop_front();
    items_.push_back(item);
  }
  const std::deque<Item>& items() const { return items_; }
  std::size_t size() const { return k_; }

 private:
  std::size_t k_;
  std::deque<Item> items_;
};

// Stacked state: the k frames concatenated along channels (h x w x k*c).
Frame stack_frames(const std::deque<Frame>& frames);

// Uniform-random-policy frame collection. The first frame of each episode
// and every post-step frame are recorded until n frames exist.
FrameSet collect(EnvInterface& env, std::size_t n, std::uint64_t seed);

}  // namespace spirl::env
