// SPDX-License-Identifier: Apache-2.0
#include "spirl/env/wrapper.hpp"

#include <algorithm>

#include "spirl/common/rng.hpp"

namespace spirl::env {

void WrapperConfig::validate() const {
  if (frame_skip == 0 || frame_stack == 0) throw InvalidArgument("wrapper: skip and stack must be positive");
  if (action_repeat != frame_skip) throw InvalidArgument("wrapper: action_repeat must equal frame_skip");
  if (!(reward_clip > 0.0)) throw InvalidArgument("wrapper: reward_clip must be positive");
  if (max_episode_frames == 0) throw InvalidArgument("wrapper: max_episode_frames must be positive");
}

std::size_t start_noops(std::uint64_t seed, std::size_t noop_max) {
  Rng rng(splitmix64(seed ^ 0x4e4f4f5053ull));
  return rng.uniform_index(noop_max + 1);
}

Wrapper::Wrapper(std::unique_ptr<EnvInterface> inner, WrapperConfig config)
    : inner_(std::move(inner)), config_(config) {
  if (!inner_) throw InvalidArgument("wrapper: null environment");
  config_.validate();
}

Frame Wrapper::reset(std::uint64_t seed) {
  Frame frame = inner_->reset(seed);
  frames_ = 0;
  noops_ = 0;
  const std::size_t want = start_noops(seed, config_.noop_max);
  while (noops_ < want) {
    auto r = inner_->step(0);
    ++noops_;
    ++frames_;
    if (r.done) {
      // The game ended during the no-ops; start over without them.
      frame = inner_->reset(seed);
      frames_ = 0;
      break;
    }
    frame = std::move(r.frame);
  }
  started_ = true;
  done_ = false;
  return frame;
}

StepResult Wrapper::step(std::size_t action) {
  if (!started_) throw InvalidArgument("wrapper: step before reset");
  if (done_) throw InvalidArgument("wrapper: step after done");
  StepResult out;
  double total = 0.0;
  for (std::size_t k = 0; k < config_.frame_skip; ++k) {
    auto r = inner_->step(action);
    total += r.reward;
    ++frames_;
    ++out.info.raw_frames;
    out.frame = std::move(r.frame);
    if (r.done) {
      out.done = true;
      out.info.truncated = r.info.truncated;
      break;
    }
    if (frames_ >= config_.max_episode_frames) {
      out.done = true;
      out.info.truncated = true;
      break;
    }
  }
  out.reward = std::clamp(total, -config_.reward_clip, config_.reward_clip);
  done_ = out.done;
  return out;
}

Frame stack_frames(const std::deque<Frame>& frames) {
  if (frames.empty()) throw InvalidArgument("stack_frames: no frames");
  const Frame& first = frames.front();
  Frame out(first.h, first.w, first.c * frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Frame& f = frames[k];
    if (f.h != first.h || f.w != first.w || f.c != first.c) throw ShapeError("stack_frames: mixed geometry");
    for (std::size_t px = 0; px < f.h * f.w; ++px) {
      std::copy_n(f.pixels.begin() + px * f.c, f.c, out.pixels.begin() + px * out.c + k * f.c);
    }
  }
  return out;
}

FrameSet collect(EnvInterface& env, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("collect: frame count must be positive");
  FrameSet set(env.height(), env.width(), env.channels());
  Rng rng(seed);
  set.push_back(env.reset(rng.fork_seed()));
  while (set.size() < n) {
    auto r = env.step(rng.uniform_index(env.action_count()));
    set.push_back(r.frame);
    if (r.done && set.size() < n) set.push_back(env.reset(rng.fork_seed()));
  }
  return set;
}

}  // namespace spirl::env
