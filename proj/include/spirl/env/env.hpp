// SPDX-License-Identifier: Apache-2.0
// Environment interface shared by Sprites, the preprocessing wrapper and
// external peers.
#pragma once

#include <cstddef>
#include <cstdint>

#include "spirl/common/frames.hpp"

namespace spirl::env {

struct StepInfo {
  std::size_t raw_frames = 0;  // raw frames consumed by this step
  bool truncated = false;      // ended by a frame or step cap rather than the game
};

struct StepResult {
  Frame frame;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class EnvInterface {
 public:
  virtual ~EnvInterface() = default;

  virtual std::size_t action_count() const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  virtual std::size_t channels() const = 0;

  // Deterministic per seed.
  virtual Frame reset(std::uint64_t seed) = 0;
  // Throws InvalidArgument after done or before the first reset.
  virtual StepResult step(std::size_t action) = 0;
};

}  // namespace spirl::env
