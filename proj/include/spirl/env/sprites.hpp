// SPDX-License-Identifier: Apache-2.0
// Deterministic sprite game: a player square collects moving coins and
// avoids moving hazards over a static textured background.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spirl/common/rng.hpp"
#include "spirl/env/env.hpp"

namespace spirl::env {

enum class SpritesAction : std::size_t { noop = 0, up, down, left, right };
inline constexpr std::size_t kSpritesActions = 5;

struct SpritesConfig {
  std::size_t size = 96;  // square frames, RGB
  std::uint64_t background_seed = 0;
  std::size_t sprite = 8;  // sprite edge in pixels
  std::size_t collectibles = 2;
  std::size_t hazards = 1;
  int player_speed = 4;     // px per raw step
  int max_object_speed = 2;  // objects move 1..max px per raw step
  std::size_t step_cap = 1000;

  static SpritesConfig toy() {
    SpritesConfig c;
    c.size = 48;
    return c;
  }
  void validate() const;
};

struct Rect {
  int x = 0;
  int y = 0;
  int size = 0;
  bool overlaps(const Rect& o) const {
    return x < o.x + o.size && o.x < x + size && y < o.y + o.size && o.y < y + size;
  }
  bool operator==(const Rect&) const = default;
};

enum class SpriteKind { player, collectible, hazard };

struct SpriteBox {
  SpriteKind kind;
  Rect rect;
};

class Sprites final : public EnvInterface {
 public:
  explicit Sprites(SpritesConfig config);

  std::size_t action_count() const override { return kSpritesActions; }
  std::size_t height() const override { return config_.size; }
  std::size_t width() const override { return config_.size; }
  std::size_t channels() const override { return 3; }

  Frame reset(std::uint64_t seed) override;
  StepResult step(std::size_t action) override;

  const SpritesConfig& config() const { return config_; }
  // The static background without sprites.
  const Frame& background() const { return background_; }
  // Every sprite drawn in the current frame.
  std::vector<SpriteBox> boxes() const;
  std::size_t steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  struct Mover {
    Rect rect;
    int vx = 0, vy = 0;
  };

  Frame render() const;
  void advance(Mover& m) const;
  Mover spawn(int margin);  // keeps margin px away from the player
  Rect random_rect(const Rect& avoid);

  SpritesConfig config_;
  Frame background_;
  Rng rng_{0};
  Rect player_;
  std::vector<Mover> coins_;
  std::vector<Mover> hazards_;
  std::size_t steps_ = 0;
  bool started_ = false;
  bool done_ = false;
};

// Fraction of each p x p patch covered by a sprite (P*P, raster order).
std::vector<double> sprite_coverage(const std::vector<SpriteBox>& boxes, std::size_t size,
                                    std::size_t p);

}  // namespace spirl::env
