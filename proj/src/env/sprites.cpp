// SPDX-License-Identifier: Apache-2.0
#include "spirl/env/sprites.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

#include "spirl/common/error.hpp"

namespace spirl::env {
namespace {

constexpr std::size_t kTile = 8;

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kPlayerEdge{240, 240, 240};
constexpr Rgb kPlayerFill{40, 220, 230};
constexpr Rgb kCoin{250, 210, 30};
constexpr Rgb kHazard{230, 40, 40};
constexpr Rgb kHazardMark{30, 10, 10};

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

void put(Frame& f, int y, int x, Rgb c) {
  if (y < 0 || x < 0 || y >= static_cast<int>(f.h) || x >= static_cast<int>(f.w)) return;
  f.at(y, x, 0) = c.r;
  f.at(y, x, 1) = c.g;
  f.at(y, x, 2) = c.b;
}

// Near-neutral luminance tile repeated every kTile pixels, a faint tint and
// a faint linear gradient.
Frame make_background(const SpritesConfig& cfg) {
  Rng rng(splitmix64(cfg.background_seed ^ 0x5350524954455321ull));
  const int base = 88 + static_cast<int>(rng.uniform_index(40));
  std::array<int, 3> tint{};
  for (auto& t : tint) t = static_cast<int>(rng.uniform_index(13)) - 6;
  std::array<int, kTile * kTile> tile{};
  // Blocky motif: 2x2 cells at a few luminance levels.
  for (std::size_t cy = 0; cy < kTile / 2; ++cy) {
    for (std::size_t cx = 0; cx < kTile / 2; ++cx) {
      const int level = static_cast<int>(rng.uniform_index(5)) * 16 - 32;
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) tile[(2 * cy + dy) * kTile + 2 * cx + dx] = level;
      }
    }
  }
  const int gx = static_cast<int>(rng.uniform_index(13)) - 6;
  const int gy = static_cast<int>(rng.uniform_index(13)) - 6;
  const int S = static_cast<int>(cfg.size);
  Frame f(cfg.size, cfg.size, 3);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const int lum = base + tile[(y % kTile) * kTile + x % kTile] + (gx * x + gy * y) / S;
      for (std::size_t ch = 0; ch < 3; ++ch) f.at(y, x, ch) = clamp_byte(lum + tint[ch]);
    }
  }
  return f;
}

}  // namespace

void SpritesConfig::validate() const {
  if (sprite == 0 || size < 3 * sprite) throw InvalidArgument("sprites: frame too small for the sprite size");
  if (player_speed < 0 || max_object_speed < 1) throw InvalidArgument("sprites: invalid speeds");
  if (step_cap == 0) throw InvalidArgument("sprites: step_cap must be positive");
  if (collectibles + hazards > 16) throw InvalidArgument("sprites: at most 16 objects");
}

Sprites::Sprites(SpritesConfig config) : config_(config) {
  config_.validate();
  background_ = make_background(config_);
}

Rect Sprites::random_rect(const Rect& avoid) {
  const int s = static_cast<int>(config_.sprite);
  const int span = static_cast<int>(config_.size) - s + 1;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Rect r{static_cast<int>(rng_.uniform_index(span)), static_cast<int>(rng_.uniform_index(span)), s};
    if (!r.overlaps(avoid)) return r;
  }
  throw InvalidArgument("sprites: no free spawn position");
}

Sprites::Mover Sprites::spawn(int margin) {
  const int s = static_cast<int>(config_.sprite);
  const int size = static_cast<int>(config_.size);
  // Shrink the margin on small boards until some position stays free.
  auto has_room = [&](int m) {
    return player_.x - m >= s || player_.y - m >= s || player_.x + s + m <= size - s || player_.y + s + m <= size - s;
  };
  while (margin > 0 && !has_room(margin)) --margin;
  Rect keep_out{player_.x - margin, player_.y - margin, s + 2 * margin};
  Mover m;
  m.rect = random_rect(keep_out);
  const int speed = 1 + static_cast<int>(rng_.uniform_index(config_.max_object_speed));
  const int sign = rng_.bernoulli(0.5) ? 1 : -1;
  if (rng_.bernoulli(0.5)) {
    m.vx = sign * speed;
  } else {
    m.vy = sign * speed;
  }
  return m;
}

// Bounce between the walls; the path is periodic.
void Sprites::advance(Mover& m) const {
  const int hi = static_cast<int>(config_.size - config_.sprite);
  auto move = [hi](int& p, int& v) {
    p += v;
    if (p < 0) {
      p = -p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
  };
  move(m.rect.x, m.vx);
  move(m.rect.y, m.vy);
}

Frame Sprites::reset(std::uint64_t seed) {
  rng_ = Rng(splitmix64(seed));
  const int s = static_cast<int>(config_.sprite);
  const int c = (static_cast<int>(config_.size) - s) / 2;
  player_ = Rect{c, c, s};
  coins_.clear();
  hazards_.clear();
  for (std::size_t i = 0; i < config_.collectibles; ++i) coins_.push_back(spawn(0));
  for (std::size_t i = 0; i < config_.hazards; ++i) hazards_.push_back(spawn(s));
  steps_ = 0;
  started_ = true;
  done_ = false;
  return render();
}

StepResult Sprites::step(std::size_t action) {
  if (!started_) throw InvalidArgument("sprites: step before reset");
  if (done_) throw InvalidArgument("sprites: step after done");
  if (action >= kSpritesActions) throw InvalidArgument("sprites: action out of range");
  const int v = config_.player_speed;
  const int hi = static_cast<int>(config_.size - config_.sprite);
  switch (static_cast<SpritesAction>(action)) {
    case SpritesAction::noop: break;
    case SpritesAction::up: player_.y -= v; break;
    case SpritesAction::down: player_.y += v; break;
    case SpritesAction::left: player_.x -= v; break;
    case SpritesAction::right: player_.x += v; break;
  }
  player_.x = std::clamp(player_.x, 0, hi);
  player_.y = std::clamp(player_.y, 0, hi);
  for (auto& m : coins_) advance(m);
  for (auto& m : hazards_) advance(m);

  StepResult out;
  for (auto& m : coins_) {
    if (m.rect.overlaps(player_)) {
      out.reward += 1.0;
      m = spawn(0);
    }
  }
  for (const auto& m : hazards_) {
    if (m.rect.overlaps(player_)) {
      out.reward -= 1.0;
      done_ = true;
      break;
    }
  }
  ++steps_;
  if (!done_ && steps_ >= config_.step_cap) {
    done_ = true;
    out.info.truncated = true;
  }
  out.done = done_;
  out.info.raw_frames = 1;
  out.frame = render();
  return out;
}

std::vector<SpriteBox> Sprites::boxes() const {
  std::vector<SpriteBox> out;
  for (const auto& m : coins_) out.push_back({SpriteKind::collectible, m.rect});
  for (const auto& m : hazards_) out.push_back({SpriteKind::hazard, m.rect});
  out.push_back({SpriteKind::player, player_});
  return out;
}

Frame Sprites::render() const {
  Frame f = background_;
  const int s = static_cast<int>(config_.sprite);
  const double half = (s - 1) / 2.0;
  for (const auto& box : boxes()) {
    const Rect& r = box.rect;
    for (int dy = 0; dy < s; ++dy) {
      for (int dx = 0; dx < s; ++dx) {
        const int y = r.y + dy, x = r.x + dx;
        switch (box.kind) {
          case SpriteKind::player: {
            const bool edge = dy == 0 || dx == 0 || dy == s - 1 || dx == s - 1;
            put(f, y, x, edge ? kPlayerEdge : kPlayerFill);
            break;
          }
          case SpriteKind::collectible:
            if (std::abs(dx - half) + std::abs(dy - half) <= half + 0.5) put(f, y, x, kCoin);
            break;
          case SpriteKind::hazard:
            put(f, y, x, (dx == dy || dx == s - 1 - dy) ? kHazardMark : kHazard);
            break;
        }
      }
    }
  }
  return f;
}

std::vector<double> sprite_coverage(const std::vector<SpriteBox>& boxes, std::size_t size, std::size_t p) {
  if (p == 0 || size % p != 0) throw InvalidArgument("sprite_coverage: patch size must divide the frame");
  std::vector<std::uint8_t> mask(size * size, 0);
  for (const auto& b : boxes) {
    for (int y = std::max(0, b.rect.y); y < std::min<int>(size, b.rect.y + b.rect.size); ++y) {
      for (int x = std::max(0, b.rect.x); x < std::min<int>(size, b.rect.x + b.rect.size); ++x) {
        mask[y * size + x] = 1;
      }
    }
  }
  const std::size_t P = size / p;
  std::vector<double> cover(P * P, 0.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) cover[(y / p) * P + x / p] += mask[y * size + x];
  }
  for (auto& v : cover) v /= static_cast<double>(p * p);
  return cover;
}

}  // namespace spirl::env
