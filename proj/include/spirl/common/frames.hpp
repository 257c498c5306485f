// SPDX-License-Identifier: Apache-2.0
// Raw 8-bit RGB frames and the SPFR dataset container.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace spirl {

struct Frame {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 3;
  std::vector<std::uint8_t> pixels;  // row-major, channel fastest

  Frame() = default;
  Frame(std::size_t h_, std::size_t w_, std::size_t c_ = 3)
      : h(h_), w(w_), c(c_), pixels(h_ * w_ * c_, 0) {}
  std::size_t bytes() const { return h * w * c; }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t ch) { return pixels[(y * w + x) * c + ch]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[(y * w + x) * c + ch];
  }
  bool operator==(const Frame&) const = default;
};

// Frames of identical geometry stored contiguously.
class FrameSet {
 public:
  FrameSet() = default;
  FrameSet(std::size_t h, std::size_t w, std::size_t c) : h_(h), w_(w), c_(c) {}

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t c() const { return c_; }
  std::size_t size() const { return frame_bytes() ? bytes_.size() / frame_bytes() : 0; }
  bool empty() const { return size() == 0; }
  std::size_t frame_bytes() const { return h_ * w_ * c_; }

  void push_back(const Frame& f);
  std::span<const std::uint8_t> pixels(std::size_t i) const;
  Frame frame(std::size_t i) const;
  const std::vector<std::uint8_t>& raw() const { return bytes_; }

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 3;
  std::vector<std::uint8_t> bytes_;
};

// SPFR: "SPFR" | version u32 | count u64 | h u32 | w u32 | c u32 | raw bytes.
inline constexpr std::uint32_t kFrameSetVersion = 1;

void write_frameset(std::ostream& out, const FrameSet& set);
FrameSet read_frameset(std::istream& in);
void save_frameset(const std::filesystem::path& path, const FrameSet& set);
FrameSet load_frameset(const std::filesystem::path& path);

// Worker count from SPIRL_THREADS (default 1, clamped to the hardware).
std::size_t worker_threads();

}  // namespace spirl
