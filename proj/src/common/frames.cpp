// SPDX-License-Identifier: Apache-2.0
#include "spirl/common/frames.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>

#include "spirl/common/binary_io.hpp"
#include "spirl/common/error.hpp"

namespace spirl {

void FrameSet::push_back(const Frame& f) {
  if (f.h != h_ || f.w != w_ || f.c != c_ || f.pixels.size() != frame_bytes()) {
    throw ShapeError("frame geometry does not match the frame set");
  }
  bytes_.insert(bytes_.end(), f.pixels.begin(), f.pixels.end());
}

std::span<const std::uint8_t> FrameSet::pixels(std::size_t i) const {
  if (i >= size()) throw InvalidArgument("frame index " + std::to_string(i) + " out of range");
  return {bytes_.data() + i * frame_bytes(), frame_bytes()};
}

Frame FrameSet::frame(std::size_t i) const {
  Frame f(h_, w_, c_);
  auto src = pixels(i);
  std::copy(src.begin(), src.end(), f.pixels.begin());
  return f;
}

void write_frameset(std::ostream& out, const FrameSet& set) {
  out.write("SPFR", 4);
  io::write_u32(out, kFrameSetVersion);
  io::write_u64(out, set.size());
  io::write_u32(out, static_cast<std::uint32_t>(set.h()));
  io::write_u32(out, static_cast<std::uint32_t>(set.w()));
  io::write_u32(out, static_cast<std::uint32_t>(set.c()));
  out.write(reinterpret_cast<const char*>(set.raw().data()),
            static_cast<std::streamsize>(set.raw().size()));
  if (!out) throw FormatError("failed writing frame set");
}

FrameSet read_frameset(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPFR", 4) != 0) {
    throw FormatError("not an SPFR dataset (bad magic)");
  }
  const auto version = io::read_u32(in);
  if (version != kFrameSetVersion) throw FormatError("unsupported SPFR version " + std::to_string(version));
  const auto count = io::read_u64(in);
  const auto h = io::read_u32(in), w = io::read_u32(in), c = io::read_u32(in);
  if (h == 0 || w == 0 || c == 0) throw FormatError("SPFR header has a zero dimension");
  FrameSet set(h, w, c);
  Frame f(h, w, c);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.bytes()))) {
      throw FormatError("SPFR truncated at frame " + std::to_string(i));
    }
    set.push_back(f);
  }
  return set;
}

void save_frameset(const std::filesystem::path& path, const FrameSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_frameset(out, set);
}

FrameSet load_frameset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_frameset(in);
}

std::size_t worker_threads() {
  std::size_t n = 1;
  if (const char* v = std::getenv("SPIRL_THREADS")) {
    n = std::max<long>(1, std::strtol(v, nullptr, 10));
  }
  return std::clamp<std::size_t>(n, 1, std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace spirl
