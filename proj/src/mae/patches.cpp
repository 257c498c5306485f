// SPDX-License-Identifier: Apache-2.0
#include "spirl/mae/patches.hpp"

#include <algorithm>

namespace spirl::mae {

void FrameSpec::validate() const {
  if (h == 0 || w == 0 || c == 0 || p == 0) throw InvalidArgument("frame spec has a zero dimension");
  if (h != w) throw InvalidArgument("frames must be square");
  if (h % p != 0) {
    throw InvalidArgument("patch size " + std::to_string(p) + " does not divide " + std::to_string(h));
  }
}

std::vector<double> sinusoidal_pe_2d(std::size_t P, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw InvalidArgument("positional width must be divisible by 4");
  const std::size_t quarter = d / 4;
  std::vector<double> table(P * P * d);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < P; ++j) {
      double* row = table.data() + (i * P + j) * d;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(quarter));
        row[2 * k] = std::sin(static_cast<double>(i) * w);
        row[2 * k + 1] = std::cos(static_cast<double>(i) * w);
        row[d / 2 + 2 * k] = std::sin(static_cast<double>(j) * w);
        row[d / 2 + 2 * k + 1] = std::cos(static_cast<double>(j) * w);
      }
    }
  }
  return table;
}

std::size_t visible_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw InvalidArgument("mask ratio must lie in [0, 1)");
  // The small slack keeps exact products such as 0.25 * 144 from rounding up.
  const double v = std::ceil((1.0 - ratio) * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(v), n ? 1 : 0, n);
}

MaskSplit random_mask(std::size_t n, double ratio, Rng& rng) {
  const std::size_t keep = visible_count(n, ratio);
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  rng.shuffle(std::span<std::size_t>(ids));
  MaskSplit split;
  split.visible.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
  split.masked.assign(ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end());
  return split;
}

std::vector<std::size_t> surroundings(std::size_t P, GridPos center) {
  if (center.i >= P || center.j >= P) throw InvalidArgument("grid position outside the frame");
  std::vector<std::size_t> out;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      const auto i = static_cast<std::ptrdiff_t>(center.i) + di;
      const auto j = static_cast<std::ptrdiff_t>(center.j) + dj;
      if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(P) || j >= static_cast<std::ptrdiff_t>(P)) continue;
      out.push_back(static_cast<std::size_t>(i) * P + static_cast<std::size_t>(j));
    }
  }
  return out;
}

}  // namespace spirl::mae
