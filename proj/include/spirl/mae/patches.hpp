// SPDX-License-Identifier: Apache-2.0
// Patch-grid geometry, normalization, positional tables and random masking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spirl/common/error.hpp"
#include "spirl/common/rng.hpp"

namespace spirl::mae {

struct FrameSpec {
  std::size_t h = 96;
  std::size_t w = 96;
  std::size_t c = 3;
  std::size_t p = 8;

  std::size_t grid() const { return h / p; }  // P
  std::size_t patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return p * p * c; }
  std::size_t pixels() const { return h * w * c; }
  void validate() const;
  bool operator==(const FrameSpec&) const = default;
};

struct GridPos {
  std::size_t i = 0;  // row
  std::size_t j = 0;  // column
  bool operator==(const GridPos&) const = default;
};

// Patches in raster order; each patch is flattened (row, column, channel).
template <class U>
std::vector<U> patchify(std::span<const U> pixels, const FrameSpec& spec) {
  spec.validate();
  if (pixels.size() != spec.pixels()) {
    throw ShapeError("frame has " + std::to_string(pixels.size()) + " values, expected " +
                     std::to_string(spec.pixels()));
  }
  const std::size_t P = spec.grid(), p = spec.p, c = spec.c;
  std::vector<U> out(spec.pixels());
  std::size_t k = 0;
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < P; ++j) {
      for (std::size_t y = 0; y < p; ++y) {
        const U* row = pixels.data() + ((i * p + y) * spec.w + j * p) * c;
        for (std::size_t x = 0; x < p * c; ++x) out[k++] = row[x];
      }
    }
  }
  return out;
}

template <class U>
std::vector<U> unpatchify(std::span<const U> patches, const FrameSpec& spec) {
  spec.validate();
  if (patches.size() != spec.pixels()) {
    throw ShapeError("patch buffer has " + std::to_string(patches.size()) + " values, expected " +
                     std::to_string(spec.pixels()));
  }
  const std::size_t P = spec.grid(), p = spec.p, c = spec.c;
  std::vector<U> out(spec.pixels());
  std::size_t k = 0;
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < P; ++j) {
      for (std::size_t y = 0; y < p; ++y) {
        U* row = out.data() + ((i * p + y) * spec.w + j * p) * c;
        for (std::size_t x = 0; x < p * c; ++x) row[x] = patches[k++];
      }
    }
  }
  return out;
}

// 8-bit pixels scaled to [0, 1].
template <class T>
std::vector<T> to_unit(std::span<const std::uint8_t> pixels) {
  std::vector<T> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = static_cast<T>(pixels[i]) / T(255);
  return out;
}

inline constexpr double kPatchNormEps = 1e-6;

template <class T>
struct NormalizedPatch {
  std::vector<T> values;
  T mean = 0;
  T std = 0;  // population standard deviation
};

template <class T>
NormalizedPatch<T> normalize_patch(std::span<const T> patch, T eps = T(kPatchNormEps)) {
  NormalizedPatch<T> out;
  if (patch.empty()) return out;
  if (std::all_of(patch.begin(), patch.end(), [&](T v) { return v == patch[0]; })) {
    out.mean = patch[0];
    out.values.assign(patch.size(), T(0));
    return out;
  }
  double mu = 0.0;
  for (T v : patch) mu += v;
  mu /= static_cast<double>(patch.size());
  double var = 0.0;
  for (T v : patch) var += (v - mu) * (v - mu);
  var /= static_cast<double>(patch.size());
  out.mean = static_cast<T>(mu);
  out.std = static_cast<T>(std::sqrt(var));
  out.values.resize(patch.size());
  const double denom = std::sqrt(var) + eps;
  for (std::size_t i = 0; i < patch.size(); ++i) {
    out.values[i] = static_cast<T>((patch[i] - mu) / denom);
  }
  return out;
}

// Normalizes each patch_dim-wide row of a patch buffer independently.
template <class T>
std::vector<T> normalize_patches(std::span<const T> patches, std::size_t patch_dim) {
  std::vector<T> out(patches.size());
  for (std::size_t off = 0; off < patches.size(); off += patch_dim) {
    auto n = normalize_patch(patches.subspan(off, patch_dim));
    std::copy(n.values.begin(), n.values.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
  }
  return out;
}

// [P*P, d] table; first d/2 channels encode the row, the rest the column.
// Within each half, channel 2k is sin(pos * w_k) and 2k+1 is cos(pos * w_k)
// with w_k = 10000^(-k / (d/4)).
std::vector<double> sinusoidal_pe_2d(std::size_t P, std::size_t d);

struct MaskSplit {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
};

// Fisher-Yates over 0..n-1; the first ceil((1 - ratio) * n) ids are visible.
MaskSplit random_mask(std::size_t n, double ratio, Rng& rng);

std::size_t visible_count(std::size_t n, double ratio);

// Raster ids of the up-to-8 grid neighbours of `center`, ascending.
std::vector<std::size_t> surroundings(std::size_t P, GridPos center);

}  // namespace spirl::mae
