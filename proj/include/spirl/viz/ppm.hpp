// SPDX-License-Identifier: Apache-2.0
// Binary PPM (P6, maxval 255) images and the saliency renderings.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spirl/common/frames.hpp"
#include "spirl/saliency/saliency.hpp"

namespace spirl::viz {

using Color = std::array<std::uint8_t, 3>;

// Heatmap ramp anchors at 0, 0.5 and 1 (dark blue, green, yellow).
inline constexpr Color kRampLow{30, 30, 120};
inline constexpr Color kRampMid{40, 170, 70};
inline constexpr Color kRampHigh{250, 230, 40};

inline constexpr Color kSelected{230, 40, 40};
inline constexpr Color kAttended{40, 200, 230};
inline constexpr Color kSelectedAndAttended{255, 255, 255};

std::string encode_ppm(const Frame& image);
void write_ppm(const std::filesystem::path& path, const Frame& image);
Frame read_ppm(const std::filesystem::path& path);

// Linear interpolation through the three anchors; v is clamped to [0, 1].
Color ramp(double v);

// Nearest-neighbour integer upscaling.
Frame upscale(const Frame& image, std::size_t factor);

// RGB copy of a frame (1-channel frames become gray).
Frame to_rgb(const Frame& frame);

// Each patch filled with ramp(e / max e); an all-zero map renders low.
Frame heatmap(const saliency::ErrorMap& map, std::size_t patch, std::size_t factor);

// Frame upscaled by `factor` with a border of `thickness` pixels around each
// listed patch.
void outline_patches(Frame& image, std::size_t P, std::span<const std::size_t> patches, Color color,
                     std::size_t thickness);
Frame selection_overlay(const Frame& frame, std::size_t P, std::span<const std::size_t> selected,
                        std::size_t factor);

// Selected patches in red, attended-only in cyan, both in white with a
// thicker border.
Frame attention_overlay(const Frame& frame, std::size_t P, std::span<const std::size_t> selected,
                        std::span<const std::size_t> attended, std::size_t factor);

}  // namespace spirl::viz
