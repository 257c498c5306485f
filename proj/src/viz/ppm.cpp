// SPDX-License-Identifier: Apache-2.0
#include "spirl/viz/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "spirl/common/error.hpp"

namespace spirl::viz {

std::string encode_ppm(const Frame& image) {
  if (image.c != 3) throw ShapeError("PPM output needs 3 channels");
  std::string out = "P6\n" + std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

void write_ppm(const std::filesystem::path& path, const Frame& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Frame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || !in) throw FormatError(path.string() + " is not a binary 8-bit PPM");
  in.get();
  Frame f(h, w, 3);
  if (!in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()))) {
    throw FormatError(path.string() + " is truncated");
  }
  return f;
}

Color ramp(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  const Color& a = v < 0.5 ? kRampLow : kRampMid;
  const Color& b = v < 0.5 ? kRampMid : kRampHigh;
  const double t = v < 0.5 ? v * 2.0 : (v - 0.5) * 2.0;
  Color c;
  for (std::size_t k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(a[k] + t * (b[k] - a[k])));
  return c;
}

Frame upscale(const Frame& image, std::size_t factor) {
  if (factor == 0) throw InvalidArgument("upscale factor must be positive");
  Frame out(image.h * factor, image.w * factor, image.c);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      for (std::size_t ch = 0; ch < image.c; ++ch) out.at(y, x, ch) = image.at(y / factor, x / factor, ch);
    }
  }
  return out;
}

Frame to_rgb(const Frame& frame) {
  if (frame.c == 3) return frame;
  if (frame.c != 1) throw ShapeError("to_rgb expects 1 or 3 channels");
  Frame out(frame.h, frame.w, 3);
  for (std::size_t i = 0; i < frame.h * frame.w; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) out.pixels[i * 3 + ch] = frame.pixels[i];
  }
  return out;
}

Frame heatmap(const saliency::ErrorMap& map, std::size_t patch, std::size_t factor) {
  map.validate();
  const double top = *std::max_element(map.e.begin(), map.e.end());
  const std::size_t cell = patch * factor, P = map.P;
  Frame out(P * cell, P * cell, 3);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      const Color c = ramp(top > 0.0 ? map.at(y / cell, x / cell) / top : 0.0);
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[ch];
    }
  }
  return out;
}

void outline_patches(Frame& image, std::size_t P, std::span<const std::size_t> patches, Color color,
                     std::size_t thickness) {
  if (P == 0 || image.h % P != 0 || image.w % P != 0) throw ShapeError("image does not split into the patch grid");
  const std::size_t cell_h = image.h / P, cw = image.w / P;
  for (std::size_t id : patches) {
    if (id >= P * P) throw ShapeError("patch id outside the grid");
    const std::size_t y0 = (id / P) * cell_h, x0 = (id % P) * cw;
    for (std::size_t y = y0; y < y0 + cell_h; ++y) {
      for (std::size_t x = x0; x < x0 + cw; ++x) {
        const bool border = y - y0 < thickness || x - x0 < thickness || y0 + cell_h - 1 - y < thickness ||
                            x0 + cw - 1 - x < thickness;
        if (!border) continue;
        for (std::size_t k = 0; k < 3; ++k) image.at(y, x, k) = color[k];
      }
    }
  }
}

Frame selection_overlay(const Frame& frame, std::size_t P, std::span<const std::size_t> selected, std::size_t factor) {
  Frame out = upscale(to_rgb(frame), factor);
  outline_patches(out, P, selected, kSelected, std::max<std::size_t>(1, factor / 2));
  return out;
}

Frame attention_overlay(const Frame& frame, std::size_t P, std::span<const std::size_t> selected,
                        std::span<const std::size_t> attended, std::size_t factor) {
  const std::set<std::size_t> sel(selected.begin(), selected.end()), att(attended.begin(), attended.end());
  std::vector<std::size_t> only_sel, only_att, both;
  for (auto id : sel) (att.count(id) ? both : only_sel).push_back(id);
  for (auto id : att) {
    if (!sel.count(id)) only_att.push_back(id);
  }
  Frame out = upscale(to_rgb(frame), factor);
  const std::size_t t = std::max<std::size_t>(1, factor / 2);
  outline_patches(out, P, only_sel, kSelected, t);
  outline_patches(out, P, only_att, kAttended, t);
  outline_patches(out, P, both, kSelectedAndAttended, 2 * t);
  return out;
}

}  // namespace spirl::viz
