// SPDX-License-Identifier: Apache-2.0
// Central finite-difference oracle used by the gradient tests. It only calls
// the forward function and never touches the backward implementation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "spirl/common/rng.hpp"
#include "spirl/tensor/tensor.hpp"

namespace spirl::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

// Relative error with a small floor on the denominator so that exactly-zero
// gradients compare absolutely.
inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

// Compares d loss / d inputs from backward() against central differences on
// up to `max_coords` randomly chosen coordinates (all when 0).
inline GradCheckResult grad_check(std::vector<ad::Tensord> inputs,
                                  const std::function<ad::Tensord()>& loss_fn, double h,
                                  std::size_t max_coords, std::uint64_t seed) {
  for (auto& t : inputs) t.zero_grad();
  ad::Tensord loss = loss_fn();
  loss.backward();

  struct Coord {
    std::size_t tensor;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) coords.push_back({t, i});
  }
  if (max_coords && coords.size() > max_coords) {
    Rng rng(seed);
    rng.shuffle(std::span<Coord>(coords));
    coords.resize(max_coords);
  }

  GradCheckResult result;
  for (const Coord& c : coords) {
    auto data = inputs[c.tensor].mutable_data();
    const double saved = data[c.index];
    data[c.index] = saved + h;
    const double up = loss_fn().item();
    data[c.index] = saved - h;
    const double down = loss_fn().item();
    data[c.index] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const auto g = inputs[c.tensor].grad();
    const double analytic = g.empty() ? 0.0 : g[c.index];
    result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, numeric));
    ++result.coords;
  }
  return result;
}

inline ad::Tensord random_param(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return ad::Tensord::parameter(std::move(shape), std::move(v));
}

}  // namespace spirl::testing
