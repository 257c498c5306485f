// SPDX-License-Identifier: Apache-2.0
// Brute-force knee-rule oracle: recomputes every slope from scratch for each
// k without sharing code with the library selection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "spirl/common/rng.hpp"

namespace spirl::testing {

struct OracleSelection {
  std::size_t K = 0;
  std::vector<std::size_t> positions;
};

// rule 0 = mean threshold, 1 = argmin |slope - 1|.
inline OracleSelection brute_force_knee(const std::vector<double>& e, int rule) {
  const std::size_t N = e.size();
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < N; ++i) order.push_back({-e[i], i});
  std::sort(order.begin(), order.end());  // descending error, then ascending raster id
  double sum = 0.0;
  for (std::size_t i = 0; i < N; ++i) sum += e[order[i].second];
  OracleSelection out;
  if (sum <= 0.0) {
    out.K = 1;
  } else if (rule == 0) {
    for (std::size_t k = 1; k <= N; ++k) {
      const double slope = e[order[k - 1].second] * static_cast<double>(N) / sum;
      if (slope > 1.0 + 1e-12) out.K = k;
    }
  } else {
    double best = 1e300;
    for (std::size_t k = 1; k <= N; ++k) {
      const double slope = e[order[k - 1].second] * static_cast<double>(N) / sum;
      const double d = std::abs(slope - 1.0);
      if (d < best - 1e-12) {
        best = d;
        out.K = k;
      }
    }
  }
  out.K = std::max<std::size_t>(out.K, 1);
  for (std::size_t k = 0; k < out.K; ++k) out.positions.push_back(order[k].second);
  return out;
}

// Random error map; every third map is quantized to a few levels so ties occur.
inline std::vector<double> random_error_map(std::size_t N, Rng& rng, int variant) {
  std::vector<double> e(N);
  for (auto& v : e) {
    switch (variant % 3) {
      case 0: v = rng.uniform01(); break;
      case 1: v = std::exp(3.0 * rng.normal()); break;
      default: v = 0.1 * static_cast<double>(rng.uniform_index(5)); break;
    }
  }
  return e;
}

}  // namespace spirl::testing
