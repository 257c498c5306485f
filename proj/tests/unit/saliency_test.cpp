// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "saliency_oracle.hpp"
#include "spirl/common/error.hpp"
#include "spirl/saliency/saliency.hpp"

namespace spirl::saliency {
namespace {

ErrorMap map_of(std::vector<double> e) {
  const auto P = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(e.size()))));
  return {P, std::move(e)};
}

std::vector<std::size_t> positions(const Selection& s) {
  std::vector<std::size_t> out;
  for (const auto& e : s.selected) out.push_back(e.pos);
  return out;
}

TEST(ErrorMapFromPredictions, ExactTargetsGiveZero) {
  std::vector<double> t(4 * 12, 0.3);
  auto m = error_map_from_predictions<double>(t, t, 2, 12);
  for (double v : m.e) EXPECT_EQ(v, 0.0);
}

TEST(ErrorMapFromPredictions, PlusMinusPatternAgainstZeros) {
  std::vector<double> t(4 * 12, 0.0), zeros(4 * 12, 0.0);
  for (std::size_t k = 0; k < 12; ++k) t[2 * 12 + k] = k % 2 ? 1.0 : -1.0;
  auto m = error_map_from_predictions<double>(t, zeros, 2, 12);
  EXPECT_EQ(m.e[2], 1.0);
  EXPECT_EQ(m.e[0], 0.0);
}

TEST(ErrorMapFromPredictions, NonNegativeForRandomInputs) {
  Rng rng(1);
  std::vector<float> a(36 * 48), b(36 * 48);
  for (auto& v : a) v = static_cast<float>(rng.normal());
  for (auto& v : b) v = static_cast<float>(rng.normal());
  auto m = error_map_from_predictions<float>(a, b, 6, 48);
  for (double v : m.e) EXPECT_GE(v, 0.0);
  EXPECT_NO_THROW(m.validate());
}

TEST(LorenzCurve, UniformIsStraightLine) {
  SaliencyCurve c(map_of(std::vector<double>(16, 0.25)));
  auto y = c.ys();
  for (std::size_t k = 0; k <= 16; ++k) EXPECT_NEAR(y[k], k / 16.0, 1e-15);
}

TEST(LorenzCurve, HandComputedPoints) {
  SaliencyCurve c(map_of({0.2, 0.02, 0.7, 0.08}));
  auto y = c.ys();
  auto x = c.xs();
  EXPECT_EQ(x, (std::vector<double>{0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_NEAR(y[1], 0.7, 1e-15);
  EXPECT_NEAR(y[2], 0.9, 1e-15);
  EXPECT_NEAR(y[3], 0.98, 1e-15);
  EXPECT_EQ(y[4], 1.0);
  EXPECT_EQ(c.sorted().front().pos, 2u);
}

TEST(LorenzCurve, DistributionForms) {
  SaliencyCurve c(map_of({0.2, 0.02, 0.7, 0.08}));
  EXPECT_EQ(c.cdf(0.01), 0.0);
  EXPECT_EQ(c.cdf(0.08), 0.5);
  EXPECT_EQ(c.cdf(1.0), 1.0);
  EXPECT_EQ(c.quantile(0.25), 0.02);
  EXPECT_EQ(c.quantile(0.26), 0.08);
  EXPECT_EQ(c.quantile(1.0), 0.7);
  EXPECT_NEAR(c.absolute_lorenz(1.0), 0.25, 1e-15);  // the mean
  EXPECT_NEAR(c.absolute_lorenz(0.5), (0.02 + 0.08) / 4, 1e-15);
  EXPECT_NEAR(c.absolute_lorenz(0.125), 0.02 / 8, 1e-15);
}

TEST(LorenzCurve, ConcaveWithExactEndpointsOnRandomMaps) {
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t P = std::vector<std::size_t>{4, 6, 12}[t % 3];
    SaliencyCurve c(map_of(spirl::testing::random_error_map(P * P, rng, t / 3)));
    if (c.total() <= 0) continue;
    auto y = c.ys();
    EXPECT_NEAR(y.front(), 0.0, 1e-9);
    EXPECT_NEAR(y.back(), 1.0, 1e-9);
    for (std::size_t k = 1; k + 1 < y.size(); ++k) {
      EXPECT_LE(y[k + 1] - y[k], y[k] - y[k - 1] + 1e-15);
    }
  }
}

TEST(DynamicK, WorkedExample) {
  auto m = map_of({0.7, 0.2, 0.08, 0.02});
  auto mean = dynamic_k_select(m, KneeRule::mean_threshold);
  EXPECT_EQ(mean.K, 1u);
  EXPECT_EQ(positions(mean), (std::vector<std::size_t>{0}));
  EXPECT_DOUBLE_EQ(mean.p_star, 0.25);
  auto arg = dynamic_k_select(m, KneeRule::argmin_slope);
  EXPECT_EQ(arg.K, 2u);
  EXPECT_EQ(positions(arg), (std::vector<std::size_t>{0, 1}));
}

TEST(DynamicK, UniformMapFallsBackToOne) {
  for (double v : {0.1, 0.3, 7.0}) {
    auto m = map_of(std::vector<double>(144, v));
    for (auto rule : {KneeRule::mean_threshold, KneeRule::argmin_slope}) {
      auto s = dynamic_k_select(m, rule);
      EXPECT_EQ(s.K, 1u);
      EXPECT_EQ(s.selected[0].pos, 0u);
    }
  }
}

TEST(DynamicK, AllZeroIsDegenerate) {
  auto s = dynamic_k_select(map_of(std::vector<double>(36, 0.0)));
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.K, 1u);
  EXPECT_EQ(s.selected[0].pos, 0u);
}

TEST(DynamicK, RejectsInvalidMaps) {
  EXPECT_THROW(dynamic_k_select(map_of({0.1, -0.2, 0.0, 0.0})), NumericError);
  EXPECT_THROW(dynamic_k_select(ErrorMap{3, {0.1}}), ShapeError);
}

TEST(DynamicK, MatchesBruteForceAndIsScaleInvariant) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t P = std::vector<std::size_t>{4, 6, 12}[t % 3];
    auto e = spirl::testing::random_error_map(P * P, rng, t / 3);
    for (int rule = 0; rule < 2; ++rule) {
      const auto kr = rule == 0 ? KneeRule::mean_threshold : KneeRule::argmin_slope;
      auto got = dynamic_k_select(map_of(e), kr);
      auto want = spirl::testing::brute_force_knee(e, rule);
      ASSERT_EQ(got.K, want.K) << "map " << t << " rule " << rule;
      ASSERT_EQ(positions(got), want.positions);
      for (double c : {1e-3, 1.0, 1e3}) {
        std::vector<double> scaled = e;
        for (auto& v : scaled) v *= c;
        EXPECT_EQ(positions(dynamic_k_select(map_of(scaled), kr)), want.positions)
            << "map " << t << " scale " << c;
      }
    }
  }
}

TEST(DynamicK, SelectedErrorsDominateUnselected) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    auto e = spirl::testing::random_error_map(36, rng, t);
    auto s = dynamic_k_select(map_of(e));
    const auto picked = positions(s);
    std::set<std::size_t> chosen(picked.begin(), picked.end());
    EXPECT_EQ(chosen.size(), s.K);
    double lowest = 1e300;
    for (const auto& x : s.selected) lowest = std::min(lowest, x.error);
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!chosen.count(i)) {
        EXPECT_LE(e[i], lowest);
      }
    }
  }
}

TEST(TopK, Examples) {
  auto m = map_of({0.7, 0.2, 0.08, 0.02});
  EXPECT_EQ(positions(top_k_select(m, 2)), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(top_k_select(m, 4).K, 4u);
  EXPECT_THROW(top_k_select(m, 0), InvalidArgument);
  EXPECT_THROW(top_k_select(m, 5), InvalidArgument);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    auto r = map_of(spirl::testing::random_error_map(36, rng, t));
    auto d = dynamic_k_select(r);
    EXPECT_EQ(positions(top_k_select(r, d.K)), positions(d));
  }
}

TEST(TopK, TiesResolveInRasterOrder) {
  auto m = map_of({0.5, 0.9, 0.5, 0.5});
  EXPECT_EQ(positions(top_k_select(m, 3)), (std::vector<std::size_t>{1, 0, 2}));
}

// Smallest grid percentage whose budget covers the required fraction,
// found by scanning every frame against every grid value.
int grid_search_mr(const std::vector<std::size_t>& counts, std::size_t N) {
  for (int pct = 5; pct <= 95; pct += 5) {
    const std::size_t B = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(pct * N / 100.0 + 1e-9)));
    std::size_t ok = 0;
    for (std::size_t c : counts) ok += c <= B;
    if (static_cast<double>(ok) >= 0.999 * static_cast<double>(counts.size()) - 1e-9) return pct;
  }
  return 95;
}

TEST(EstimateMr, Examples) {
  std::vector<std::size_t> zeros(100, 0);
  EXPECT_EQ(estimate_mr(zeros, 144).mr_star_percent, 5);

  // 99.95% of 2000 frames have <= 28 salient patches, one has 40.
  std::vector<std::size_t> counts(2000, 0);
  Rng rng(6);
  for (auto& c : counts) c = rng.uniform_index(29);
  counts[0] = 28;
  counts[1] = 40;
  auto est = estimate_mr(counts, 144);
  EXPECT_EQ(est.mr_star_percent, 20);
  EXPECT_EQ(est.candidates_percent, (std::vector<int>{15, 20, 25}));
  EXPECT_EQ(budget_for(20, 144), 29u);
  EXPECT_EQ(budget_for(15, 144), 22u);
  EXPECT_EQ(estimate_mr(zeros, 144).candidates_percent, (std::vector<int>{5, 10}));
  EXPECT_THROW(estimate_mr({}, 144), InvalidArgument);
}

TEST(EstimateMr, MatchesGridSearchOnSyntheticDistributions) {
  Rng rng(7);
  for (int t = 0; t < 300; ++t) {
    const std::size_t N = std::vector<std::size_t>{16, 36, 144}[t % 3];
    std::vector<std::size_t> counts(500 + rng.uniform_index(1500));
    const std::size_t hi = 1 + rng.uniform_index(N);
    for (auto& c : counts) c = rng.uniform_index(hi + 1);
    auto est = estimate_mr(counts, N);
    EXPECT_EQ(est.mr_star_percent, grid_search_mr(counts, N)) << "trial " << t;
  }
}

TEST(ApplyBudget, DropsAndPads) {
  Rng rng(8);
  std::vector<double> e(144);
  for (auto& v : e) v = rng.uniform01();
  auto sel = top_k_select(map_of(e), 30);
  auto b = apply_budget(sel, 28, PadMode::zero_pad);
  EXPECT_EQ(b.slots.size(), 28u);
  EXPECT_EQ(b.dropped, 2u);
  for (std::size_t s = 0; s < 28; ++s) EXPECT_EQ(b.slots[s].pos, sel.selected[s].pos);

  auto small = top_k_select(map_of(e), 20);
  for (auto mode : {PadMode::zero_pad, PadMode::trainable_pad, PadMode::masked_attention}) {
    auto p = apply_budget(small, 28, mode);
    EXPECT_EQ(p.slots.size(), 28u);
    EXPECT_EQ(p.real, 20u);
    for (std::size_t s = 0; s < 28; ++s) EXPECT_EQ(p.slots[s].pad, s >= 20);
  }
  auto same = apply_budget(small, 20, PadMode::zero_pad);
  EXPECT_EQ(same.dropped, 0u);
  EXPECT_EQ(same.real, 20u);
}

TEST(ErrorCsv, FullPrecisionRows) {
  std::ostringstream out;
  write_error_csv(out, map_of({0.1, 1.0 / 3.0, 2.0, 0.0}));
  EXPECT_EQ(out.str(), "0.10000000000000001,0.33333333333333331\n2,0\n");
}

}  // namespace
}  // namespace spirl::saliency
