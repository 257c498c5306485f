// SPDX-License-Identifier: Apache-2.0
// Reconstruction-error maps and salient-patch selection.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spirl/mae/model.hpp"

namespace spirl::saliency {

struct ErrorMap {
  std::size_t P = 0;
  std::vector<double> e;  // P*P, raster order

  std::size_t size() const { return e.size(); }
  double at(std::size_t i, std::size_t j) const { return e[i * P + j]; }
  void validate() const;
};

// E[n] = mean over the patch of (target - prediction)^2, both in normalized
// patch space. Buffers are N * patch_dim.
template <class T>
ErrorMap error_map_from_predictions(std::span<const T> targets, std::span<const T> predictions,
                                    std::size_t P, std::size_t patch_dim);

// Surroundings-only reconstruction error of every patch of an 8-bit frame.
template <class T>
ErrorMap error_map(const mae::MAEParams<T>& params, std::span<const std::uint8_t> pixels);

struct Entry {
  std::size_t pos = 0;  // raster id
  double error = 0.0;
  bool operator==(const Entry&) const = default;
};

// Descending by error; equal errors keep raster order.
std::vector<Entry> sorted_descending(const ErrorMap& map);

class SaliencyCurve {
 public:
  explicit SaliencyCurve(const ErrorMap& map);

  const std::vector<Entry>& sorted() const { return sorted_; }
  double total() const { return total_; }
  std::size_t size() const { return sorted_.size(); }

  // Normalized descending cumulative polyline: point k (0..N) is
  // (k / N, sum of the k largest / total). All-zero maps give y = x.
  std::vector<double> xs() const;
  std::vector<double> ys() const;

  // Empirical distribution of the errors and its left-continuous inverse.
  double cdf(double value) const;
  double quantile(double p) const;
  // Integral of the quantile function from 0 to x (ascending accumulation).
  double absolute_lorenz(double x) const;

 private:
  std::vector<Entry> sorted_;
  std::vector<double> ascending_;
  double total_ = 0.0;
};

enum class KneeRule { mean_threshold, argmin_slope };

KneeRule parse_knee_rule(const std::string& name);
std::string to_string(KneeRule rule);

// Slopes within this relative distance of 1 are treated as exactly 1 so
// selections do not flip on summation rounding (e.g. a uniform map).
inline constexpr double kSlopeTolerance = 1e-12;

struct Selection {
  std::vector<Entry> selected;  // descending error, raster tie-break
  std::size_t K = 0;
  double p_star = 0.0;  // K / N
  KneeRule rule = KneeRule::mean_threshold;
  bool degenerate = false;  // all-zero map
};

// Step k (1-based) of the descending curve has slope e_(k) / mean(E).
// mean_threshold: K = number of steps with slope > 1.
// argmin_slope: K = argmin_k |slope_k - 1|, smallest k on ties.
// Both fall back to K = 1 when the rule yields 0.
Selection dynamic_k_select(const ErrorMap& map, KneeRule rule = KneeRule::mean_threshold);

// The K largest errors. Throws InvalidArgument unless 1 <= K <= N.
Selection top_k_select(const ErrorMap& map, std::size_t K);

// Ratios are handled as integer percentages on the grid 5, 10, ..., 95.
struct MrEstimate {
  int mr_star_percent = 5;
  std::vector<int> candidates_percent;  // {mr* - 5, mr*, mr* + 5} clamped, unique
  bool saturated = false;               // even 95% misses the coverage target
  double coverage_at_star = 0.0;
};

std::size_t budget_for(int percent, std::size_t num_patches);

MrEstimate estimate_mr(std::span<const std::size_t> salient_counts, std::size_t num_patches,
                       double coverage = 0.999);

enum class PadMode { zero_pad, trainable_pad, masked_attention };

PadMode parse_pad_mode(const std::string& name);
std::string to_string(PadMode mode);

struct Slot {
  bool pad = true;
  std::size_t pos = 0;
  double error = 0.0;
};

struct BudgetedSelection {
  std::vector<Slot> slots;  // exactly B; real slots first, descending error
  PadMode mode = PadMode::zero_pad;
  std::size_t real = 0;
  std::size_t dropped = 0;
};

BudgetedSelection apply_budget(const Selection& selection, std::size_t budget, PadMode mode);

// P rows of P comma-separated values with 17 significant digits.
void write_error_csv(std::ostream& out, const ErrorMap& map);

}  // namespace spirl::saliency
