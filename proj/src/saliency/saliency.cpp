// SPDX-License-Identifier: Apache-2.0
#include "spirl/saliency/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "spirl/common/error.hpp"

namespace spirl::saliency {

void ErrorMap::validate() const {
  if (e.size() != P * P) throw ShapeError("error map size does not match its grid");
  for (double v : e) {
    if (!std::isfinite(v) || v < 0.0) throw NumericError("error map entries must be finite and >= 0");
  }
}

template <class T>
ErrorMap error_map_from_predictions(std::span<const T> targets, std::span<const T> predictions,
                                    std::size_t P, std::size_t patch_dim) {
  const std::size_t N = P * P;
  if (targets.size() != N * patch_dim || predictions.size() != N * patch_dim) {
    throw ShapeError("error map inputs must hold P*P patches");
  }
  ErrorMap map{P, std::vector<double>(N, 0.0)};
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < patch_dim; ++k) {
      const double d = static_cast<double>(targets[n * patch_dim + k]) -
                       static_cast<double>(predictions[n * patch_dim + k]);
      s += d * d;
    }
    map.e[n] = s / static_cast<double>(patch_dim);
  }
  return map;
}

template <class T>
ErrorMap error_map(const mae::MAEParams<T>& params, std::span<const std::uint8_t> pixels) {
  const auto& spec = params.config.frame;
  auto patches = mae::patchify<T>(mae::to_unit<T>(pixels), spec);
  auto targets = mae::normalize_patches<T>(patches, spec.patch_dim());
  auto preds = mae::surroundings_predictions<T>(params, patches);
  return error_map_from_predictions<T>(targets, preds, spec.grid(), spec.patch_dim());
}

template ErrorMap error_map_from_predictions<float>(std::span<const float>, std::span<const float>,
                                                   std::size_t, std::size_t);
template ErrorMap error_map_from_predictions<double>(std::span<const double>, std::span<const double>,
                                                    std::size_t, std::size_t);
template ErrorMap error_map<float>(const mae::MAEParams<float>&, std::span<const std::uint8_t>);
template ErrorMap error_map<double>(const mae::MAEParams<double>&, std::span<const std::uint8_t>);

std::vector<Entry> sorted_descending(const ErrorMap& map) {
  std::vector<Entry> out(map.e.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {i, map.e[i]};
  std::stable_sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.error > b.error; });
  return out;
}

SaliencyCurve::SaliencyCurve(const ErrorMap& map) : sorted_(sorted_descending(map)) {
  if (sorted_.empty()) throw InvalidArgument("saliency curve of an empty map");
  for (const auto& e : sorted_) total_ += e.error;
  ascending_.reserve(sorted_.size());
  for (auto it = sorted_.rbegin(); it != sorted_.rend(); ++it) ascending_.push_back(it->error);
}

std::vector<double> SaliencyCurve::xs() const {
  const std::size_t N = sorted_.size();
  std::vector<double> x(N + 1);
  for (std::size_t k = 0; k <= N; ++k) x[k] = static_cast<double>(k) / static_cast<double>(N);
  return x;
}

std::vector<double> SaliencyCurve::ys() const {
  const std::size_t N = sorted_.size();
  std::vector<double> y(N + 1, 0.0);
  if (total_ <= 0.0) return xs();
  double acc = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    acc += sorted_[k].error;
    y[k + 1] = acc / total_;
  }
  return y;
}

double SaliencyCurve::cdf(double value) const {
  const auto it = std::upper_bound(ascending_.begin(), ascending_.end(), value);
  return static_cast<double>(it - ascending_.begin()) / static_cast<double>(ascending_.size());
}

double SaliencyCurve::quantile(double p) const {
  const std::size_t N = ascending_.size();
  if (p <= 0.0) return ascending_.front();
  const double rank = std::ceil(std::min(p, 1.0) * static_cast<double>(N) - 1e-12);
  const std::size_t idx = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, N) - 1;
  return ascending_[idx];
}

double SaliencyCurve::absolute_lorenz(double x) const {
  const std::size_t N = ascending_.size();
  x = std::clamp(x, 0.0, 1.0);
  const double width = 1.0 / static_cast<double>(N);
  double acc = 0.0;
  const double full = std::floor(x * static_cast<double>(N));
  const std::size_t steps = std::min(N, static_cast<std::size_t>(full));
  for (std::size_t k = 0; k < steps; ++k) acc += ascending_[k] * width;
  if (steps < N) acc += ascending_[steps] * (x - static_cast<double>(steps) * width);
  return acc;
}

KneeRule parse_knee_rule(const std::string& name) {
  if (name == "mean_threshold") return KneeRule::mean_threshold;
  if (name == "argmin_slope") return KneeRule::argmin_slope;
  throw InvalidArgument("unknown knee rule '" + name + "'");
}

std::string to_string(KneeRule rule) {
  return rule == KneeRule::mean_threshold ? "mean_threshold" : "argmin_slope";
}

namespace {

Selection take_prefix(std::vector<Entry> sorted, std::size_t K, KneeRule rule) {
  Selection s;
  s.rule = rule;
  s.K = K;
  s.p_star = static_cast<double>(K) / static_cast<double>(sorted.size());
  sorted.resize(K);
  s.selected = std::move(sorted);
  return s;
}

}  // namespace

Selection dynamic_k_select(const ErrorMap& map, KneeRule rule) {
  map.validate();
  const std::size_t N = map.e.size();
  if (N == 0) throw InvalidArgument("selection on an empty map");
  auto sorted = sorted_descending(map);
  double total = 0.0;
  for (const auto& e : sorted) total += e.error;
  if (total <= 0.0) {
    auto s = take_prefix(std::move(sorted), 1, rule);
    s.degenerate = true;
    return s;
  }
  const double mean = total / static_cast<double>(N);
  std::size_t K = 0;
  if (rule == KneeRule::mean_threshold) {
    while (K < N && sorted[K].error / mean > 1.0 + kSlopeTolerance) ++K;
  } else {
    double best = std::abs(sorted[0].error / mean - 1.0);
    K = 1;
    for (std::size_t k = 1; k < N; ++k) {
      const double d = std::abs(sorted[k].error / mean - 1.0);
      if (d < best - kSlopeTolerance) {
        best = d;
        K = k + 1;
      }
    }
  }
  return take_prefix(std::move(sorted), std::max<std::size_t>(K, 1), rule);
}

Selection top_k_select(const ErrorMap& map, std::size_t K) {
  map.validate();
  if (K < 1 || K > map.e.size()) {
    throw InvalidArgument("top-K needs 1 <= K <= " + std::to_string(map.e.size()) + ", got " +
                          std::to_string(K));
  }
  return take_prefix(sorted_descending(map), K, KneeRule::mean_threshold);
}

std::size_t budget_for(int percent, std::size_t num_patches) {
  const std::size_t b = (static_cast<std::size_t>(percent) * num_patches + 50) / 100;
  return std::max<std::size_t>(1, b);
}

MrEstimate estimate_mr(std::span<const std::size_t> counts, std::size_t num_patches, double coverage) {
  if (counts.empty()) throw InvalidArgument("mr estimation needs at least one frame");
  const double need = std::ceil(coverage * static_cast<double>(counts.size()) - 1e-9);
  MrEstimate est;
  est.saturated = true;
  for (int pct = 5; pct <= 95; pct += 5) {
    const std::size_t B = budget_for(pct, num_patches);
    const auto ok = static_cast<double>(std::count_if(counts.begin(), counts.end(),
                                                      [B](std::size_t c) { return c <= B; }));
    est.mr_star_percent = pct;
    est.coverage_at_star = ok / static_cast<double>(counts.size());
    if (ok >= need) {
      est.saturated = false;
      break;
    }
  }
  for (int pct : {est.mr_star_percent - 5, est.mr_star_percent, est.mr_star_percent + 5}) {
    const int c = std::clamp(pct, 5, 95);
    if (std::find(est.candidates_percent.begin(), est.candidates_percent.end(), c) ==
        est.candidates_percent.end()) {
      est.candidates_percent.push_back(c);
    }
  }
  return est;
}

PadMode parse_pad_mode(const std::string& name) {
  if (name == "zero_pad") return PadMode::zero_pad;
  if (name == "trainable_pad") return PadMode::trainable_pad;
  if (name == "masked_attention") return PadMode::masked_attention;
  throw InvalidArgument("unknown pad mode '" + name + "'");
}

std::string to_string(PadMode mode) {
  switch (mode) {
    case PadMode::zero_pad: return "zero_pad";
    case PadMode::trainable_pad: return "trainable_pad";
    case PadMode::masked_attention: return "masked_attention";
  }
  return "?";
}

BudgetedSelection apply_budget(const Selection& selection, std::size_t budget, PadMode mode) {
  if (budget == 0) throw InvalidArgument("patch budget must be at least 1");
  BudgetedSelection out;
  out.mode = mode;
  out.real = std::min(budget, selection.selected.size());
  out.dropped = selection.selected.size() - out.real;
  out.slots.resize(budget);
  for (std::size_t s = 0; s < out.real; ++s) {
    out.slots[s] = {false, selection.selected[s].pos, selection.selected[s].error};
  }
  return out;
}

void write_error_csv(std::ostream& out, const ErrorMap& map) {
  char buf[40];
  for (std::size_t i = 0; i < map.P; ++i) {
    for (std::size_t j = 0; j < map.P; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace spirl::saliency
