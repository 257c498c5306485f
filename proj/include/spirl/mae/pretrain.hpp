// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "spirl/common/frames.hpp"
#include "spirl/mae/model.hpp"

namespace spirl::mae {

struct PretrainSchedule {
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;  // scaled by batch_size / 256
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::uint64_t seed = 0;

  double peak_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
};

// Linear warmup from 0 to peak over the warmup epochs, then cosine decay to 0
// at the end of the last epoch.
double learning_rate(const PretrainSchedule& schedule, std::size_t step, std::size_t steps_per_epoch);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double last_lr = 0.0;
  std::uint64_t step = 0;  // optimizer steps taken so far
};

struct PretrainOptions {
  // Per-epoch checkpoints, loss.csv and checkpoint.json go here when set.
  std::filesystem::path out_dir;
  // Continue from the checkpoint recorded in out_dir/checkpoint.json.
  bool resume = false;
  // Stop after this many total epochs (0 = schedule.epochs). The schedule
  // itself still spans schedule.epochs.
  std::size_t stop_after = 0;
  std::function<void(const EpochStats&)> on_epoch;
};

struct PretrainResult {
  MAEParams<float> params;
  std::vector<EpochStats> curve;
};

// Per-channel mean and population std of a frame set in [0, 1] units.
void channel_statistics(const FrameSet& frames, std::vector<double>& mean, std::vector<double>& std);

PretrainResult pretrain(const FrameSet& frames, const MAEConfig& config,
                        const PretrainSchedule& schedule, const PretrainOptions& options = {});

// Batch tensors for a set of frame ids: pixels [B, N, D] in [0, 1] and the
// per-patch normalized targets.
template <class T>
void make_batch(const FrameSet& frames, const FrameSpec& spec, std::span<const std::size_t> ids,
                std::vector<T>& patches, std::vector<T>& targets);

}  // namespace spirl::mae
