// SPDX-License-Identifier: Apache-2.0
// Subcommand implementations behind the spirl tool.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spirl/agent/agent.hpp"
#include "spirl/cli/run_config.hpp"
#include "spirl/saliency/saliency.hpp"

namespace spirl::cli {

namespace fs = std::filesystem;

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitProtocol = 5,
};

// Maps the active exception to an exit code and prints it to `err`.
int report_exception(std::ostream& err);

// Uniform-random frames from the configured environment.
FrameSet run_collect(const RunConfig& config, const fs::path& out, std::ostream& log);

// Writes epoch checkpoints, loss.csv, mae.spnt and config.json into out_dir.
mae::MAEParams<float> run_pretrain(const RunConfig& config, const fs::path& frames, const fs::path& out_dir,
                                   bool resume, std::size_t stop_after, std::ostream& log);

mae::MAEParams<float> load_checkpoint(const RunConfig& config, const fs::path& path);

struct SaliencyReport {
  saliency::ErrorMap map;
  saliency::Selection selection;
};

// Error heatmap, selection overlay, probes, surroundings reconstruction and
// error_map.csv for one frame.
SaliencyReport run_saliency(const RunConfig& config, const mae::MAEParams<float>& mae, const Frame& frame,
                            const fs::path& out_dir, std::size_t factor, std::ostream& log);

saliency::MrEstimate run_mr_estimate(const RunConfig& config, const mae::MAEParams<float>& mae,
                                     const FrameSet& frames, std::size_t sample, std::ostream& log);

agent::TrainResult run_train(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& out_dir,
                             std::ostream& log);

agent::EvalStats run_eval(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& agent_dir,
                          std::size_t episodes, std::ostream& log);
agent::EvalStats run_eval_random(const RunConfig& config, std::size_t episodes, std::ostream& log);

// Applies `axis=value` to a copy of the config. Axes: knee_rule, pad_mode,
// pooling, fixed_k, mr_percent.
RunConfig with_ablation(const RunConfig& config, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string axis, value;
  std::uint64_t seed = 0;
  agent::EvalStats stats;
};

// Trains and evaluates every value for `seeds` seeds; writes ablation.csv.
std::vector<AblationRow> run_ablate(const RunConfig& config, const mae::MAEParams<float>& mae,
                                    const std::string& axis, const std::vector<std::string>& values,
                                    std::size_t seeds, const fs::path& out_dir, std::ostream& log);

// Greedy rollout writing per-step overlays of selected and attended patches.
void run_attn_viz(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& agent_dir,
                  const fs::path& out_dir, std::size_t steps, double mass, std::ostream& log);

// Serves the configured Sprites game over the wire protocol.
void run_serve(const RunConfig& config, const std::string& endpoint, std::size_t sessions, std::ostream& log);

}  // namespace spirl::cli
