// SPDX-License-Identifier: Apache-2.0
// JSON run configuration shared by every subcommand.
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "spirl/agent/agent.hpp"
#include "spirl/env/sprites.hpp"
#include "spirl/env/wrapper.hpp"
#include "spirl/mae/pretrain.hpp"

namespace spirl::cli {

struct EnvSettings {
  std::string name = "sprites";  // "sprites" or "external"
  std::string endpoint;          // external only: unix:/path or tcp:host:port
  std::size_t timeout_ms = 10000;
  env::SpritesConfig sprites;
  env::WrapperConfig wrapper;
};

struct RunConfig {
  std::string preset = "published";
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string mae_checkpoint;  // recorded by pretrain consumers
  std::size_t collect_frames = 50000;
  std::size_t eval_episodes = 50;

  mae::MAEConfig mae;  // includes the frame geometry
  mae::PretrainSchedule schedule;
  agent::AgentConfig agent;  // includes the saliency knobs
  EnvSettings env;

  // "published": 96x96 frames, the published MAE and agent settings (100K regime).
  // "desk": 48x48 Sprites with the published model widths, 2,000 frames.
  // "desk-rl": the reduced end-to-end RL setting (48x48, 1-layer decoder).
  static RunConfig preset_named(const std::string& name);

  // Starts from the "preset" key (default "published") and overrides every key
  // present. Unknown keys throw InvalidArgument.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Fills derived fields (aggregator width/grid) and checks consistency.
  void resolve();
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

// Sprites or an external peer, wrapped with the preprocessing settings.
std::unique_ptr<env::EnvInterface> make_env(const EnvSettings& settings);

}  // namespace spirl::cli
