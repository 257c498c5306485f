// SPDX-License-Identifier: Apache-2.0
// spirl: collect, pretrain, saliency, mr-estimate, train, eval, ablate,
// attn-viz, config and serve.
#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "spirl/cli/commands.hpp"
#include "spirl/common/error.hpp"
#include "spirl/viz/ppm.hpp"

namespace {

using namespace spirl;
using namespace spirl::cli;

struct Shared {
  std::string config_path;
  std::string preset;
  std::string out;
  std::string mae_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_shared(CLI::App* cmd, Shared& s, bool needs_mae) {
  cmd->add_option("-c,--config", s.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--preset", s.preset, "Base preset when no config is given (published, desk, desk-rl)");
  cmd->add_option("--seed", s.seed, "Overrides the top-level seed");
  if (needs_mae) cmd->add_option("--mae", s.mae_path, "MAE checkpoint (.spnt); defaults to mae_checkpoint");
}

RunConfig resolve(const Shared& s, const CLI::App* cmd) {
  RunConfig c;
  if (!s.config_path.empty()) {
    c = load_run_config(s.config_path);
    if (!s.preset.empty()) throw InvalidArgument("--preset and --config are exclusive");
  } else {
    c = RunConfig::preset_named(s.preset.empty() ? "published" : s.preset);
  }
  if (cmd->count("--seed")) c.seed = s.seed;
  if (!s.mae_path.empty()) c.mae_checkpoint = s.mae_path;
  return c;
}

std::vector<std::string> split_csv(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency-driven patch selection for pixel-based reinforcement learning"};
  app.require_subcommand(1);
  Shared s;

  auto* collect = app.add_subcommand("collect", "Record uniform-random frames to an SPFR file");
  add_shared(collect, s, false);
  std::size_t frame_count = 0;
  collect->add_option("-o,--out", s.out, "Output frame set")->required();
  collect->add_option("-n,--frames", frame_count, "Number of frames (default from config)");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the masked autoencoder");
  add_shared(pretrain, s, false);
  std::string frames_path;
  bool resume = false;
  std::size_t stop_after = 0;
  pretrain->add_option("--frames", frames_path, "SPFR frame set")->required()->check(CLI::ExistingFile);
  pretrain->add_option("-o,--out", s.out, "Output directory")->required();
  pretrain->add_flag("--resume", resume, "Continue from the last epoch checkpoint in --out");
  pretrain->add_option("--stop-after", stop_after, "Stop after this many total epochs");

  auto* sal = app.add_subcommand("saliency", "Error map, selection and probe renderings for one frame");
  add_shared(sal, s, true);
  std::string ppm_path;
  std::size_t frame_index = 0;
  std::size_t factor = 4;
  std::string rule_name;
  sal->add_option("--frame", ppm_path, "Input frame: a .ppm image or an SPFR frame set")
      ->required()
      ->check(CLI::ExistingFile);
  sal->add_option("--index", frame_index, "Frame index when --frame is a frame set");
  sal->add_option("-o,--out", s.out, "Output directory")->required();
  sal->add_option("--scale", factor, "Upscaling factor for images")->check(CLI::Range(1, 64));
  sal->add_option("--knee-rule", rule_name, "mean_threshold or argmin_slope");

  auto* mr = app.add_subcommand("mr-estimate", "Estimate the patch budget ratio from a frame sample");
  add_shared(mr, s, true);
  std::size_t sample = 500;
  mr->add_option("--frames", frames_path, "SPFR frame set")->required()->check(CLI::ExistingFile);
  mr->add_option("--sample", sample, "Frames to sample (0 = all)");

  auto* train = app.add_subcommand("train", "Train the agent");
  add_shared(train, s, true);
  std::string regime;
  train->add_option("-o,--out", s.out, "Output directory")->required();
  train->add_option("--regime", regime, "Budget preset for the agent: 100K or 400K");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained agent");
  add_shared(eval, s, true);
  std::string agent_dir;
  std::size_t episodes = 0;
  bool random_policy = false;
  eval->add_option("--agent", agent_dir, "Agent checkpoint directory");
  eval->add_option("--episodes", episodes, "Episodes (default from config)");
  eval->add_flag("--random", random_policy, "Evaluate the uniform-random policy instead");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one configuration axis");
  add_shared(ablate, s, true);
  std::string axis, values;
  std::size_t seeds = 3;
  ablate->add_option("--axis", axis, "knee_rule, pad_mode, pooling, fixed_k or mr_percent")->required();
  ablate->add_option("--values", values, "Comma-separated values")->required();
  ablate->add_option("--seeds", seeds, "Seeds per value");
  ablate->add_option("-o,--out", s.out, "Output directory")->required();

  auto* attn = app.add_subcommand("attn-viz", "Selected and attended patches along a greedy rollout");
  add_shared(attn, s, true);
  std::size_t steps = 32;
  double mass = 0.6;
  attn->add_option("--agent", agent_dir, "Agent checkpoint directory")->required();
  attn->add_option("-o,--out", s.out, "Output directory")->required();
  attn->add_option("--steps", steps, "Rollout length");
  attn->add_option("--mass", mass, "Attention mass of the attended set")->check(CLI::Range(0.0, 1.0));

  auto* show = app.add_subcommand("config", "Print the fully resolved run configuration as JSON");
  add_shared(show, s, false);

  auto* serve = app.add_subcommand("serve", "Serve the Sprites game over the environment protocol");
  add_shared(serve, s, false);
  std::string endpoint;
  std::size_t sessions = 0;
  serve->add_option("--endpoint", endpoint, "unix:/path or tcp:host:port")->required();
  serve->add_option("--sessions", sessions, "Stop after this many sessions (0 = forever)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    auto& log = std::cout;
    if (collect->parsed()) {
      RunConfig c = resolve(s, collect);
      if (frame_count > 0) c.collect_frames = frame_count;
      run_collect(c, s.out, log);
    } else if (pretrain->parsed()) {
      const RunConfig c = resolve(s, pretrain);
      run_pretrain(c, frames_path, s.out, resume, stop_after, log);
    } else if (sal->parsed()) {
      RunConfig c = resolve(s, sal);
      if (!rule_name.empty()) c.agent.knee_rule = saliency::parse_knee_rule(rule_name);
      const auto mae = load_checkpoint(c, c.mae_checkpoint);
      Frame frame;
      if (std::filesystem::path(ppm_path).extension() == ".ppm") {
        frame = viz::read_ppm(ppm_path);
      } else {
        const FrameSet set = load_frameset(ppm_path);
        if (frame_index >= set.size()) throw InvalidArgument("--index out of range");
        frame = set.frame(frame_index);
      }
      run_saliency(c, mae, frame, s.out, factor, log);
    } else if (mr->parsed()) {
      const RunConfig c = resolve(s, mr);
      const auto mae = load_checkpoint(c, c.mae_checkpoint);
      run_mr_estimate(c, mae, load_frameset(frames_path), sample, log);
    } else if (train->parsed()) {
      RunConfig c = resolve(s, train);
      if (!regime.empty()) {
        const auto preset = agent::AgentConfig::regime(regime);
        auto& a = c.agent;
        a.total_steps = preset.total_steps;
        a.replay.capacity = preset.replay.capacity;
        a.beta_steps = preset.beta_steps;
        a.steps_per_update = preset.steps_per_update;
        c.resolve();
      }
      const auto mae = load_checkpoint(c, c.mae_checkpoint);
      run_train(c, mae, s.out, log);
    } else if (eval->parsed()) {
      const RunConfig c = resolve(s, eval);
      const std::size_t n = episodes > 0 ? episodes : c.eval_episodes;
      if (random_policy) {
        run_eval_random(c, n, log);
      } else {
        if (agent_dir.empty()) throw InvalidArgument("--agent is required unless --random is given");
        run_eval(c, load_checkpoint(c, c.mae_checkpoint), agent_dir, n, log);
      }
    } else if (ablate->parsed()) {
      const RunConfig c = resolve(s, ablate);
      run_ablate(c, load_checkpoint(c, c.mae_checkpoint), axis, split_csv(values), seeds, s.out, log);
    } else if (attn->parsed()) {
      const RunConfig c = resolve(s, attn);
      run_attn_viz(c, load_checkpoint(c, c.mae_checkpoint), agent_dir, s.out, steps, mass, log);
    } else if (show->parsed()) {
      log << resolve(s, show).to_json().dump(2) << "\n";
    } else if (serve->parsed()) {
      run_serve(resolve(s, serve), endpoint, sessions, log);
    }
  } catch (...) {
    return report_exception(std::cerr);
  }
  return kExitOk;
}
