// SPDX-License-Identifier: Apache-2.0
#include "spirl/cli/commands.hpp"

#include <charconv>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "spirl/common/error.hpp"
#include "spirl/env/external.hpp"
#include "spirl/mae/patches.hpp"
#include "spirl/viz/ppm.hpp"

namespace spirl::cli {

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

namespace {

void prepare_dir(const fs::path& dir, const RunConfig& config) {
  fs::create_directories(dir);
  save_run_config(dir / "config.json", config);
}

Frame frame_from_pixels(const mae::FrameSpec& spec, std::vector<std::uint8_t> pixels) {
  Frame f;
  f.h = spec.h;
  f.w = spec.w;
  f.c = spec.c;
  f.pixels = std::move(pixels);
  return f;
}

long parse_int(const std::string& text, const char* what, long min) {
  long v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || v < min) {
    throw InvalidArgument(std::string(what) + " must be an integer >= " + std::to_string(min) + ": " + text);
  }
  return v;
}

}  // namespace

FrameSet run_collect(const RunConfig& config, const fs::path& out, std::ostream& log) {
  auto env = make_env(config.env);
  FrameSet frames = env::collect(*env, config.collect_frames, config.seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_frameset(out, frames);
  log << "collected " << frames.size() << " frames (" << frames.h() << "x" << frames.w() << "x"
      << frames.c() << ") -> " << out.string() << "\n";
  return frames;
}

mae::MAEParams<float> run_pretrain(const RunConfig& config, const fs::path& frames_path, const fs::path& out_dir,
                                   bool resume, std::size_t stop_after, std::ostream& log) {
  const FrameSet frames = load_frameset(frames_path);
  prepare_dir(out_dir, config);
  mae::PretrainOptions options;
  options.out_dir = out_dir;
  options.resume = resume;
  options.stop_after = stop_after;
  options.on_epoch = [&](const mae::EpochStats& s) {
    log << "epoch " << s.epoch << " loss " << std::setprecision(6) << s.mean_loss << " lr " << s.last_lr << "\n";
  };
  auto result = mae::pretrain(frames, config.mae, config.schedule, options);
  ad::save_snapshot(out_dir / "mae.spnt", result.params.to_records());
  log << "wrote " << (out_dir / "mae.spnt").string() << "\n";
  return std::move(result.params);
}

mae::MAEParams<float> load_checkpoint(const RunConfig& config, const fs::path& path) {
  if (path.empty()) throw InvalidArgument("an MAE checkpoint is required (--mae or mae_checkpoint)");
  return mae::load_mae<float>(path.string(), config.mae);
}

SaliencyReport run_saliency(const RunConfig& config, const mae::MAEParams<float>& mae, const Frame& frame,
                            const fs::path& out_dir, std::size_t factor, std::ostream& log) {
  const mae::FrameSpec& spec = config.mae.frame;
  if (frame.h != spec.h || frame.w != spec.w || frame.c != spec.c) {
    throw InvalidArgument("frame is " + std::to_string(frame.h) + "x" + std::to_string(frame.w) + "x" +
                          std::to_string(frame.c) + " but the config expects " + std::to_string(spec.h) + "x" +
                          std::to_string(spec.w) + "x" + std::to_string(spec.c));
  }
  SaliencyReport report;
  report.map = saliency::error_map(mae, std::span<const std::uint8_t>(frame.pixels));
  report.selection = config.agent.fixed_k > 0 ? saliency::top_k_select(report.map, config.agent.fixed_k)
                                              : saliency::dynamic_k_select(report.map, config.agent.knee_rule);

  fs::create_directories(out_dir);
  const std::size_t P = spec.grid();
  viz::write_ppm(out_dir / "frame.ppm", viz::upscale(viz::to_rgb(frame), factor));
  viz::write_ppm(out_dir / "error_heatmap.ppm", viz::heatmap(report.map, spec.p, factor));
  std::vector<std::size_t> chosen;
  for (const auto& e : report.selection.selected) chosen.push_back(e.pos);
  viz::write_ppm(out_dir / "selection.ppm", viz::selection_overlay(frame, P, chosen, factor));
  for (auto mode : {mae::ProbeMode::pe_plus_mask, mae::ProbeMode::pe_only, mae::ProbeMode::mask_only}) {
    const Frame probe = frame_from_pixels(spec, mae::decoder_probe(mae, mode));
    viz::write_ppm(out_dir / ("probe_" + mae::to_string(mode) + ".ppm"), viz::upscale(viz::to_rgb(probe), factor));
  }
  const auto patches = mae::patchify(std::span<const float>(mae::to_unit<float>(frame.pixels)), spec);
  const auto predictions = mae::surroundings_predictions(mae, std::span<const float>(patches));
  const Frame recon = frame_from_pixels(spec, mae::render_normalized(mae, std::span<const float>(predictions)));
  viz::write_ppm(out_dir / "surroundings_reconstruction.ppm", viz::upscale(viz::to_rgb(recon), factor));
  std::ofstream csv(out_dir / "error_map.csv");
  saliency::write_error_csv(csv, report.map);

  log << "K_t " << report.selection.selected.size() << " of " << report.map.size() << " (p* "
      << std::setprecision(4) << report.selection.p_star << ", rule " << saliency::to_string(report.selection.rule)
      << (report.selection.degenerate ? ", degenerate map" : "") << ")\n";
  return report;
}

saliency::MrEstimate run_mr_estimate(const RunConfig& config, const mae::MAEParams<float>& mae,
                                     const FrameSet& frames, std::size_t sample, std::ostream& log) {
  if (frames.size() == 0) throw InvalidArgument("mr-estimate needs at least one frame");
  const std::size_t n = std::min(sample == 0 ? frames.size() : sample, frames.size());
  Rng rng(config.seed ^ 0x4d52ull);
  std::vector<std::size_t> ids(frames.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  rng.shuffle(std::span<std::size_t>(ids));
  ids.resize(n);
  std::vector<std::size_t> counts;
  counts.reserve(n);
  for (std::size_t id : ids) {
    const auto map = saliency::error_map(mae, frames.pixels(id));
    counts.push_back(saliency::dynamic_k_select(map, config.agent.knee_rule).selected.size());
  }
  const auto est = saliency::estimate_mr(counts, config.mae.frame.patches());
  log << "MR* " << est.mr_star_percent << "% (coverage " << std::setprecision(4) << est.coverage_at_star
      << (est.saturated ? ", saturated" : "") << ") candidates";
  for (int c : est.candidates_percent) log << " " << c;
  log << " over " << n << " frames\n";
  return est;
}

agent::TrainResult run_train(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& out_dir,
                             std::ostream& log) {
  auto env = make_env(config.env);
  agent::Observer observer(mae, config.agent);
  agent::Agent learner(config.agent, env->action_count());
  agent::TrainOptions options;
  if (!out_dir.empty()) {
    prepare_dir(out_dir, config);
    options.out_dir = out_dir;
  }
  options.on_episode = [&](const agent::EpisodeLog& row) {
    if (row.episode % 10 == 0) {
      log << "step " << row.step << " episode " << row.episode << " return " << row.ret << " eps "
          << std::setprecision(3) << row.epsilon << " K " << row.k_mean << "\n";
    }
  };
  return agent::train(*env, observer, learner, options);
}

agent::EvalStats run_eval(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& agent_dir,
                          std::size_t episodes, std::ostream& log) {
  auto env = make_env(config.env);
  agent::Observer observer(mae, config.agent);
  const auto learner = agent::Agent::load(agent_dir, config.agent, env->action_count());
  const auto stats = agent::evaluate(*env, observer, learner, episodes);
  log << "eval over " << episodes << " episodes: mean " << stats.mean << " median " << stats.median << " std "
      << stats.std << "\n";
  return stats;
}

agent::EvalStats run_eval_random(const RunConfig& config, std::size_t episodes, std::ostream& log) {
  auto env = make_env(config.env);
  const auto stats = agent::evaluate_random(*env, episodes);
  log << "random policy over " << episodes << " episodes: mean " << stats.mean << " median " << stats.median
      << " std " << stats.std << "\n";
  return stats;
}

RunConfig with_ablation(const RunConfig& config, const std::string& axis, const std::string& value) {
  RunConfig c = config;
  auto& a = c.agent;
  if (axis == "knee_rule") {
    a.knee_rule = saliency::parse_knee_rule(value);
  } else if (axis == "pad_mode") {
    a.agg.pad_mode = saliency::parse_pad_mode(value);
  } else if (axis == "pooling") {
    a.agg.pooling = agent::parse_pooling(value);
  } else if (axis == "fixed_k") {
    a.fixed_k = static_cast<std::size_t>(parse_int(value, "fixed_k", 0));
  } else if (axis == "mr_percent") {
    a.mr_percent = static_cast<int>(parse_int(value, "mr_percent", 1));
  } else {
    throw InvalidArgument("unknown ablation axis: " + axis +
                          " (expected knee_rule, pad_mode, pooling, fixed_k or mr_percent)");
  }
  c.resolve();
  return c;
}

std::vector<AblationRow> run_ablate(const RunConfig& config, const mae::MAEParams<float>& mae,
                                    const std::string& axis, const std::vector<std::string>& values,
                                    std::size_t seeds, const fs::path& out_dir, std::ostream& log) {
  if (values.empty() || seeds == 0) throw InvalidArgument("ablate needs at least one value and one seed");
  std::vector<RunConfig> variants;
  for (const auto& v : values) variants.push_back(with_ablation(config, axis, v));  // validate all up front
  prepare_dir(out_dir, config);
  std::ofstream csv(out_dir / "ablation.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "ablation.csv").string());
  csv << "axis,value,seed,mean,median,std\n";
  std::vector<AblationRow> rows;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig c = variants[vi];
      c.agent.seed = config.agent.seed + s;
      const fs::path run_dir = out_dir / (axis + "_" + values[vi]) / ("seed_" + std::to_string(s));
      run_train(c, mae, run_dir, log);
      auto env = make_env(c.env);
      agent::Observer observer(mae, c.agent);
      const auto learner = agent::Agent::load(run_dir / "final", c.agent, env->action_count());
      AblationRow row{axis, values[vi], c.agent.seed, agent::evaluate(*env, observer, learner, c.eval_episodes)};
      csv << axis << "," << row.value << "," << row.seed << "," << row.stats.mean << "," << row.stats.median << ","
          << row.stats.std << "\n";
      csv.flush();
      log << axis << "=" << row.value << " seed " << row.seed << ": mean " << row.stats.mean << "\n";
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void run_attn_viz(const RunConfig& config, const mae::MAEParams<float>& mae, const fs::path& agent_dir,
                  const fs::path& out_dir, std::size_t steps, double mass, std::ostream& log) {
  if (config.agent.agg.pooling != agent::Pooling::cls) {
    throw InvalidArgument("attn-viz needs cls pooling; average pooling has no attention readout");
  }
  auto env = make_env(config.env);
  agent::Observer observer(mae, config.agent);
  const auto learner = agent::Agent::load(agent_dir, config.agent, env->action_count());
  fs::create_directories(out_dir);
  const std::size_t P = config.mae.frame.grid();
  const std::uint64_t seed = splitmix64(config.seed + 1000003);
  Rng rng(seed);
  env::History<agent::SetPtr> history(agent::kStackedFrames);
  Frame frame = env->reset(seed);
  history.reset(std::make_shared<const agent::SalientSet>(observer.observe(frame)));
  std::ofstream csv(out_dir / "attention.csv");
  csv << "step,action,selected,attended\n";
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& latest = *history.items().back();
    std::vector<std::size_t> selected, attended;
    for (const auto& slot : latest.slots) {
      if (!slot.pad) selected.push_back(slot.pos);
    }
    for (std::size_t idx : agent::policy_attention(learner.online(), latest, mass)) {
      if (!latest.slots[idx].pad) attended.push_back(latest.slots[idx].pos);
    }
    std::ostringstream name;
    name << "step_" << std::setw(4) << std::setfill('0') << t << ".ppm";
    viz::write_ppm(out_dir / name.str(), viz::attention_overlay(frame, P, selected, attended, 4));

    agent::State s;
    std::copy(history.items().begin(), history.items().end(), s.begin());
    const std::size_t action = learner.act(s, config.agent.eval_epsilon, rng);
    csv << t << "," << action << "," << selected.size() << "," << attended.size() << "\n";
    auto r = env->step(action);
    if (r.done) {
      log << "episode ended after " << t + 1 << " steps\n";
      return;
    }
    frame = r.frame;
    history.push(std::make_shared<const agent::SalientSet>(observer.observe(frame)));
  }
  log << "wrote " << steps << " overlays to " << out_dir.string() << "\n";
}

void run_serve(const RunConfig& config, const std::string& endpoint, std::size_t sessions, std::ostream& log) {
  env::Listener listener(endpoint);
  log << "serving sprites on " << endpoint << "\n" << std::flush;
  for (std::size_t i = 0; sessions == 0 || i < sessions; ++i) {
    auto transport = listener.accept(std::chrono::milliseconds(config.env.timeout_ms));
    env::Sprites game(config.env.sprites);
    try {
      env::serve_env(transport, game);
    } catch (const Error& e) {
      log << "session " << i << " ended: " << e.what() << "\n";
    }
  }
}

}  // namespace spirl::cli
