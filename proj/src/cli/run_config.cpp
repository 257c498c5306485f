// SPDX-License-Identifier: Apache-2.0
#include "spirl/cli/run_config.hpp"

#include <fstream>
#include <set>

#include "spirl/common/error.hpp"
#include "spirl/env/external.hpp"

namespace spirl::cli {

using nlohmann::json;

namespace {

// Strict reader: every key must be consumed by a field or section.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw InvalidArgument("config: " + (path_.empty() ? std::string("top level") : path_) + " must be an object");
  }

  template <class T>
  void field(const char* key, T& value) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      decode(j_.at(key), value);
    } catch (const json::exception& e) {
      throw InvalidArgument("config: bad value for " + path_ + key + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("config: bad value for " + path_ + key + ": " + e.what());
    }
  }

  template <class F>
  void section(const char* key, F&& body) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    Reader sub(j_.at(key), path_ + key + ".");
    body(sub);
    sub.finish();
  }

  void skip(const char* key) { seen_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw InvalidArgument("config: unknown key " + path_ + item.key());
    }
  }

 private:
  template <class T>
  static void decode(const json& v, T& out) {
    out = v.get<T>();
  }
  static void decode(const json& v, saliency::KneeRule& out) { out = saliency::parse_knee_rule(v.get<std::string>()); }
  static void decode(const json& v, saliency::PadMode& out) { out = saliency::parse_pad_mode(v.get<std::string>()); }
  static void decode(const json& v, agent::Pooling& out) { out = agent::parse_pooling(v.get<std::string>()); }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <class T>
  void field(const char* key, const T& value) {
    j_[key] = encode(value);
  }

  template <class F>
  void section(const char* key, F&& body) {
    Writer sub(j_[key]);
    body(sub);
  }

  void skip(const char*) {}

 private:
  template <class T>
  static json encode(const T& v) {
    return json(v);
  }
  static json encode(saliency::KneeRule v) { return saliency::to_string(v); }
  static json encode(saliency::PadMode v) { return saliency::to_string(v); }
  static json encode(agent::Pooling v) { return agent::to_string(v); }

  json& j_;
};

template <class V>
void visit(V& v, RunConfig& c) {
  v.field("preset", c.preset);
  v.field("seed", c.seed);
  v.field("out_dir", c.out_dir);
  v.field("mae_checkpoint", c.mae_checkpoint);
  v.field("collect_frames", c.collect_frames);
  v.field("eval_episodes", c.eval_episodes);
  v.section("frame", [&](auto& s) {
    s.field("h", c.mae.frame.h);
    s.field("w", c.mae.frame.w);
    s.field("c", c.mae.frame.c);
    s.field("p", c.mae.frame.p);
  });
  v.section("mae", [&](auto& s) {
    s.field("enc_dim", c.mae.enc_dim);
    s.field("enc_depth", c.mae.enc_depth);
    s.field("enc_heads", c.mae.enc_heads);
    s.field("dec_dim", c.mae.dec_dim);
    s.field("dec_depth", c.mae.dec_depth);
    s.field("dec_heads", c.mae.dec_heads);
    s.field("mask_ratio", c.mae.mask_ratio);
    s.field("mlp_ratio", c.mae.mlp_ratio);
  });
  v.section("schedule", [&](auto& s) {
    s.field("epochs", c.schedule.epochs);
    s.field("warmup_epochs", c.schedule.warmup_epochs);
    s.field("batch_size", c.schedule.batch_size);
    s.field("base_lr", c.schedule.base_lr);
    s.field("weight_decay", c.schedule.weight_decay);
    s.field("beta1", c.schedule.beta1);
    s.field("beta2", c.schedule.beta2);
    s.field("seed", c.schedule.seed);
  });
  auto& a = c.agent;
  v.section("saliency", [&](auto& s) {
    s.field("knee_rule", a.knee_rule);
    s.field("mr_percent", a.mr_percent);
    s.field("pad_mode", a.agg.pad_mode);
    s.field("fixed_k", a.fixed_k);
  });
  v.section("agent", [&](auto& s) {
    s.field("pooling", a.agg.pooling);
    s.field("embed_dim", a.agg.dim);
    s.field("heads", a.agg.heads);
    s.field("mlp_ratio", a.agg.mlp_ratio);
    s.field("residual", a.agg.residual);
    s.field("hidden", a.q.hidden);
    s.field("gamma", a.gamma);
    s.field("n_step", a.n_step);
    s.field("lr", a.lr);
    s.field("adam_eps", a.adam_eps);
    s.field("batch", a.batch);
    s.field("min_replay", a.min_replay);
    s.field("steps_per_update", a.steps_per_update);
    s.field("target_sync", a.target_sync);
    s.field("grad_clip", a.grad_clip);
    s.field("capacity", a.replay.capacity);
    s.field("alpha", a.replay.alpha);
    s.field("priority_eps", a.replay.priority_eps);
    s.field("beta_start", a.beta_start);
    s.field("beta_steps", a.beta_steps);
    s.field("eps_start", a.eps_start);
    s.field("eps_end", a.eps_end);
    s.field("eps_fraction", a.eps_fraction);
    s.field("eval_epsilon", a.eval_epsilon);
    s.field("total_steps", a.total_steps);
    s.field("checkpoint_every", a.checkpoint_every);
    s.field("seed", a.seed);
  });
  v.section("env", [&](auto& s) {
    s.field("name", c.env.name);
    s.field("endpoint", c.env.endpoint);
    s.field("timeout_ms", c.env.timeout_ms);
    s.section("sprites", [&](auto& t) {
      auto& sp = c.env.sprites;
      t.field("size", sp.size);
      t.field("background_seed", sp.background_seed);
      t.field("sprite", sp.sprite);
      t.field("collectibles", sp.collectibles);
      t.field("hazards", sp.hazards);
      t.field("player_speed", sp.player_speed);
      t.field("max_object_speed", sp.max_object_speed);
      t.field("step_cap", sp.step_cap);
    });
    s.section("wrapper", [&](auto& t) {
      auto& w = c.env.wrapper;
      t.field("frame_skip", w.frame_skip);
      t.field("action_repeat", w.action_repeat);
      t.field("frame_stack", w.frame_stack);
      t.field("noop_max", w.noop_max);
      t.field("reward_clip", w.reward_clip);
      t.field("max_episode_frames", w.max_episode_frames);
      t.field("terminal_on_life_loss", w.terminal_on_life_loss);
    });
  });
}

}  // namespace

RunConfig RunConfig::preset_named(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "published") {
    c.mae = mae::MAEConfig::published();
    c.agent = agent::AgentConfig::regime("100K");
    c.env.sprites = env::SpritesConfig{};
    c.collect_frames = 50000;
  } else if (name == "desk") {
    c.mae = mae::MAEConfig::published();
    c.mae.frame = {48, 48, 3, 8};
    c.agent = agent::AgentConfig::regime("100K");
    c.env.sprites = env::SpritesConfig::toy();
    c.collect_frames = 2000;
  } else if (name == "desk-rl") {
    c.mae = mae::MAEConfig::published();
    c.mae.frame = {48, 48, 3, 8};
    c.mae.dec_depth = 1;
    c.collect_frames = 2000;
    c.env.sprites = env::SpritesConfig::toy();
    c.env.sprites.collectibles = 1;
    c.env.sprites.hazards = 1;
    c.env.sprites.player_speed = 2;
    c.env.sprites.max_object_speed = 1;
    c.env.sprites.step_cap = 400;
    auto& a = c.agent;
    a.total_steps = 20000;
    a.replay.capacity = 20000;
    a.beta_steps = 20000;
    a.steps_per_update = 1;
    a.min_replay = 1600;
    a.target_sync = 500;
    a.n_step = 5;
    a.lr = 2.5e-4;
    a.mr_percent = 25;
  } else {
    throw InvalidArgument("unknown preset: " + name + " (expected published, desk or desk-rl)");
  }
  c.resolve();
  return c;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  RunConfig c = preset_named(j.value("preset", std::string("published")));
  Reader r(j, "");
  visit(r, c);
  r.finish();
  c.resolve();
  return c;
}

json RunConfig::to_json() const {
  json j;
  RunConfig copy = *this;
  Writer w(j);
  visit(w, copy);
  return j;
}

void RunConfig::resolve() {
  mae.validate();
  agent.agg.in_dim = mae.enc_dim;
  agent.agg.grid = mae.frame.grid();
  agent.validate();
  env.wrapper.validate();
  if (env.name == "sprites") {
    env.sprites.validate();
    if (env.sprites.size != mae.frame.h || env.sprites.size != mae.frame.w || mae.frame.c != 3) {
      throw InvalidArgument("config: sprites frame size must match frame.h/frame.w with 3 channels");
    }
  } else if (env.name == "external") {
    if (env.endpoint.empty()) throw InvalidArgument("config: env.endpoint is required for external environments");
  } else {
    throw InvalidArgument("config: unknown env.name " + env.name);
  }
  if (collect_frames == 0 || eval_episodes == 0) throw InvalidArgument("config: collect_frames and eval_episodes must be positive");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config.to_json().dump(2) << "\n";
}

std::unique_ptr<env::EnvInterface> make_env(const EnvSettings& settings) {
  std::unique_ptr<env::EnvInterface> inner;
  if (settings.name == "sprites") {
    inner = std::make_unique<env::Sprites>(settings.sprites);
  } else if (settings.name == "external") {
    inner = std::make_unique<env::ExternalEnv>(
        env::connect_endpoint(settings.endpoint, std::chrono::milliseconds(settings.timeout_ms)));
  } else {
    throw InvalidArgument("unknown environment: " + settings.name);
  }
  return std::make_unique<env::Wrapper>(std::move(inner), settings.wrapper);
}

}  // namespace spirl::cli
