// SPDX-License-Identifier: Apache-2.0
#include "spirl/agent/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "spirl/common/error.hpp"
#include "spirl/env/wrapper.hpp"
#include "spirl/mae/patches.hpp"
#include "spirl/tensor/ops.hpp"
#include "spirl/tensor/snapshot.hpp"

namespace spirl::agent {

using nlohmann::json;

AgentConfig AgentConfig::regime(const std::string& name) {
  AgentConfig c;
  if (name == "100K") {
    c.replay.capacity = 100000;
    c.steps_per_update = 1;
    c.total_steps = 100000;
    c.beta_steps = 100000;
  } else if (name == "400K") {
    c.replay.capacity = 400000;
    c.steps_per_update = 4;
    c.total_steps = 400000;
    c.beta_steps = 400000;
  } else {
    throw InvalidArgument("unknown regime: " + name + " (expected 100K or 400K)");
  }
  return c;
}

void AgentConfig::validate() const {
  if (mr_percent < 1 || mr_percent > 100) throw InvalidArgument("mr_percent must be in [1, 100]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must be in [0, 1]");
  if (n_step == 0 || batch == 0 || steps_per_update == 0 || target_sync == 0) {
    throw InvalidArgument("n_step, batch, steps_per_update and target_sync must be positive");
  }
  if (!(lr > 0.0) || !(grad_clip > 0.0)) throw InvalidArgument("lr and grad_clip must be positive");
  if (eps_end < 0.0 || eps_start > 1.0 || eval_epsilon < 0.0 || eval_epsilon > 1.0) {
    throw InvalidArgument("exploration rates must be in [0, 1]");
  }
  if (replay.capacity == 0 || total_steps == 0) throw InvalidArgument("capacity and total_steps must be positive");
}

double AgentConfig::epsilon(std::size_t step) const {
  const double span = eps_fraction * static_cast<double>(total_steps);
  if (span <= 0.0) return eps_end;
  const double f = std::min(1.0, static_cast<double>(step) / span);
  return eps_start + f * (eps_end - eps_start);
}

double AgentConfig::beta(std::size_t step) const {
  if (beta_steps == 0) return 1.0;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(beta_steps));
  return beta_start + f * (1.0 - beta_start);
}

std::string AgentConfig::describe() const {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "knee_rule=" << saliency::to_string(knee_rule) << "\nmr_percent=" << mr_percent << "\nfixed_k=" << fixed_k
    << "\nagg.in_dim=" << agg.in_dim << "\nagg.dim=" << agg.dim << "\nagg.heads=" << agg.heads
    << "\nagg.mlp_ratio=" << agg.mlp_ratio << "\nagg.residual=" << agg.residual << "\nagg.grid=" << agg.grid
    << "\nagg.pooling=" << to_string(agg.pooling) << "\nagg.pad_mode=" << saliency::to_string(agg.pad_mode)
    << "\nq.hidden=" << q.hidden << "\nq.actions=" << q.actions << "\ngamma=" << gamma << "\nn_step=" << n_step
    << "\nlr=" << lr << "\nadam_eps=" << adam_eps << "\nbatch=" << batch << "\nmin_replay=" << min_replay
    << "\nsteps_per_update=" << steps_per_update << "\ntarget_sync=" << target_sync << "\ngrad_clip=" << grad_clip
    << "\nreplay.capacity=" << replay.capacity << "\nreplay.alpha=" << replay.alpha
    << "\nreplay.priority_eps=" << replay.priority_eps << "\nbeta_start=" << beta_start
    << "\nbeta_steps=" << beta_steps << "\neps_start=" << eps_start << "\neps_end=" << eps_end
    << "\neps_fraction=" << eps_fraction << "\neval_epsilon=" << eval_epsilon << "\ntotal_steps=" << total_steps
    << "\ncheckpoint_every=" << checkpoint_every << "\nseed=" << seed << "\n";
  return o.str();
}

std::uint64_t AgentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Observer::Observer(const mae::MAEParams<float>& mae, const AgentConfig& config)
    : mae_(mae), rule_(config.knee_rule), fixed_k_(config.fixed_k), pad_(config.agg.pad_mode) {
  const auto& spec = mae.config.frame;
  const std::size_t N = spec.patches();
  if (config.agg.in_dim != mae.config.enc_dim) throw InvalidArgument("aggregator input width must equal the encoder width");
  if (config.agg.grid != spec.grid()) throw InvalidArgument("aggregator grid must equal the MAE patch grid");
  if (fixed_k_ > N) throw InvalidArgument("fixed_k exceeds the patch count");
  budget_ = saliency::budget_for(config.mr_percent, N);
}

SalientSet Observer::observe(const Frame& frame, std::size_t* selected) const {
  const auto& spec = mae_.config.frame;
  if (frame.h != spec.h || frame.w != spec.w || frame.c != spec.c) throw ShapeError("observer: frame geometry differs from the MAE");
  auto patches = mae::patchify<float>(mae::to_unit<float>(frame.pixels), spec);
  auto targets = mae::normalize_patches<float>(patches, spec.patch_dim());
  auto preds = mae::surroundings_predictions<float>(mae_, patches);
  auto map = saliency::error_map_from_predictions<float>(targets, preds, spec.grid(), spec.patch_dim());
  auto sel = fixed_k_ ? saliency::top_k_select(map, fixed_k_) : saliency::dynamic_k_select(map, rule_);
  if (selected) *selected = sel.K;
  auto budgeted = saliency::apply_budget(sel, budget_, pad_);
  auto emb = mae::patch_embeddings<float>(mae_, patches);
  const std::size_t d = mae_.config.enc_dim;
  SalientSet set;
  set.slots = budgeted.slots;
  set.embeddings.assign(set.slots.size() * d, 0.0f);
  for (std::size_t b = 0; b < set.slots.size(); ++b) {
    if (set.slots[b].pad) continue;
    std::copy_n(emb.begin() + set.slots[b].pos * d, d, set.embeddings.begin() + b * d);
  }
  return set;
}

namespace {

ad::AdamWConfig adam_for(const AgentConfig& c) {
  ad::AdamWConfig a;
  a.lr = c.lr;
  a.beta1 = 0.9;
  a.beta2 = 0.999;
  a.eps = c.adam_eps;
  a.weight_decay = 0.0;
  return a;
}

Network<float> make_network(const AgentConfig& config, std::size_t actions) {
  config.validate();
  QConfig q = config.q;
  q.actions = actions;
  Rng rng(splitmix64(config.seed ^ 0x4e4554ull));
  return Network<float>::init(config.agg, q, rng);
}

std::vector<const SalientSet*> flatten(std::span<const State* const> states) {
  std::vector<const SalientSet*> out;
  for (const State* s : states) {
    for (const auto& p : *s) out.push_back(p.get());
  }
  return out;
}

}  // namespace

Agent::Agent(const AgentConfig& config, std::size_t action_count)
    : config_(config),
      online_(make_network(config, action_count)),
      target_(online_.clone()),
      optim_(online_.params(), adam_for(config)) {
  config_.q.actions = action_count;
}

std::size_t greedy_action(std::span<const double> q) { return argmax_lowest(q); }

std::vector<double> Agent::q(const State& state) const {
  ad::NoGradGuard guard;
  std::array<const SalientSet*, kStackedFrames> sets;
  for (std::size_t k = 0; k < kStackedFrames; ++k) sets[k] = state[k].get();
  auto out = q_values(online_, std::span<const SalientSet* const>(sets));
  return {out.data().begin(), out.data().end()};
}

std::size_t Agent::act(const State& state, double eps, Rng& rng) const {
  if (eps < 0.0 || eps > 1.0) throw InvalidArgument("epsilon must be in [0, 1]");
  if (rng.uniform01() < eps) return rng.uniform_index(config_.q.actions);
  return greedy_action(q(state));
}

double Agent::update(PrioritizedReplay& replay, double beta, Rng& rng) {
  const std::size_t B = config_.batch;
  auto sample = replay.sample(B, beta, rng);
  std::vector<const State*> cur, nxt;
  std::vector<std::size_t> actions;
  for (std::size_t i : sample.indices) {
    cur.push_back(&replay.at(i).state);
    nxt.push_back(&replay.at(i).next);
    actions.push_back(replay.at(i).action);
  }
  std::vector<float> y(B);
  {
    ad::NoGradGuard guard;
    auto next_sets = flatten(nxt);
    auto q_online = q_values(online_, std::span<const SalientSet* const>(next_sets));
    auto q_target = q_values(target_, std::span<const SalientSet* const>(next_sets));
    const std::size_t A = config_.q.actions;
    for (std::size_t k = 0; k < B; ++k) {
      const Transition& t = replay.at(sample.indices[k]);
      double target = t.reward;
      if (!t.terminal) {
        const double boot = double_q_bootstrap<float>(q_online.data().subspan(k * A, A), q_target.data().subspan(k * A, A));
        target += std::pow(config_.gamma, static_cast<double>(t.steps)) * boot;
      }
      y[k] = static_cast<float>(target);
    }
  }
  auto cur_sets = flatten(cur);
  auto q_cur = q_values(online_, std::span<const SalientSet* const>(cur_sets));
  auto q_sa = ad::pick(q_cur, std::span<const std::size_t>(actions));
  auto td = ad::sub(q_sa, Tensor<float>({B}, y));
  std::vector<float> w(sample.weights.begin(), sample.weights.end());
  auto loss = ad::mean(ad::mul(ad::mul(td, td), Tensor<float>({B}, std::move(w))));
  const double value = loss.item();
  if (!std::isfinite(value)) {
    double worst = 0.0;
    for (float v : q_cur.data()) worst = std::max(worst, std::abs(static_cast<double>(v)));
    throw NumericError("non-finite TD loss at update " + std::to_string(updates_) + " (max |Q| " +
                       std::to_string(worst) + ")");
  }
  optim_.zero_grad();
  loss.backward();
  ad::clip_grad_norm(optim_.params(), config_.grad_clip);
  optim_.step();

  std::vector<double> priorities;
  for (float v : td.data()) priorities.push_back(std::abs(static_cast<double>(v)));
  replay.update(sample.indices, priorities);
  ++updates_;
  if (updates_ % config_.target_sync == 0) sync_target();
  return value;
}

void Agent::save(const std::filesystem::path& dir, std::size_t step) const {
  std::filesystem::create_directories(dir);
  auto records = ad::to_records(online_.params());
  for (auto r : ad::to_records(target_.params())) {
    r.name = "target." + r.name;
    records.push_back(std::move(r));
  }
  ad::save_snapshot(dir / "agent.spnt", records);
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_.hash()));
  json manifest;
  manifest["config_hash"] = hash;
  manifest["step"] = step;
  manifest["updates"] = updates_;
  manifest["actions"] = config_.q.actions;
  manifest["snapshot"] = "agent.spnt";
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Agent Agent::load(const std::filesystem::path& dir, const AgentConfig& config, std::size_t action_count) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  Agent agent(config, action_count);
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(agent.config_.hash()));
  if (manifest.value("config_hash", std::string()) != hash) {
    throw FormatError("checkpoint config hash " + manifest.value("config_hash", std::string("?")) +
                      " does not match the requested config " + hash);
  }
  auto records = ad::load_snapshot(dir / manifest.value("snapshot", std::string("agent.spnt")));
  ad::assign_from_records(agent.online_.params(), records);
  std::vector<ad::SnapshotRecord> target;
  for (const auto& r : records) {
    if (r.name.rfind("target.", 0) == 0) target.push_back({r.name.substr(7), r.shape, r.data});
  }
  ad::assign_from_records(agent.target_.params(), target);
  agent.updates_ = manifest.value("updates", std::uint64_t{0});
  return agent;
}

void write_log_header(std::ostream& out) { out << "step,episode,return,loss,epsilon,beta,K_t_mean\n"; }

void write_log_row(std::ostream& out, const EpisodeLog& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%s,%.6g,%.6g,%.6g\n", r.step, r.episode, r.ret,
                std::isnan(r.loss) ? "" : std::to_string(r.loss).c_str(), r.epsilon, r.beta, r.k_mean);
  out << buf;
}

TrainResult train(env::EnvInterface& env, const Observer& observer, Agent& agent, const TrainOptions& options) {
  const AgentConfig& cfg = agent.config();
  if (env.action_count() != cfg.q.actions) throw InvalidArgument("agent and environment disagree on the action count");
  PrioritizedReplay replay(cfg.replay);
  NStepWindow window(cfg.n_step, cfg.gamma);
  Rng episode_seeds(splitmix64(cfg.seed ^ 0x45504953ull));
  Rng act_rng(splitmix64(cfg.seed ^ 0x414354ull));
  Rng sample_rng(splitmix64(cfg.seed ^ 0x53414d50ull));

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "log.csv");
    if (!log) throw IoError("cannot write " + (options.out_dir / "log.csv").string());
    write_log_header(log);
  }

  TrainResult result;
  env::History<SetPtr> history(kStackedFrames);
  auto make_state = [&history] {
    State s;
    std::copy(history.items().begin(), history.items().end(), s.begin());
    return s;
  };
  std::size_t k_total = 0, k_frames = 0, selected = 0;
  auto begin_episode = [&] {
    auto first = std::make_shared<const SalientSet>(observer.observe(env.reset(episode_seeds.next_u64()), &selected));
    k_total = selected;
    k_frames = 1;
    history.reset(first);
  };
  begin_episode();
  State state = make_state();
  double ret = 0.0, loss_sum = 0.0;
  std::size_t loss_count = 0, episode = 0;

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    const std::size_t action = agent.act(state, cfg.epsilon(step - 1), act_rng);
    result.actions.push_back(action);
    auto r = env.step(action);
    ret += r.reward;
    history.push(std::make_shared<const SalientSet>(observer.observe(r.frame, &selected)));
    k_total += selected;
    ++k_frames;
    State next = make_state();
    for (auto& t : window.push(state, action, r.reward, next, r.done, r.info.truncated)) replay.push(std::move(t));
    state = next;

    if (step >= cfg.min_replay && step % cfg.steps_per_update == 0) {
      const double loss = agent.update(replay, cfg.beta(step), sample_rng);
      result.losses.push_back(loss);
      loss_sum += loss;
      ++loss_count;
    }
    if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0 && !options.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%08zu", step);
      agent.save(options.out_dir / name, step);
    }
    if (r.done) {
      EpisodeLog row;
      row.step = step;
      row.episode = episode++;
      row.ret = ret;
      row.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::numeric_limits<double>::quiet_NaN();
      row.epsilon = cfg.epsilon(step);
      row.beta = cfg.beta(step);
      row.k_mean = static_cast<double>(k_total) / static_cast<double>(k_frames);
      result.episodes.push_back(row);
      if (log.is_open()) {
        write_log_row(log, row);
        log.flush();
      }
      if (options.on_episode) options.on_episode(row);
      ret = loss_sum = 0.0;
      loss_count = 0;
      begin_episode();
      state = make_state();
    }
  }
  result.replay_size = replay.size();
  if (!options.out_dir.empty()) agent.save(options.out_dir / "final", cfg.total_steps);
  return result;
}

EvalStats summarize(std::vector<double> returns) {
  EvalStats s;
  s.returns = returns;
  if (returns.empty()) return s;
  const double n = static_cast<double>(returns.size());
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(var / n);
  std::sort(returns.begin(), returns.end());
  const std::size_t m = returns.size() / 2;
  s.median = returns.size() % 2 ? returns[m] : 0.5 * (returns[m - 1] + returns[m]);
  return s;
}

EvalStats evaluate(env::EnvInterface& env, const Observer& observer, const Agent& agent, std::size_t episodes,
                   std::uint64_t base_seed, double eps) {
  if (eps < 0.0) eps = agent.config().eval_epsilon;
  std::vector<double> returns;
  for (std::size_t i = 0; i < episodes; ++i) {
    const std::uint64_t seed = splitmix64(base_seed + i);
    Rng rng(seed ^ 0x4556414cull);
    env::History<SetPtr> history(kStackedFrames);
    history.reset(std::make_shared<const SalientSet>(observer.observe(env.reset(seed))));
    double ret = 0.0;
    for (;;) {
      State s;
      std::copy(history.items().begin(), history.items().end(), s.begin());
      auto r = env.step(agent.act(s, eps, rng));
      ret += r.reward;
      if (r.done) break;
      history.push(std::make_shared<const SalientSet>(observer.observe(r.frame)));
    }
    returns.push_back(ret);
  }
  return summarize(std::move(returns));
}

EvalStats evaluate_random(env::EnvInterface& env, std::size_t episodes, std::uint64_t base_seed) {
  std::vector<double> returns;
  for (std::size_t i = 0; i < episodes; ++i) {
    const std::uint64_t seed = splitmix64(base_seed + i);
    Rng rng(seed ^ 0x52414e44ull);
    env.reset(seed);
    double ret = 0.0;
    for (;;) {
      auto r = env.step(rng.uniform_index(env.action_count()));
      ret += r.reward;
      if (r.done) break;
    }
    returns.push_back(ret);
  }
  return summarize(std::move(returns));
}

std::vector<std::size_t> attended_prefix(std::span<const double> weights, double mass) {
  if (!(mass > 0.0 && mass <= 1.0)) throw InvalidArgument("attention mass must be in (0, 1]");
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double goal = mass * total * (1.0 - 1e-12);
  std::vector<std::size_t> out;
  double acc = 0.0;
  for (std::size_t i : order) {
    if (!out.empty() && acc >= goal) break;
    out.push_back(i);
    acc += weights[i];
  }
  return out;
}

std::vector<std::size_t> policy_attention(const Network<float>& net, const SalientSet& set, double mass) {
  if (net.agg.pooling != Pooling::cls) throw InvalidArgument("policy attention needs cls pooling");
  ad::NoGradGuard guard;
  AggregateOutput extra;
  const SalientSet* one[] = {&set};
  aggregate(net, std::span<const SalientSet* const>(one), &extra);
  return attended_prefix(extra.cls_attention, mass);
}

}  // namespace spirl::agent
