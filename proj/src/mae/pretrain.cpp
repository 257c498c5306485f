// SPDX-License-Identifier: Apache-2.0
#include "spirl/mae/pretrain.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "spirl/common/error.hpp"
#include "spirl/tensor/optim.hpp"

namespace spirl::mae {

using nlohmann::json;

double learning_rate(const PretrainSchedule& s, std::size_t step, std::size_t steps_per_epoch) {
  const double warm = static_cast<double>(s.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(s.epochs * steps_per_epoch);
  const double t = static_cast<double>(step);
  if (t < warm) return s.peak_lr() * t / warm;
  if (total <= warm) return s.peak_lr();
  const double progress = std::min(1.0, (t - warm) / (total - warm));
  return s.peak_lr() * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void channel_statistics(const FrameSet& frames, std::vector<double>& mean, std::vector<double>& std) {
  const std::size_t c = frames.c();
  std::vector<double> s(c, 0.0), s2(c, 0.0);
  const auto& raw = frames.raw();
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double v = raw[k] / 255.0;
    s[k % c] += v;
    s2[k % c] += v * v;
  }
  const double n = static_cast<double>(raw.size() / c);
  mean.assign(c, 0.0);
  std.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    mean[ch] = s[ch] / n;
    std[ch] = std::sqrt(std::max(0.0, s2[ch] / n - mean[ch] * mean[ch]));
  }
}

template <class T>
void make_batch(const FrameSet& frames, const FrameSpec& spec, std::span<const std::size_t> ids,
                std::vector<T>& patches, std::vector<T>& targets) {
  const std::size_t F = spec.pixels();
  patches.resize(ids.size() * F);
  targets.resize(ids.size() * F);
  for (std::size_t b = 0; b < ids.size(); ++b) {
    auto unit = to_unit<T>(frames.pixels(ids[b]));
    auto p = patchify<T>(unit, spec);
    auto t = normalize_patches<T>(p, spec.patch_dim());
    std::copy(p.begin(), p.end(), patches.begin() + b * F);
    std::copy(t.begin(), t.end(), targets.begin() + b * F);
  }
}

template void make_batch<float>(const FrameSet&, const FrameSpec&, std::span<const std::size_t>,
                                std::vector<float>&, std::vector<float>&);
template void make_batch<double>(const FrameSet&, const FrameSpec&, std::span<const std::size_t>,
                                 std::vector<double>&, std::vector<double>&);

namespace {

std::string epoch_file(std::size_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".spnt";
  return name.str();
}

void save_checkpoint(const std::filesystem::path& dir, std::size_t epoch,
                     const MAEParams<float>& params, const ad::AdamW<float>& opt,
                     const MAEConfig& config, const PretrainSchedule& schedule) {
  auto records = params.to_records();
  const auto& list = opt.params();
  for (std::size_t i = 0; i < list.size(); ++i) {
    records.push_back({"optim.m." + list[i].name, list[i].tensor.shape(), opt.first_moments()[i]});
    records.push_back({"optim.v." + list[i].name, list[i].tensor.shape(), opt.second_moments()[i]});
  }
  ad::save_snapshot(dir / epoch_file(epoch), records);

  json manifest;
  manifest["epoch"] = epoch;
  manifest["optimizer_step"] = opt.step_count();
  manifest["snapshot"] = epoch_file(epoch);
  manifest["trainable_scalars"] = ad::count_scalars(params.all_params());
  manifest["encoder_scalars"] = ad::count_scalars(params.encoder_params());
  manifest["decoder_scalars"] = ad::count_scalars(params.decoder_params());
  manifest["token_scalars"] = ad::count_scalars(params.token_params());
  manifest["frame"] = {{"h", config.frame.h}, {"w", config.frame.w}, {"c", config.frame.c}, {"p", config.frame.p}};
  manifest["seed"] = schedule.seed;
  std::ofstream(dir / "checkpoint.json") << manifest.dump(2) << "\n";
}

}  // namespace

PretrainResult pretrain(const FrameSet& frames, const MAEConfig& config,
                        const PretrainSchedule& schedule, const PretrainOptions& options) {
  config.validate();
  if (frames.empty()) throw InvalidArgument("pre-training needs a nonempty dataset");
  const FrameSpec& spec = config.frame;
  if (frames.h() != spec.h || frames.w() != spec.w || frames.c() != spec.c) {
    throw ShapeError("dataset frames do not match the configured frame size");
  }
  if (schedule.batch_size == 0 || schedule.epochs == 0) throw InvalidArgument("empty schedule");

  Rng init_rng(schedule.seed);
  PretrainResult result{MAEParams<float>::init(config, init_rng), {}};
  auto& params = result.params;
  channel_statistics(frames, params.channel_mean, params.channel_std);

  ad::AdamW<float> opt(params.all_params(), {schedule.peak_lr(), schedule.beta1, schedule.beta2, 1e-8,
                                             schedule.weight_decay});
  const std::size_t n = frames.size();
  const std::size_t steps_per_epoch = (n + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t N = spec.patches(), D = spec.patch_dim();

  std::size_t first_epoch = 1;
  const auto& dir = options.out_dir;
  if (!dir.empty()) std::filesystem::create_directories(dir);
  if (options.resume) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) throw IoError("no checkpoint.json to resume from in " + dir.string());
    const json manifest = json::parse(in);
    const auto records = ad::load_snapshot(dir / manifest.at("snapshot").get<std::string>());
    params.load_records(records);
    std::vector<std::vector<float>> m, v;
    for (const auto& p : opt.params()) {
      const auto* rm = ad::find_record(records, "optim.m." + p.name);
      const auto* rv = ad::find_record(records, "optim.v." + p.name);
      if (!rm || !rv) throw FormatError("checkpoint lacks optimizer state for " + p.name);
      m.push_back(rm->data);
      v.push_back(rv->data);
    }
    opt.restore(manifest.at("optimizer_step").get<std::uint64_t>(), std::move(m), std::move(v));
    first_epoch = manifest.at("epoch").get<std::size_t>() + 1;
  }

  std::ofstream csv;
  if (!dir.empty()) {
    csv.open(dir / "loss.csv", options.resume ? std::ios::app : std::ios::trunc);
    if (!options.resume) csv << "epoch,loss,lr\n";
  }

  const std::size_t last_epoch = options.stop_after ? std::min(options.stop_after, schedule.epochs)
                                                    : schedule.epochs;
  std::vector<float> patches, targets;
  for (std::size_t epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    Rng rng(splitmix64(schedule.seed ^ splitmix64(epoch)));
    auto order = rng.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * schedule.batch_size;
      const std::size_t B = std::min(schedule.batch_size, n - begin);
      std::span<const std::size_t> ids(order.data() + begin, B);
      make_batch(frames, spec, ids, patches, targets);
      std::vector<std::vector<std::size_t>> visible(B), masked(B);
      for (std::size_t b = 0; b < B; ++b) {
        auto split = random_mask(N, config.mask_ratio, rng);
        visible[b] = std::move(split.visible);
        masked[b] = std::move(split.masked);
      }
      const double lr = learning_rate(schedule, opt.step_count(), steps_per_epoch);
      opt.set_lr(lr);
      opt.zero_grad();
      ad::Tensorf x({B, N, D}, patches);
      ad::Tensorf y({B, N, D}, targets);
      auto loss = mae_loss(mae_forward(params, x, visible), y, masked);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite pre-training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(s) + ", lr " + std::to_string(lr));
      }
      loss.backward();
      opt.step();
      loss_sum += value * static_cast<double>(B);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(n), opt.lr(), opt.step_count()};
    result.curve.push_back(stats);
    if (!dir.empty()) {
      save_checkpoint(dir, epoch, params, opt, config, schedule);
      csv << epoch << "," << std::setprecision(9) << stats.mean_loss << "," << stats.last_lr << "\n";
      csv.flush();
    }
    if (options.on_epoch) options.on_epoch(stats);
  }
  return result;
}

}  // namespace spirl::mae
