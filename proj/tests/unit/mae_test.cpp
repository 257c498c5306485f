// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "golden.hpp"
#include "gradcheck.hpp"
#include "spirl/common/error.hpp"
#include "spirl/common/frames.hpp"
#include "spirl/mae/model.hpp"
#include "spirl/mae/pretrain.hpp"
#include "spirl/tensor/ops.hpp"

namespace spirl::mae {
namespace {

using ad::Tensord;

std::vector<std::uint8_t> random_bytes(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(rng.uniform_index(256));
  return v;
}

MAEConfig toy24() {
  MAEConfig c;
  c.frame = {24, 24, 3, 8};
  c.enc_dim = 16;
  c.enc_depth = 2;
  c.enc_heads = 2;
  c.dec_dim = 32;
  c.dec_depth = 2;
  c.dec_heads = 4;
  return c;
}

TEST(Patchify, PublishedGeometry) {
  FrameSpec spec{96, 96, 3, 8};
  EXPECT_EQ(spec.grid(), 12u);
  EXPECT_EQ(spec.patches(), 144u);
  EXPECT_EQ(spec.patch_dim(), 192u);
  FrameSpec toy{48, 48, 3, 8};
  EXPECT_EQ(toy.patches(), 36u);
  EXPECT_THROW((FrameSpec{50, 50, 3, 8}.validate()), InvalidArgument);
  EXPECT_THROW((FrameSpec{48, 40, 3, 8}.validate()), InvalidArgument);
}

TEST(Patchify, LayoutAndExactRoundTrip) {
  Rng rng(1);
  FrameSpec spec{96, 96, 3, 8};
  auto pixels = random_bytes(spec.pixels(), rng);
  auto patches = patchify<std::uint8_t>(pixels, spec);
  ASSERT_EQ(patches.size(), 144u * 192u);
  // Patch (i=2, j=5), in-patch pixel (y=3, x=6), channel 1.
  const std::size_t k = (2 * 12 + 5) * 192 + (3 * 8 + 6) * 3 + 1;
  EXPECT_EQ(patches[k], pixels[((2 * 8 + 3) * 96 + 5 * 8 + 6) * 3 + 1]);
  EXPECT_EQ(unpatchify<std::uint8_t>(patches, spec), pixels);

  std::vector<float> f(spec.pixels());
  for (auto& v : f) v = static_cast<float>(rng.normal());
  EXPECT_EQ(unpatchify<float>(patchify<float>(f, spec), spec), f);
  EXPECT_THROW(patchify<float>(std::span<const float>(f.data(), 10), spec), ShapeError);
}

TEST(PositionalTable, OriginChannels) {
  auto pe = sinusoidal_pe_2d(12, 64);
  for (std::size_t c = 0; c < 64; c += 2) {
    EXPECT_EQ(pe[c], 0.0);
    EXPECT_EQ(pe[c + 1], 1.0);
  }
  EXPECT_EQ(sinusoidal_pe_2d(12, 64), pe);
  EXPECT_THROW(sinusoidal_pe_2d(4, 6), InvalidArgument);
}

TEST(PositionalTable, RowsDistinctUpTo64) {
  for (std::size_t d : {8u, 16u, 64u}) {
    auto pe = sinusoidal_pe_2d(64, d);
    std::set<std::vector<double>> rows;
    for (std::size_t r = 0; r < 64 * 64; ++r) {
      rows.insert(std::vector<double>(pe.begin() + r * d, pe.begin() + (r + 1) * d));
    }
    EXPECT_EQ(rows.size(), 64u * 64u) << "d=" << d;
  }
}

TEST(PositionalTable, ChannelFormula) {
  auto pe = sinusoidal_pe_2d(5, 16);
  // Position (3, 4): row half uses i = 3, column half j = 4; w_k = 1e4^(-k/4).
  const double* row = pe.data() + (3 * 5 + 4) * 16;
  for (int k = 0; k < 4; ++k) {
    const double w = std::pow(10000.0, -k / 4.0);
    EXPECT_DOUBLE_EQ(row[2 * k], std::sin(3 * w));
    EXPECT_DOUBLE_EQ(row[2 * k + 1], std::cos(3 * w));
    EXPECT_DOUBLE_EQ(row[8 + 2 * k], std::sin(4 * w));
    EXPECT_DOUBLE_EQ(row[8 + 2 * k + 1], std::cos(4 * w));
  }
}

TEST(RandomMask, CountsAndPartition) {
  Rng rng(2);
  auto s = random_mask(144, 0.75, rng);
  EXPECT_EQ(s.visible.size(), 36u);
  EXPECT_EQ(s.masked.size(), 108u);
  std::vector<std::size_t> all = s.visible;
  all.insert(all.end(), s.masked.begin(), s.masked.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 144; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(random_mask(144, 0.0, rng).visible.size(), 144u);
  EXPECT_THROW(random_mask(10, 1.0, rng), InvalidArgument);
}

TEST(RandomMask, SeedSevenMatchesFisherYatesAndGolden) {
  Rng rng(7);
  auto s = random_mask(16, 0.75, rng);
  // Independent Fisher-Yates from the same engine.
  Rng oracle(7);
  std::vector<std::size_t> ids(16);
  for (std::size_t i = 0; i < 16; ++i) ids[i] = i;
  for (std::size_t i = 15; i >= 1; --i) std::swap(ids[i], ids[oracle.uniform_index(i + 1)]);
  EXPECT_EQ(s.visible, std::vector<std::size_t>(ids.begin(), ids.begin() + 4));
  spirl::testing::expect_golden("random_mask_seed7",
                                std::vector<double>(s.visible.begin(), s.visible.end()), 0.0);
}

TEST(NormalizePatch, Examples) {
  std::vector<double> constant(12, 0.4);
  for (double v : normalize_patch<double>(constant).values) EXPECT_EQ(v, 0.0);
  std::vector<double> two{0, 2, 0, 2};
  auto n = normalize_patch<double>(two);
  EXPECT_DOUBLE_EQ(n.mean, 1.0);
  EXPECT_DOUBLE_EQ(n.std, 1.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(n.values[i], i % 2 ? 1.0 : -1.0, 2e-6);
}

TEST(NormalizePatch, StatisticsAndInverse) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> patch(192);
    for (auto& v : patch) v = rng.uniform01();
    auto n = normalize_patch<double>(patch);
    double mu = 0, var = 0;
    for (double v : n.values) mu += v;
    mu /= 192;
    for (double v : n.values) var += (v - mu) * (v - mu);
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_NEAR(std::sqrt(var / 192), 1.0, 1e-4);
    for (std::size_t i = 0; i < 192; ++i) {
      EXPECT_NEAR(n.values[i] * (n.std + kPatchNormEps) + n.mean, patch[i], 1e-5);
    }
  }
}

TEST(MAEParams, PublishedParameterCounts) {
  Rng rng(4);
  auto p = MAEParams<float>::init(MAEConfig::published(), rng);
  EXPECT_EQ(ad::count_scalars(p.encoder_params()), 162432u);
  EXPECT_EQ(ad::count_scalars(p.decoder_params()), 628160u);
  EXPECT_EQ(ad::count_scalars(p.token_params()), 192u);
  EXPECT_EQ(ad::count_scalars(p.all_params()), 790784u);
}

class ToyModel : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(5);
    params = MAEParams<double>::init(toy24(), rng, 0.2);
    const auto spec = params.config.frame;
    frame.resize(spec.pixels());
    for (auto& v : frame) v = rng.uniform01();
    patches = patchify<double>(frame, spec);
  }
  Tensord batch(const std::vector<double>& p) const { return Tensord({1, 9, 192}, p); }
  MAEParams<double> params;
  std::vector<double> frame, patches;
};

TEST_F(ToyModel, OutputShapeIndependentOfMask) {
  ad::NoGradGuard ng;
  for (std::vector<std::size_t> vis : {std::vector<std::size_t>{0}, {1, 4, 8}, {0, 1, 2, 3, 4, 5, 6, 7, 8}}) {
    auto y = mae_forward(params, batch(patches), {vis});
    EXPECT_EQ(y.shape(), (ad::Shape{1, 9, 192}));
    EXPECT_TRUE(y.all_finite());
  }
}

TEST_F(ToyModel, MaskedContentDoesNotLeak) {
  ad::NoGradGuard ng;
  std::vector<std::size_t> vis{0, 2, 4, 7};
  auto altered = patches;
  for (std::size_t k = 0; k < 192; ++k) {
    altered[3 * 192 + k] = 1.0 - altered[3 * 192 + k];
    altered[8 * 192 + k] = 0.5;
  }
  auto a = mae_forward(params, batch(patches), {vis});
  auto b = mae_forward(params, batch(altered), {vis});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST_F(ToyModel, BatchedAndPaddedItemsMatchSingles) {
  ad::NoGradGuard ng;
  std::vector<std::vector<std::size_t>> vis{{0, 2, 4, 7}, {5}, {1, 3}};
  std::vector<double> three;
  for (int b = 0; b < 3; ++b) three.insert(three.end(), patches.begin(), patches.end());
  auto joint = mae_forward(params, Tensord({3, 9, 192}, three), vis);
  for (std::size_t b = 0; b < 3; ++b) {
    auto single = mae_forward(params, batch(patches), {vis[b]});
    for (std::size_t i = 0; i < single.numel(); ++i) {
      EXPECT_NEAR(joint.data()[b * single.numel() + i], single.data()[i], 1e-12);
    }
  }
}

TEST_F(ToyModel, FullyVisibleGolden) {
  ad::NoGradGuard ng;
  auto y = mae_forward(params, batch(patches), {{0, 1, 2, 3, 4, 5, 6, 7, 8}});
  std::vector<double> head(y.data().begin(), y.data().begin() + 64);
  spirl::testing::expect_golden("mae_full_visible_toy24", head, 1e-10);
}

TEST_F(ToyModel, LossExamples) {
  auto targets = normalize_patches<double>(patches, 192);
  Tensord t({1, 9, 192}, targets);
  EXPECT_EQ(mae_loss(Tensord({1, 9, 192}, targets), t, {{1, 5}}).item(), 0.0);

  std::vector<double> pm(9 * 192, 0.0);
  for (std::size_t k = 0; k < 192; ++k) pm[4 * 192 + k] = k % 2 ? 1.0 : -1.0;
  EXPECT_NEAR(mae_loss(Tensord({1, 9, 192}, 0.0), Tensord({1, 9, 192}, pm), {{4}}).item(), 1.0, 1e-12);

  // Changing predictions at visible positions leaves the loss unchanged.
  std::vector<double> pred(9 * 192);
  Rng rng(6);
  for (auto& v : pred) v = rng.normal();
  const double base = mae_loss(Tensord({1, 9, 192}, pred), t, {{1, 5, 6}}).item();
  for (std::size_t k = 0; k < 192; ++k) pred[0 * 192 + k] += 3.0;
  EXPECT_EQ(mae_loss(Tensord({1, 9, 192}, pred), t, {{1, 5, 6}}).item(), base);
  EXPECT_THROW(mae_loss(t, t, {{}}), InvalidArgument);
}

TEST_F(ToyModel, LossAveragesPerFrameThenOverBatch) {
  Rng rng(7);
  std::vector<double> a(2 * 9 * 192), b(2 * 9 * 192);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  std::vector<std::vector<std::size_t>> masked{{0, 1, 2}, {5}};
  double expect = 0;
  for (std::size_t f = 0; f < 2; ++f) {
    double s = 0;
    for (std::size_t pos : masked[f]) {
      for (std::size_t k = 0; k < 192; ++k) {
        const double d = a[(f * 9 + pos) * 192 + k] - b[(f * 9 + pos) * 192 + k];
        s += d * d;
      }
    }
    expect += s / (masked[f].size() * 192) / 2;
  }
  EXPECT_NEAR(mae_loss(Tensord({2, 9, 192}, a), Tensord({2, 9, 192}, b), masked).item(), expect, 1e-12);
}

TEST_F(ToyModel, GradientMatchesFiniteDifferences) {
  auto targets = Tensord({1, 9, 192}, normalize_patches<double>(patches, 192));
  std::vector<std::vector<std::size_t>> vis{{0, 4, 8}}, msk{{1, 2, 3, 5, 6, 7}};
  std::vector<Tensord> inputs;
  for (auto& np : params.all_params()) inputs.push_back(np.tensor);
  auto r = spirl::testing::grad_check(
      inputs, [&] { return mae_loss(mae_forward(params, batch(patches), vis), targets, msk); }, 1e-4,
      100, 8);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Surroundings, NeighbourCounts) {
  EXPECT_EQ(surroundings(12, {0, 0}).size(), 3u);
  EXPECT_EQ(surroundings(12, {0, 5}).size(), 5u);
  EXPECT_EQ(surroundings(12, {11, 3}).size(), 5u);
  EXPECT_EQ(surroundings(12, {4, 7}).size(), 8u);
  EXPECT_EQ(surroundings(3, {1, 1}), (std::vector<std::size_t>{0, 1, 2, 3, 5, 6, 7, 8}));
  EXPECT_THROW(surroundings(3, {3, 0}), InvalidArgument);
}

class ToyModel48 : public ::testing::Test {
 protected:
  void SetUp() override {
    MAEConfig c = toy24();
    c.frame = {48, 48, 3, 8};
    Rng rng(9);
    params = MAEParams<double>::init(c, rng, 0.2);
    std::vector<double> f(c.frame.pixels());
    for (auto& v : f) v = rng.uniform01();
    patches = patchify<double>(f, c.frame);
  }
  MAEParams<double> params;
  std::vector<double> patches;
};

TEST_F(ToyModel48, SurroundingsPredictionIgnoresDistantPatches) {
  const GridPos center{2, 3};
  const auto base = reconstruct_from_surroundings<double>(params, patches, center);
  auto altered = patches;
  const auto neigh = surroundings(6, center);
  for (std::size_t pos = 0; pos < 36; ++pos) {
    if (std::find(neigh.begin(), neigh.end(), pos) != neigh.end()) continue;
    for (std::size_t k = 0; k < 192; ++k) altered[pos * 192 + k] = 0.9 - 0.5 * altered[pos * 192 + k];
  }
  EXPECT_EQ(reconstruct_from_surroundings<double>(params, altered, center), base);
  // A neighbour does matter.
  altered[neigh[0] * 192] += 0.5;
  EXPECT_NE(reconstruct_from_surroundings<double>(params, altered, center), base);
}

TEST_F(ToyModel48, BatchedSurroundingsMatchSingles) {
  for (std::size_t chunk : {0u, 7u}) {
    auto all = surroundings_predictions<double>(params, patches, chunk);
    for (std::size_t pos : {0u, 5u, 14u, 35u}) {
      auto one = reconstruct_from_surroundings<double>(params, patches, {pos / 6, pos % 6});
      for (std::size_t k = 0; k < 192; ++k) EXPECT_NEAR(all[pos * 192 + k], one[k], 1e-12);
    }
  }
}

TEST_F(ToyModel48, SurroundingsGolden) {
  auto y = reconstruct_from_surroundings<double>(params, patches, {1, 4});
  spirl::testing::expect_golden("surroundings_toy48",
                                std::vector<double>(y.begin(), y.begin() + 48), 1e-10);
}

TEST(DecoderProbe, ModesEmitFramesAndGoldenBytes) {
  MAEConfig c = toy24();
  c.frame = {48, 48, 3, 8};
  Rng rng(10);
  auto params = MAEParams<float>::init(c, rng);
  std::string all;
  for (auto mode : {ProbeMode::pe_plus_mask, ProbeMode::pe_only, ProbeMode::mask_only}) {
    auto px = decoder_probe(params, mode);
    EXPECT_EQ(px.size(), 48u * 48u * 3u);
    all.append(px.begin(), px.end());
  }
  spirl::testing::expect_golden_bytes("decoder_probe_untrained.bin", all);
  EXPECT_EQ(parse_probe_mode("pe_only"), ProbeMode::pe_only);
  EXPECT_THROW(parse_probe_mode("pe"), InvalidArgument);
}

TEST(Schedule, WarmupAndCosine) {
  PretrainSchedule s;
  EXPECT_DOUBLE_EQ(s.peak_lr(), 2.5e-4);
  const std::size_t spe = 32;
  EXPECT_EQ(learning_rate(s, 0, spe), 0.0);
  EXPECT_DOUBLE_EQ(learning_rate(s, 5 * spe, spe), 2.5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(s, 80, spe), 2.5e-4 * 80 / 160);
  EXPECT_NEAR(learning_rate(s, 50 * spe, spe), 0.0, 1e-20);
  const std::size_t mid = 5 * spe + (45 * spe) / 2;
  EXPECT_NEAR(learning_rate(s, mid, spe), 1.25e-4, 1e-12);
  for (std::size_t t = 5 * spe; t < 50 * spe; ++t) {
    EXPECT_LE(learning_rate(s, t + 1, spe), learning_rate(s, t, spe));
  }
}

FrameSet textured_frames(std::size_t count, std::uint64_t seed) {
  FrameSet set(48, 48, 3);
  Rng rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    Frame f(48, 48);
    for (std::size_t y = 0; y < 48; ++y) {
      for (std::size_t x = 0; x < 48; ++x) {
        const bool check = ((x / 2) + (y / 2)) % 2;
        f.at(y, x, 0) = static_cast<std::uint8_t>(check ? 200 : 60);
        f.at(y, x, 1) = static_cast<std::uint8_t>(4 * x);
        f.at(y, x, 2) = static_cast<std::uint8_t>(rng.uniform_index(40));
      }
    }
    set.push_back(f);
  }
  return set;
}

MAEConfig small48() {
  MAEConfig c = toy24();
  c.frame = {48, 48, 3, 8};
  return c;
}

// Every patch carries the same texture, so the per-epoch loss is not
// dominated by which patches the random mask happens to hide.
FrameSet tiled_frame() {
  FrameSet set(48, 48, 3);
  Frame f(48, 48);
  Rng rng(11);
  std::vector<std::uint8_t> tile(8 * 8 * 3);
  for (auto& v : tile) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  for (std::size_t y = 0; y < 48; ++y) {
    for (std::size_t x = 0; x < 48; ++x) {
      for (std::size_t c = 0; c < 3; ++c) f.at(y, x, c) = tile[((y % 8) * 8 + x % 8) * 3 + c];
    }
  }
  set.push_back(f);
  return set;
}

TEST(Pretrain, SingleFrameLossDecreases) {
  auto frames = tiled_frame();
  for (std::uint64_t seed : {3u, 4u, 5u, 6u}) {
    PretrainSchedule s;
    s.epochs = 10;
    s.warmup_epochs = 0;
    s.base_lr = 4e-3;  // peak 1e-3 with batch 64
    s.seed = seed;
    auto result = pretrain(frames, small48(), s);
    ASSERT_EQ(result.curve.size(), 10u);
    for (std::size_t e = 1; e < 10; ++e) {
      EXPECT_LT(result.curve[e].mean_loss, result.curve[e - 1].mean_loss)
          << "seed " << seed << " epoch " << e + 1;
    }
  }
}

TEST(Pretrain, DeterministicCheckpointsAndResume) {
  namespace fs = std::filesystem;
  auto frames = textured_frames(10, 12);
  PretrainSchedule s;
  s.epochs = 3;
  s.warmup_epochs = 1;
  s.batch_size = 4;
  s.seed = 21;
  const fs::path root = fs::temp_directory_path() / "spirl_pretrain_test";
  fs::remove_all(root);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  PretrainOptions a, b;
  a.out_dir = root / "a";
  b.out_dir = root / "b";
  pretrain(frames, small48(), s, a);
  pretrain(frames, small48(), s, b);
  for (int e = 1; e <= 3; ++e) {
    const std::string name = "epoch_00" + std::to_string(e) + ".spnt";
    EXPECT_EQ(read(root / "a" / name), read(root / "b" / name)) << name;
  }
  // Stop after one epoch, then resume for the rest.
  PretrainOptions first;
  first.out_dir = root / "c";
  first.stop_after = 1;
  pretrain(frames, small48(), s, first);
  PretrainOptions rest;
  rest.out_dir = root / "c";
  rest.resume = true;
  pretrain(frames, small48(), s, rest);
  EXPECT_EQ(read(root / "a" / "epoch_003.spnt"), read(root / "c" / "epoch_003.spnt"));
  EXPECT_EQ(read(root / "a" / "loss.csv"), read(root / "c" / "loss.csv"));

  auto loaded = load_mae<float>((root / "a" / "epoch_003.spnt").string(), small48());
  EXPECT_EQ(loaded.channel_mean.size(), 3u);
  fs::remove_all(root);
}

TEST(FrameSetFile, RoundTripAndTruncation) {
  auto frames = textured_frames(3, 13);
  std::stringstream buf;
  write_frameset(buf, frames);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "SPFR");
  EXPECT_EQ(bytes.size(), 4u + 4 + 8 + 12 + 3 * 48 * 48 * 3);
  auto back = read_frameset(buf);
  EXPECT_EQ(back.raw(), frames.raw());
  EXPECT_EQ(back.size(), 3u);
  std::stringstream cut(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_frameset(cut), FormatError);
}

}  // namespace
}  // namespace spirl::mae
