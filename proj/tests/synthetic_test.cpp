#include <gtest/gtest.h>

#include <fstream>

#include "revisit/errors.hpp"
#include "revisit/fusion.hpp"
#include "revisit/synthetic.hpp"
#include "test_util.hpp"

using namespace revisit;
using revisit::testing::scratch_dir;

namespace {

SyntheticParams small_params() {
  SyntheticParams p;
  p.n_locations = 20;
  p.height = 32;
  p.width = 32;
  return p;
}

}  // namespace

TEST(SyntheticLocation, SameSeedIsBitIdentical) {
  const auto p = small_params();
  auto a = generate_location(p, 42);
  auto b = generate_location(p, 42);
  EXPECT_TRUE(torch::equal(a.stack.data, b.stack.data));
  EXPECT_TRUE(torch::equal(a.truth.values, b.truth.values));
  auto c = generate_location(p, 43);
  EXPECT_FALSE(torch::equal(a.stack.data, c.stack.data));
}

TEST(SyntheticLocation, NoiseFreeRevisitsAreIdentical) {
  auto p = small_params();
  p.occlusion_prob = 0;
  p.brightness_jitter_std = 0;
  p.pixel_noise_std = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto loc = generate_location(p, s);
    for (int t = 1; t < p.revisits; ++t) EXPECT_TRUE(torch::equal(loc.stack.data[t], loc.stack.data[0]));
    EXPECT_TRUE(torch::equal(loc.stack.data[0], loc.clean_scene));
    EXPECT_TRUE(torch::equal(median_composite(loc.stack).data[0], loc.stack.data[0]));
  }
}

TEST(SyntheticLocation, EveryTargetPixelVisibleSomewhere) {
  const SyntheticParams p;  // defaults
  for (std::uint64_t s = 0; s < 60; ++s) {
    auto loc = generate_location(p, s);
    auto occ = loc.occlusion.accessor<bool, 3>();
    auto truth = loc.truth.values.accessor<float, 2>();
    auto data = loc.stack.data.accessor<float, 4>();
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        bool any_clear = false;
        for (int t = 0; t < p.revisits; ++t) {
          any_clear = any_clear || !occ[t][y][x];
          if (occ[t][y][x]) {  // occluded pixels carry the bright cloud value
            EXPECT_GT(data[t][0][y][x], 2500.0f);
          }
        }
        if (truth[y][x] > 0) {
          ASSERT_TRUE(any_clear) << "seed " << s << " pixel " << y << "," << x;
        }
      }
  }
}

TEST(SyntheticLocation, MedianRecoversMinorityOccludedPixels) {
  for (int T : {3, 4, 5}) {
    auto p = small_params();
    p.revisits = T;
    p.occlusion_prob = 0.6;
    p.brightness_jitter_std = 0;
    p.pixel_noise_std = 0;
    const int majority = (T + 1) / 2;
    size_t checked = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto loc = generate_location(p, s);
      auto median = median_composite(loc.stack).data[0];
      auto counts = loc.occlusion.to(torch::kInt).sum(0).to(torch::kInt);
      auto m = median.accessor<float, 3>();
      auto clean = loc.clean_scene.accessor<float, 3>();
      auto n = counts.accessor<int, 2>();
      for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) {
          if (n[y][x] >= majority) continue;
          ++checked;
          for (int c = 0; c < p.channels; ++c) ASSERT_EQ(m[c][y][x], clean[c][y][x]) << "T=" << T;
        }
    }
    EXPECT_GT(checked, 0u);
  }
}

TEST(SyntheticLocation, NegativesHaveEmptyMask) {
  const auto p = small_params();
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto loc = generate_location(p, s, true);
    EXPECT_EQ(loc.truth.values.count_nonzero().item<int64_t>(), 0);
    EXPECT_TRUE(loc.negative);
  }
}

TEST(SyntheticLocation, UnsatisfiableVisibilityRaises) {
  auto p = small_params();
  p.revisits = 1;
  p.occlusion_prob = 0.99;
  p.cloud_target_bias = 1.0;
  p.occlusion_radius_range = {40.0, 41.0};
  p.max_resamples = 3;
  EXPECT_THROW(
      {
        for (std::uint64_t s = 0; s < 50; ++s) generate_location(p, s);
      },
      GenerationError);
}

TEST(SyntheticParams, ValidationAndStrictJson) {
  SyntheticParams p;
  p.occlusion_prob = 1.0;
  EXPECT_THROW(p.validate(), InvalidSpecError);
  p = SyntheticParams{};
  p.negative_fraction = 1.0;
  EXPECT_THROW(p.validate(), InvalidSpecError);
  p = SyntheticParams{};
  p.target_fraction_range = {0.2, 0.1};
  EXPECT_THROW(p.validate(), InvalidSpecError);

  auto j = SyntheticParams{}.to_json();
  auto back = SyntheticParams::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_THROW(SyntheticParams::from_json(json{{"n_locatons", 3}}), ConfigError);
  EXPECT_EQ(SyntheticParams::from_json(json{{"n_locations", 3}}).n_locations, 3);
}

TEST(SyntheticDataset, CountsSplitsAndNegatives) {
  auto dir = scratch_dir("synth-counts");
  auto p = small_params();
  p.n_locations = 100;
  p.negative_fraction = 0.2;
  p.height = p.width = 16;
  p.occlusion_radius_range = {2.0, 4.0};
  auto m = generate_dataset(p, dir);
  EXPECT_EQ(m.locations.size(), 100u);
  EXPECT_EQ(m.count(Split::Train), 80u);
  EXPECT_EQ(m.count(Split::Test), 20u);
  EXPECT_EQ(m.negative_count(), 20u);
  for (const auto& e : m.locations) {
    EXPECT_EQ(e.revisit_count(), 4);
    for (const auto& ref : e.revisits) EXPECT_TRUE(std::filesystem::exists(m.resolve(ref)));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "params.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  for (const auto& e : m.locations) {
    if (!e.negative) continue;
    auto [stack, truth] = load_location(m, e, 0, 0);
    EXPECT_EQ(truth.values.count_nonzero().item<int64_t>(), 0);
  }
  std::filesystem::remove_all(dir);
}

TEST(SyntheticDataset, RegenerationGivesIdenticalHash) {
  auto a = scratch_dir("synth-hash-a");
  auto b = scratch_dir("synth-hash-b");
  auto p = small_params();
  p.n_locations = 12;
  auto ma = generate_dataset(p, a);
  auto mb = generate_dataset(p, b);
  EXPECT_EQ(manifest_hash(ma), manifest_hash(mb));
  p.seed = 1;
  auto c = scratch_dir("synth-hash-c");
  EXPECT_NE(manifest_hash(generate_dataset(p, c)), manifest_hash(ma));
  for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}
