#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <set>

#include "revisit/array_io.hpp"
#include "revisit/dataset.hpp"
#include "revisit/errors.hpp"
#include "test_util.hpp"

using namespace revisit;
using revisit::testing::make_stack;
using revisit::testing::random_stack;
using revisit::testing::scratch_dir;
using revisit::testing::normalize_scalar;

namespace {

// Linear-interpolated percentile over a fully sorted copy.
double sorted_percentile(std::vector<float> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (static_cast<double>(v[hi]) - v[lo]);
}

DatasetManifest write_manifest(const std::filesystem::path& root, const std::vector<torch::Tensor>& stacks,
                               const std::vector<Split>& splits) {
  DatasetManifest m;
  m.root = root;
  m.task = TruthKind::BinaryMask;
  m.bands = revisit::testing::numbered_bands(stacks.front().size(1));
  m.height = stacks.front().size(2);
  m.width = stacks.front().size(3);
  for (size_t i = 0; i < stacks.size(); ++i) {
    auto stack = make_stack(stacks[i], m.bands, "loc" + std::to_string(i));
    GroundTruth truth{TruthKind::BinaryMask, torch::zeros({m.height, m.width})};
    m.locations.push_back(write_location(root, stack, truth, splits[i], true));
  }
  m.save(root / "manifest.json");
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// normalize

TEST(Normalize, WorkedExamples) {
  EXPECT_NEAR(normalize_scalar(2000, NormalizationSpec::constant_scale(4000)), 0.5, 1e-12);
  EXPECT_NEAR(normalize_scalar(9000, NormalizationSpec::constant_scale(4000)), 1.0, 1e-12);
  EXPECT_NEAR(normalize_scalar(2000, NormalizationSpec::standardize({1500}, {500})), 1.0, 1e-12);
  EXPECT_NEAR(normalize_scalar(2100, NormalizationSpec::percentile({100}, {4100})), 0.5, 1e-12);
}

TEST(Normalize, ClipsBelowAndAbove) {
  EXPECT_EQ(normalize_scalar(-50, NormalizationSpec::constant_scale(4000)), 0.0);
  EXPECT_EQ(normalize_scalar(50, NormalizationSpec::percentile({100}, {4100})), 0.0);
  EXPECT_EQ(normalize_scalar(5000, NormalizationSpec::percentile({100}, {4100})), 1.0);
  // standardization is unbounded
  EXPECT_NEAR(normalize_scalar(-1000, NormalizationSpec::standardize({1500}, {500})), -5.0, 1e-12);
}

TEST(Normalize, InvalidSpecsRaise) {
  auto stack = random_stack(1, 1, 1, 2, 2);
  EXPECT_THROW(normalize(stack, NormalizationSpec::standardize({0}, {0})), InvalidSpecError);
  EXPECT_THROW(normalize(stack, NormalizationSpec::standardize({0}, {-1})), InvalidSpecError);
  EXPECT_THROW(normalize(stack, NormalizationSpec::percentile({5}, {5})), InvalidSpecError);
  EXPECT_THROW(normalize(stack, NormalizationSpec::constant_scale(0)), InvalidSpecError);
  EXPECT_THROW(normalize(stack, NormalizationSpec::constant_scale(-3)), InvalidSpecError);
  // per-band vectors must match the band count
  EXPECT_THROW(normalize(random_stack(1, 1, 2, 2, 2), NormalizationSpec::standardize({0}, {1})), Error);
}

TEST(Normalize, BoundedModesStayInUnitInterval) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-20000, 20000);
  auto data = torch::empty({3, 2, 8, 8}, torch::kFloat64);
  for (int64_t i = 0; i < data.numel(); ++i) data.data_ptr<double>()[i] = u(rng);
  auto stack = make_stack(data);
  for (const auto& spec :
       {NormalizationSpec::constant_scale(4000), NormalizationSpec::percentile({-300, 10}, {1200, 5000})}) {
    auto out = normalize(stack, spec).data;
    EXPECT_GE(out.min().item<double>(), 0.0);
    EXPECT_LE(out.max().item<double>(), 1.0);
  }
}

TEST(Normalize, CommutesWithPixelPermutation) {
  auto stack = random_stack(3, 2, 3, 6, 6, torch::kFloat64);
  stack.data = stack.data * 5000;
  auto spec = NormalizationSpec::standardize({100, 200, 300}, {10, 20, 30});
  auto perm = torch::randperm(36, torch::TensorOptions().dtype(torch::kLong));
  auto permute = [&](const torch::Tensor& x) { return x.flatten(2).index_select(2, perm).view(x.sizes()); };
  auto a = normalize(make_stack(permute(stack.data)), spec).data;
  auto b = permute(normalize(stack, spec).data);
  EXPECT_TRUE(torch::equal(a, b));
}

TEST(Normalize, PreservesShapeAndDtype) {
  auto stack = random_stack(2, 4, 3, 5, 7);
  auto out = normalize(stack, NormalizationSpec::constant_scale());
  EXPECT_EQ(out.data.sizes(), stack.data.sizes());
  EXPECT_EQ(out.data.scalar_type(), torch::kFloat32);
  EXPECT_EQ(out.band_names, stack.band_names);
}

// ---------------------------------------------------------------------------
// fit_normalization

TEST(FitNormalization, ConstantDatasetIsDegenerateForStandardize) {
  auto root = scratch_dir("fit-constant");
  auto m = write_manifest(root, {torch::full({2, 2, 4, 4}, 7.0f), torch::full({2, 2, 4, 4}, 7.0f)},
                          {Split::Train, Split::Test});
  EXPECT_THROW(fit_normalization(m, NormalizationMode::Standardize, 8, 0), InvalidSpecError);
  std::filesystem::remove_all(root);
}

TEST(FitNormalization, PercentilesMatchBruteForce) {
  auto root = scratch_dir("fit-percentile");
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  std::vector<torch::Tensor> stacks;
  for (int i = 0; i < 5; ++i) {
    auto t = torch::empty({3, 1, 8, 8});
    for (int64_t k = 0; k < t.numel(); ++k) t.data_ptr<float>()[k] = coin(rng) ? 10.0f : 0.0f;
    stacks.push_back(t);
  }
  auto m = write_manifest(root, stacks, {Split::Train, Split::Train, Split::Train, Split::Train, Split::Test});
  auto spec = fit_normalization(m, NormalizationMode::PercentileNormalize, 100, 0);
  std::vector<float> pixels;
  for (int i = 0; i < 4; ++i) pixels.insert(pixels.end(), stacks[i].data_ptr<float>(),
                                            stacks[i].data_ptr<float>() + stacks[i].numel());
  EXPECT_EQ(spec.p_low.at(0), sorted_percentile(pixels, 0.01));
  EXPECT_EQ(spec.p_high.at(0), sorted_percentile(pixels, 0.99));
  EXPECT_EQ(spec.p_low.at(0), 0.0);
  EXPECT_EQ(spec.p_high.at(0), 10.0);
  std::filesystem::remove_all(root);
}

TEST(FitNormalization, StandardizeUsesTrainOnly) {
  auto root = scratch_dir("fit-train-only");
  auto m = write_manifest(root, {torch::full({1, 1, 2, 2}, 2.0f), torch::full({1, 1, 2, 2}, 4.0f),
                                 torch::full({1, 1, 2, 2}, 1000.0f)},
                          {Split::Train, Split::Train, Split::Test});
  auto spec = fit_normalization(m, NormalizationMode::Standardize, 10, 0);
  EXPECT_NEAR(spec.mean.at(0), 3.0, 1e-12);
  EXPECT_NEAR(spec.stddev.at(0), 1.0, 1e-12);
  auto again = fit_normalization(m, NormalizationMode::Standardize, 10, 0);
  EXPECT_EQ(spec.mean, again.mean);
  std::filesystem::remove_all(root);
}

TEST(FitNormalization, ConstantModeCarriesConstant) {
  auto root = scratch_dir("fit-const-mode");
  auto m = write_manifest(root, {torch::rand({1, 2, 2, 2})}, {Split::Train});
  auto spec = fit_normalization(m, NormalizationMode::ConstantScale, 1, 0, 1234.5);
  EXPECT_EQ(spec.mode, NormalizationMode::ConstantScale);
  EXPECT_EQ(spec.constant, 1234.5);
  std::filesystem::remove_all(root);
}

TEST(FitNormalization, EmptyTrainSplitRaises) {
  auto root = scratch_dir("fit-empty");
  auto m = write_manifest(root, {torch::rand({1, 2, 2, 2})}, {Split::Test});
  EXPECT_THROW(fit_normalization(m, NormalizationMode::Standardize, 4, 0), InvalidSpecError);
  std::filesystem::remove_all(root);
}

TEST(Quantile, MatchesSortedReference) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> v(1 + trial * 13);
    for (auto& x : v) x = n(rng);
    for (double q : {0.0, 0.01, 0.25, 0.5, 0.99, 1.0}) {
      auto copy = v;
      EXPECT_DOUBLE_EQ(quantile(copy, q), sorted_percentile(v, q));
    }
  }
}

// ---------------------------------------------------------------------------
// bands

namespace {

const std::vector<std::string> kSentinel13 = {"B1", "B2", "B3", "B4",  "B5",  "B6", "B7",
                                              "B8", "B8A", "B9", "B10", "B11", "B12"};
const std::vector<std::string> kPhilEO10 = {"B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12"};

int64_t index_of(const std::vector<std::string>& names, const std::string& band) {
  for (size_t i = 0; i < names.size(); ++i)
    if (same_band(names[i], band)) return static_cast<int64_t>(i);
  return -1;
}

}  // namespace

TEST(SelectBands, SwinCompositionFromThirteenBands) {
  auto stack = random_stack(4, 2, 13, 4, 4);
  stack.band_names = kSentinel13;
  const auto spec = default_band_specs().at("swin");
  auto out = select_bands(stack, spec);
  ASSERT_EQ(out.channels(), 9);
  EXPECT_EQ(out.band_names, (std::vector<std::string>{"B2", "B3", "B4", "B5", "B6", "B7", "B8", "B11", "B12"}));
  for (int64_t c = 0; c < 9; ++c)
    EXPECT_TRUE(torch::equal(out.data.select(1, c), stack.data.select(1, index_of(kSentinel13, out.band_names[c]))));
}

TEST(SelectBands, SubstitutesMissingBand) {
  auto stack = random_stack(5, 3, 10, 4, 4);
  stack.band_names = kPhilEO10;
  BandSpec spec{{"B2", "B9"}, {{"B9", "B8a"}}};
  auto out = select_bands(stack, spec);
  ASSERT_EQ(out.channels(), 2);
  EXPECT_EQ(out.band_names[1], "B9");
  EXPECT_TRUE(torch::equal(out.data.select(1, 1), stack.data.select(1, index_of(kPhilEO10, "B8A"))));
}

TEST(SelectBands, UNetCompositionOnPhilEOStack) {
  auto stack = random_stack(6, 1, 10, 4, 4);
  stack.band_names = kPhilEO10;
  auto out = select_bands(stack, default_band_specs().at("unet"));
  EXPECT_EQ(out.channels(), 13);
  EXPECT_TRUE(torch::equal(out.data.select(1, index_of(out.band_names, "B1")),
                           stack.data.select(1, index_of(kPhilEO10, "B2"))));
  EXPECT_TRUE(torch::equal(out.data.select(1, index_of(out.band_names, "B10")),
                           stack.data.select(1, index_of(kPhilEO10, "B11"))));
}

TEST(SelectBands, IdentityAndIdempotence) {
  auto stack = random_stack(7, 2, 4, 3, 3);
  auto id = identity_band_spec(stack);
  auto once = select_bands(stack, id);
  EXPECT_TRUE(torch::equal(once.data, stack.data));
  EXPECT_EQ(once.band_names, stack.band_names);
  EXPECT_TRUE(torch::equal(select_bands(once, id).data, stack.data));
}

TEST(SelectBands, UnresolvableBandNamesTheBand) {
  auto stack = random_stack(8, 1, 3, 2, 2);
  stack.band_names = {"B2", "B3", "B4"};
  try {
    select_bands(stack, BandSpec{{"B2", "B12"}, {{"B12", "B11"}}});
    FAIL() << "expected MissingBandError";
  } catch (const MissingBandError& e) {
    EXPECT_EQ(e.band(), "B12");
  }
}

TEST(SelectBands, BandSpecFileRoundTrip) {
  auto dir = scratch_dir("bands");
  auto specs = default_band_specs();
  save_band_specs(dir / "bands.json", specs);
  auto loaded = load_band_specs(dir / "bands.json");
  ASSERT_EQ(loaded.size(), specs.size());
  for (const auto& [name, spec] : specs) {
    EXPECT_EQ(loaded.at(name).selected, spec.selected);
    EXPECT_EQ(loaded.at(name).substitutions, spec.substitutions);
  }
  EXPECT_EQ(specs.at("vit").selected, (std::vector<std::string>{"B2", "B3", "B4"}));
  std::filesystem::remove_all(dir);
}

TEST(StackValidation, RejectsBrokenInvariants) {
  auto stack = random_stack(9, 2, 2, 3, 3);
  stack.band_names = {"B2", "B2"};
  EXPECT_THROW(stack.validate(), InvalidSpecError);
  auto bad = random_stack(9, 2, 2, 3, 3);
  bad.data[0][0][0][0] = std::nanf("");
  EXPECT_THROW(bad.validate(), InvalidSpecError);
  RevisitStack flat{torch::zeros({3, 3}), {}, "x"};
  EXPECT_THROW(flat.validate(), ShapeError);
}

// ---------------------------------------------------------------------------
// resize

TEST(Resize, TargetShape) {
  auto stack = random_stack(10, 4, 3, 228, 228);
  auto out = resize(stack, 224, 224);
  EXPECT_EQ(out.data.sizes(), (std::vector<int64_t>{4, 3, 224, 224}));
}

TEST(Resize, SameSizeIsBitIdentical) {
  auto stack = random_stack(11, 2, 3, 16, 16);
  EXPECT_TRUE(torch::equal(resize(stack, 16, 16).data, stack.data));
}

TEST(Resize, ConstantImageStaysConstant) {
  auto stack = make_stack(torch::full({2, 2, 13, 17}, 3.25f));
  auto out = resize(stack, 31, 9).data;
  EXPECT_FLOAT_EQ(out.min().item<float>(), 3.25f);  // interpolation weights sum to 1 up to rounding
  EXPECT_FLOAT_EQ(out.max().item<float>(), 3.25f);
}

TEST(Resize, BilinearStaysWithinInputRange) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto stack = random_stack(20 + s, 1, 2, 11, 13);
    auto out = resize(stack, 29, 7).data;
    EXPECT_GE(out.min().item<float>(), stack.data.min().item<float>());
    EXPECT_LE(out.max().item<float>(), stack.data.max().item<float>());
  }
}

TEST(Resize, MasksStayBinaryDensityInterpolates) {
  auto mask = (torch::rand({10, 10}) > 0.5).to(torch::kFloat32);
  auto m = resize(GroundTruth{TruthKind::BinaryMask, mask}, 23, 23).values;
  EXPECT_TRUE(torch::all((m == 0) | (m == 1)).item<bool>());
  auto density = torch::rand({10, 10});
  auto d = resize(GroundTruth{TruthKind::DensityMap, density}, 23, 23).values;
  EXPECT_EQ(d.sizes(), (std::vector<int64_t>{23, 23}));
  EXPECT_GE(d.min().item<float>(), density.min().item<float>());
  EXPECT_THROW(resize(GroundTruth{TruthKind::BinaryMask, mask}, 0, 5), Error);
}

// ---------------------------------------------------------------------------
// geometric augmentation

namespace {

// Brute-force index remapping of one [H, W] plane.
torch::Tensor remap(const torch::Tensor& plane, const GeometricTransform& t) {
  auto cur = plane.to(torch::kFloat64).contiguous();
  auto step = [](const torch::Tensor& in, auto&& src) {
    const int64_t h = in.size(0), w = in.size(1);
    auto [oh, ow] = src(h, w, -1, -1);
    torch::Tensor out = torch::empty({oh, ow}, torch::kFloat64);
    auto a = in.accessor<double, 2>();
    auto b = out.accessor<double, 2>();
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        auto [si, sj] = src(h, w, i, j);
        b[i][j] = a[si][sj];
      }
    return out;
  };
  if (t.flip_horizontal)
    cur = step(cur, [](int64_t h, int64_t w, int64_t i, int64_t j) {
      return i < 0 ? std::pair{h, w} : std::pair{i, w - 1 - j};
    });
  if (t.flip_vertical)
    cur = step(cur, [](int64_t h, int64_t w, int64_t i, int64_t j) {
      return i < 0 ? std::pair{h, w} : std::pair{h - 1 - i, j};
    });
  for (int k = 0; k < t.quarter_turns; ++k)  // counter-clockwise: new(i, j) = old(j, W-1-i)
    cur = step(cur, [](int64_t h, int64_t w, int64_t i, int64_t j) {
      return i < 0 ? std::pair{w, h} : std::pair{j, w - 1 - i};
    });
  return cur;
}

}  // namespace

TEST(Augment, HorizontalFlipMovesPixelAcross) {
  const int64_t H = 6, W = 9, r = 4;
  auto mask = torch::zeros({H, W});
  mask[r][0] = 1;
  auto data = torch::zeros({3, 2, H, W});
  data.select(2, r).select(2, 0).fill_(5);
  GeometricTransform t;
  t.flip_horizontal = true;
  auto [stack, truth] = apply_transform(make_stack(data), GroundTruth{TruthKind::BinaryMask, mask}, t);
  EXPECT_EQ(truth.values[r][W - 1].item<float>(), 1.0f);
  EXPECT_EQ(truth.values.sum().item<float>(), 1.0f);
  for (int64_t k = 0; k < 3; ++k)
    for (int64_t c = 0; c < 2; ++c) {
      EXPECT_EQ(stack.data[k][c][r][W - 1].item<float>(), 5.0f);
      EXPECT_EQ(stack.data[k][c].sum().item<float>(), 5.0f);
    }
}

TEST(Augment, IdentityReturnsInput) {
  auto stack = random_stack(12, 2, 3, 8, 8);
  auto truth = GroundTruth{TruthKind::BinaryMask, (torch::rand({8, 8}) > 0.5).to(torch::kFloat32)};
  GeometricTransform t;
  ASSERT_TRUE(t.is_identity());
  auto [s, g] = apply_transform(stack, truth, t);
  EXPECT_TRUE(torch::equal(s.data, stack.data));
  EXPECT_TRUE(torch::equal(g.values, truth.values));
}

TEST(Augment, FlipsAndQuarterTurnsMatchIndexOracle) {
  auto stack = random_stack(13, 3, 2, 7, 7);
  auto mask = (torch::rand({7, 7}) > 0.6).to(torch::kFloat32);
  for (int bits = 0; bits < 16; ++bits) {
    GeometricTransform t;
    t.flip_horizontal = bits & 1;
    t.flip_vertical = bits & 2;
    t.quarter_turns = bits >> 2;
    auto [s, g] = apply_transform(stack, GroundTruth{TruthKind::BinaryMask, mask}, t);
    EXPECT_TRUE(torch::equal(g.values.to(torch::kFloat64), remap(mask, t))) << "transform bits " << bits;
    EXPECT_EQ(g.values.sum().item<float>(), mask.sum().item<float>());
    for (int64_t k = 0; k < 3; ++k)
      for (int64_t c = 0; c < 2; ++c)
        EXPECT_TRUE(torch::equal(s.data[k][c].to(torch::kFloat64), remap(stack.data[k][c], t)));
  }
}

TEST(Augment, RotationPreservesIoUUnderJointTransform) {
  auto truth = (torch::rand({12, 12}) > 0.5).to(torch::kFloat32);
  auto pred = (torch::rand({12, 12}) > 0.5).to(torch::kFloat32);
  GeometricTransform t;
  t.quarter_turns = 1;
  auto rot = [&](const torch::Tensor& m) {
    return apply_transform(make_stack(m.view({1, 1, 12, 12})), GroundTruth{TruthKind::BinaryMask, m}, t).second.values;
  };
  auto iou = [](const torch::Tensor& a, const torch::Tensor& b) {
    return ((a > 0) & (b > 0)).sum().item<double>() / ((a > 0) | (b > 0)).sum().item<double>();
  };
  EXPECT_DOUBLE_EQ(iou(rot(pred), rot(truth)), iou(pred, truth));
}

TEST(Augment, SeededAndShared) {
  auto stack = random_stack(14, 4, 2, 16, 16);
  auto truth = GroundTruth{TruthKind::BinaryMask, (torch::rand({16, 16}) > 0.5).to(torch::kFloat32)};
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto [a, ga] = geometric_augment(stack, truth, seed);
    auto [b, gb] = geometric_augment(stack, truth, seed);
    EXPECT_TRUE(torch::equal(a.data, b.data));
    EXPECT_TRUE(torch::equal(ga.values, gb.values));
    EXPECT_TRUE(torch::all((ga.values == 0) | (ga.values == 1)).item<bool>());
    // the same transform reaches every revisit: a stack of copies stays copies
    auto copies = make_stack(stack.data.narrow(0, 0, 1).repeat({3, 1, 1, 1}));
    auto [c, gc] = geometric_augment(copies, truth, seed);
    EXPECT_TRUE(torch::equal(c.data[0], c.data[1]));
    EXPECT_TRUE(torch::equal(c.data[0], c.data[2]));
    EXPECT_TRUE(torch::equal(gc.values, ga.values));
  }
}

TEST(Augment, SampleRespectsRanges) {
  AugmentRanges r;
  int flips = 0, affine = 0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    auto t = sample_transform(s, r);
    flips += t.flip_horizontal;
    EXPECT_GE(t.quarter_turns, 0);
    EXPECT_LE(t.quarter_turns, 3);
    if (t.affine) {
      ++affine;
      EXPECT_LE(std::abs(t.affine->rotation_deg), 15.0);
      EXPECT_LE(std::abs(t.affine->translate_x), 0.1);
      EXPECT_LE(std::abs(t.affine->translate_y), 0.1);
      EXPECT_GE(t.affine->scale, 0.9);
      EXPECT_LE(t.affine->scale, 1.1);
    }
  }
  EXPECT_GT(flips, 150);
  EXPECT_LT(flips, 250);
  EXPECT_GT(affine, 150);
  EXPECT_LT(affine, 250);
}

// ---------------------------------------------------------------------------
// arrays, manifest, loader

TEST(ArrayIo, RoundTripIsBitExact) {
  auto dir = scratch_dir("npy");
  auto t = torch::randn({3, 5, 7});
  write_array(dir / "a.npy", t);
  auto back = read_array(dir / "a.npy");
  EXPECT_EQ(back.scalar_type(), torch::kFloat32);
  EXPECT_TRUE(torch::equal(back, t));
  EXPECT_THROW(read_array(dir / "missing.npy"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Manifest, SaveLoadAndDataRootOverride) {
  auto root = scratch_dir("manifest");
  auto m = write_manifest(root, {torch::rand({2, 2, 4, 4}), torch::rand({2, 2, 4, 4})}, {Split::Train, Split::Test});
  auto loaded = DatasetManifest::load(root / "manifest.json");
  EXPECT_EQ(loaded.locations.size(), 2u);
  EXPECT_EQ(loaded.count(Split::Train), 1u);
  EXPECT_EQ(loaded.negative_count(), 2u);
  EXPECT_EQ(manifest_hash(loaded), manifest_hash(m));

  auto moved = scratch_dir("manifest-moved");
  std::filesystem::copy(root, moved / "data", std::filesystem::copy_options::recursive);
  auto elsewhere = scratch_dir("manifest-only");
  std::filesystem::copy(root / "manifest.json", elsewhere / "manifest.json");
  ::setenv(kDataRootEnv, (moved / "data").c_str(), 1);
  auto relocated = DatasetManifest::load(elsewhere / "manifest.json");
  ::unsetenv(kDataRootEnv);
  auto [stack, truth] = load_location(relocated, relocated.locations[0], 0, 0);
  EXPECT_EQ(stack.revisits(), 2);
  for (const auto& d : {root, moved, elsewhere}) std::filesystem::remove_all(d);
}

TEST(Manifest, DuplicateIdsRejected) {
  DatasetManifest m;
  m.locations = {LocationEntry{"a", {"a/revisit_0.npy"}, "a/truth.npy"},
                 LocationEntry{"a", {"a/revisit_0.npy"}, "a/truth.npy"}};
  EXPECT_THROW(m.validate(), InvalidSpecError);
}

TEST(Splits, RoundedFractionAndSeeded) {
  auto s = assign_splits(100, 0.8, 3);
  EXPECT_EQ(std::count(s.begin(), s.end(), Split::Train), 80);
  EXPECT_EQ(s, assign_splits(100, 0.8, 3));
  EXPECT_NE(s, assign_splits(100, 0.8, 4));
  auto odd = assign_splits(7, 0.8, 0);
  EXPECT_EQ(std::count(odd.begin(), odd.end(), Split::Train), 6);
}

TEST(Loader, SamplesExactlyTRevisits) {
  auto root = scratch_dir("loader");
  auto data = torch::arange(5).to(torch::kFloat32).view({5, 1, 1, 1}).expand({5, 1, 2, 2}).contiguous();
  auto m = write_manifest(root, {data}, {Split::Train});
  const auto& e = m.locations[0];
  auto [fewer, _a] = load_location(m, e, 3, 9);
  EXPECT_EQ(fewer.revisits(), 3);
  auto ids = fewer.data.select(1, 0).select(1, 0).select(1, 0).contiguous();
  std::set<float> distinct(ids.data_ptr<float>(), ids.data_ptr<float>() + 3);
  EXPECT_EQ(distinct.size(), 3u);  // without replacement
  EXPECT_TRUE(std::is_sorted(ids.data_ptr<float>(), ids.data_ptr<float>() + 3));
  auto [more, _b] = load_location(m, e, 8, 9);
  EXPECT_EQ(more.revisits(), 8);
  EXPECT_TRUE(torch::equal(more.data.narrow(0, 0, 5), data));  // every stored revisit kept
  auto [again, _c] = load_location(m, e, 8, 9);
  EXPECT_TRUE(torch::equal(again.data, more.data));
  std::filesystem::remove_all(root);
}
