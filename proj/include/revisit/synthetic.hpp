#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "revisit/dataset.hpp"

namespace revisit {

/// Procedural multi-revisit scenes: a static target drawn into a textured
/// background, then per revisit a brightness gain, sensor noise and opaque
/// circular "cloud" patches. Every target pixel stays visible in at least one
/// revisit, so a fused view always carries the full target.
struct SyntheticParams {
  int n_locations = 400;
  int revisits = 4;
  int channels = 4;
  int height = 64;
  int width = 64;
  TruthKind task = TruthKind::BinaryMask;

  /// Target area as a fraction of the image.
  std::array<double, 2> target_fraction_range{0.03, 0.12};
  /// Probability that a revisit carries clouds.
  double occlusion_prob = 0.3;
  std::array<double, 2> occlusion_radius_range{6.0, 16.0};
  int max_clouds = 3;
  /// Fraction of clouds centred on the target footprint rather than uniformly.
  double cloud_target_bias = 0.5;
  double cloud_offset = 2500.0;
  /// Relative std of the per-revisit, per-band multiplicative gain.
  double brightness_jitter_std = 0.05;
  /// Per-revisit additive sensor noise, in digital numbers.
  double pixel_noise_std = 60.0;
  /// Background level per band; cycled if shorter than `channels`.
  std::vector<double> background_level{1100.0, 1000.0, 900.0, 2200.0};
  /// Offset added inside the target per band; cycled like background_level.
  std::vector<double> spectral_signature{350.0, 400.0, 450.0, -500.0};
  /// Spectrally flat bright patches that are not targets.
  int max_distractors = 2;
  double negative_fraction = 0.1;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int max_resamples = 64;

  std::vector<std::string> band_names() const;

  /// Throws InvalidSpecError on out-of-range values.
  void validate() const;

  json to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static SyntheticParams from_json(const json& j);
};

struct SyntheticLocation {
  RevisitStack stack;
  GroundTruth truth;
  /// Scene before gain, noise and clouds, [C, H, W].
  torch::Tensor clean_scene;
  /// true where a cloud covers the pixel, [T, H, W].
  torch::Tensor occlusion;
  bool negative = false;
};

/// Deterministic in (params, location_seed, negative).
SyntheticLocation generate_location(const SyntheticParams& params, std::uint64_t location_seed,
                                    bool negative = false, const std::string& location_id = "loc");

/// Writes the on-disk layout under `out_dir` (one directory per location,
/// manifest.json and params.json) and returns the manifest.
DatasetManifest generate_dataset(const SyntheticParams& params, const std::filesystem::path& out_dir);

}  // namespace revisit
