#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace revisit {

using json = nlohmann::json;

/// Co-registered revisits of one location, laid out [T, C, H, W].
struct RevisitStack {
  torch::Tensor data;
  std::vector<std::string> band_names;
  std::string location_id;

  int64_t revisits() const { return data.size(0); }
  int64_t channels() const { return data.size(1); }
  int64_t height() const { return data.size(2); }
  int64_t width() const { return data.size(3); }

  /// Throws ShapeError / InvalidSpecError on a broken invariant (rank, T >= 1,
  /// band labels, non-finite pixels).
  void validate() const;
};

enum class TruthKind { BinaryMask, DensityMap };

/// One ground-truth map per location, [H, W].
struct GroundTruth {
  TruthKind kind = TruthKind::BinaryMask;
  torch::Tensor values;

  int64_t height() const { return values.size(0); }
  int64_t width() const { return values.size(1); }
  void validate() const;
};

std::string to_string(TruthKind kind);
TruthKind truth_kind_from_string(const std::string& text);

// ---------------------------------------------------------------------------
// Normalization

enum class NormalizationMode { Standardize, PercentileNormalize, ConstantScale };

std::string to_string(NormalizationMode mode);
NormalizationMode normalization_mode_from_string(const std::string& text);

/// Per-band scaling parameters. Only the vectors required by `mode` are filled.
struct NormalizationSpec {
  NormalizationMode mode = NormalizationMode::ConstantScale;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> p_low;
  std::vector<double> p_high;
  double constant = 4000.0;

  static NormalizationSpec standardize(std::vector<double> mean, std::vector<double> stddev);
  static NormalizationSpec percentile(std::vector<double> p_low, std::vector<double> p_high);
  static NormalizationSpec constant_scale(double constant = 4000.0);

  /// `channels` < 0 skips the per-band length check.
  void validate(int64_t channels = -1) const;

  json to_json() const;
  static NormalizationSpec from_json(const json& j);
};

/// Standardize: (x - mean) / std.  PercentileNormalize: clip((x - p1) / (p99 - p1), 0, 1).
/// ConstantScale: clip(x / constant, 0, 1).  Dtype and shape are preserved.
RevisitStack normalize(const RevisitStack& stack, const NormalizationSpec& spec);

// ---------------------------------------------------------------------------
// Bands

struct BandSpec {
  std::vector<std::string> selected;
  /// missing band -> replacement band; resolved at most one step deep.
  std::map<std::string, std::string> substitutions;

  json to_json() const;
  static BandSpec from_json(const json& j);
};

/// Band identifiers compare case-insensitively ("B8a" == "B8A").
bool same_band(const std::string& a, const std::string& b);

RevisitStack select_bands(const RevisitStack& stack, const BandSpec& bands);

/// Stack-preserving spec: every band of `stack`, no substitutions.
BandSpec identity_band_spec(const RevisitStack& stack);

/// Per-model band compositions (U-Net: all 13 with neighbouring-band substitutions, SWIN: 9, ViT: RGB).
std::map<std::string, BandSpec> default_band_specs();
std::map<std::string, BandSpec> load_band_specs(const std::filesystem::path& path);
void save_band_specs(const std::filesystem::path& path, const std::map<std::string, BandSpec>& specs);

// ---------------------------------------------------------------------------
// Resizing

/// Bilinear per revisit and band. Same-size requests return an exact copy.
RevisitStack resize(const RevisitStack& stack, int64_t height, int64_t width);

/// Nearest-neighbour for binary masks, bilinear for density maps.
GroundTruth resize(const GroundTruth& truth, int64_t height, int64_t width);

// ---------------------------------------------------------------------------
// Geometric augmentation

struct AffineParams {
  double rotation_deg = 0.0;
  double translate_x = 0.0;  // fraction of width
  double translate_y = 0.0;  // fraction of height
  double scale = 1.0;
};

/// Applied in order: horizontal flip, vertical flip, quarter turns, affine warp.
struct GeometricTransform {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3
  std::optional<AffineParams> affine;

  bool is_identity() const;
};

struct AugmentRanges {
  double flip_prob = 0.5;
  double affine_prob = 0.5;
  double max_rotation_deg = 15.0;
  double max_translate = 0.1;
  double min_scale = 0.9;
  double max_scale = 1.1;
};

GeometricTransform sample_transform(std::uint64_t seed, const AugmentRanges& ranges = {});

/// Applies one transform to every revisit and to the ground truth. Masks are
/// resampled nearest-neighbour so they stay binary.
std::pair<RevisitStack, GroundTruth> apply_transform(const RevisitStack& stack, const GroundTruth& truth,
                                                     const GeometricTransform& transform);

std::pair<RevisitStack, GroundTruth> geometric_augment(const RevisitStack& stack, const GroundTruth& truth,
                                                       std::uint64_t seed, const AugmentRanges& ranges = {});

// ---------------------------------------------------------------------------
// Manifest and on-disk layout

enum class Split { Train, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

struct LocationEntry {
  std::string id;
  std::vector<std::string> revisits;  // manifest-relative refs to revisit_<k>.npy
  std::string truth;                  // manifest-relative ref to truth.npy
  Split split = Split::Train;
  bool negative = false;

  int revisit_count() const { return static_cast<int>(revisits.size()); }
};

/// Environment variable that overrides the directory manifest refs resolve against.
inline constexpr const char* kDataRootEnv = "REVISIT_FUSION_DATA_ROOT";

struct DatasetManifest {
  std::filesystem::path root;
  TruthKind task = TruthKind::BinaryMask;
  std::vector<std::string> bands;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<LocationEntry> locations;

  std::filesystem::path resolve(const std::string& ref) const { return root / ref; }
  std::vector<const LocationEntry*> entries(Split split) const;
  size_t count(Split split) const;
  size_t negative_count() const;

  /// Unique ids, at least one revisit each.
  void validate() const;

  json to_json() const;
  static DatasetManifest from_json(const json& j, std::filesystem::path root);

  /// Refs resolve against $REVISIT_FUSION_DATA_ROOT when set, else the manifest's directory.
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Hash over the manifest JSON and every referenced array's bytes.
std::string manifest_hash(const DatasetManifest& manifest);

/// Seeded assignment of `n` locations to splits with round(n * train_fraction) in train.
std::vector<Split> assign_splits(size_t n, double train_fraction, std::uint64_t seed);

/// Writes one location directory: revisit_<k>.npy, truth.npy and bands.json.
LocationEntry write_location(const std::filesystem::path& root, const RevisitStack& stack, const GroundTruth& truth,
                             Split split, bool negative);

/// Loads exactly `revisits` revisits. Locations with more are subsampled without
/// replacement (index order kept); those with fewer are padded by seeded draws
/// with replacement. `revisits` <= 0 loads every stored revisit.
std::pair<RevisitStack, GroundTruth> load_location(const DatasetManifest& manifest, const LocationEntry& entry,
                                                   int revisits, std::uint64_t seed);

/// Per-band statistics from a seeded sample of `sample_size` TRAIN locations.
NormalizationSpec fit_normalization(const DatasetManifest& manifest, NormalizationMode mode, int sample_size,
                                    std::uint64_t seed, double constant = 4000.0);

/// Linear-interpolated quantile (q in [0,1]) of `values`; reorders the input.
double quantile(std::vector<float>& values, double q);

}  // namespace revisit
