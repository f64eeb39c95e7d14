#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "revisit/dataset.hpp"

namespace revisit {

/// How a model consumes the revisits of a location.
enum class FusionStrategy {
  SingleImage,        // one revisit, the rest discarded
  AugmentedDataset,   // every revisit is its own training sample
  MedianImage,        // pixelwise temporal median composite
  OutputFusion,       // per-revisit prediction maps, median, then threshold
  LatentTemporalMax,  // per-revisit encoder features reduced by elementwise max
};

/// Canonical reporting order (single, augmented, median, output fusion, latent max).
inline constexpr std::array<FusionStrategy, 5> kStrategyOrder = {
    FusionStrategy::SingleImage, FusionStrategy::AugmentedDataset, FusionStrategy::MedianImage,
    FusionStrategy::OutputFusion, FusionStrategy::LatentTemporalMax};

/// Config key: single | augmented | median | output_fusion | latent_max.
std::string to_string(FusionStrategy strategy);
FusionStrategy fusion_strategy_from_string(const std::string& text);
/// Human-readable row label, e.g. "Latent Temporal Max".
std::string display_name(FusionStrategy strategy);

/// True when the model itself sees all T revisits.
bool consumes_all_revisits(FusionStrategy strategy);

/// Per-scale encoder outputs, ordered finest to coarsest (H/4 ... H/32 for
/// hierarchical encoders, a single token grid for a plain ViT).
struct MultiScaleFeatures {
  std::vector<torch::Tensor> scales;

  size_t size() const { return scales.size(); }
  const torch::Tensor& operator[](size_t i) const { return scales[i]; }
};

enum class FeatureReducer { Max, Mean };

// ---------------------------------------------------------------------------
// Data-side preparations

enum class SelectionMode { Train, Eval };

/// Train: revisit drawn uniformly from `seed`. Eval: revisit 0.
int select_single_index(int64_t revisits, std::uint64_t seed, SelectionMode mode);
RevisitStack select_single(const RevisitStack& stack, std::uint64_t seed, SelectionMode mode);

/// Each train location with T revisits becomes T single-revisit entries
/// sharing its ground truth ("<id>#<k>"); test entries are copied unchanged.
DatasetManifest expand_augmented(const DatasetManifest& manifest);

/// Pixelwise, bandwise median over T (mean of the middle pair for even T).
RevisitStack median_composite(const RevisitStack& stack);

/// Differentiable median along `dim`; even counts average the middle pair.
torch::Tensor temporal_median(const torch::Tensor& values, int64_t dim);

// ---------------------------------------------------------------------------
// Model-side fusion

/// Elementwise max over revisits. The forward value is the exact max; the
/// gradient goes to the first revisit attaining it.
torch::Tensor temporal_max(const std::vector<torch::Tensor>& per_revisit);

/// Reduces T same-shaped feature sets scale by scale. Throws ShapeError on
/// mismatched scale counts or shapes.
MultiScaleFeatures fuse_features(const std::vector<MultiScaleFeatures>& per_revisit,
                                 FeatureReducer reducer = FeatureReducer::Max);

inline MultiScaleFeatures temporal_max_fuse(const std::vector<MultiScaleFeatures>& per_revisit) {
  return fuse_features(per_revisit, FeatureReducer::Max);
}

/// Median of T pre-threshold maps [.., H, W] (stacked on a new leading axis).
torch::Tensor output_fuse_pre_threshold(const std::vector<torch::Tensor>& maps);

/// Binary task: median of the logit maps thresholded at 0 (float 0/1).
/// Density task: the median map itself.
torch::Tensor output_fuse(const std::vector<torch::Tensor>& maps, TruthKind task = TruthKind::BinaryMask);

}  // namespace revisit
