#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "revisit/backbones.hpp"
#include "revisit/dataset.hpp"
#include "revisit/fusion.hpp"
#include "revisit/metrics.hpp"

namespace revisit {

enum class LossKind { BCEWithLogits, BCEDice, MSE };
enum class OptimizerKind { Adam, SGD };

std::string to_string(LossKind loss);
LossKind loss_kind_from_string(const std::string& text);
std::string to_string(OptimizerKind opt);
OptimizerKind optimizer_kind_from_string(const std::string& text);

/// Optimisation and data-handling settings for one training run. The model
/// architecture lives in ModelConfig; `strategy` overrides model.fusion.
struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  LossKind loss = LossKind::BCEWithLogits;
  double dice_weight = 0.5;
  std::uint64_t seed = 0;
  FusionStrategy strategy = FusionStrategy::LatentTemporalMax;
  bool augment = true;
  AugmentRanges augment_ranges;
  bool deterministic = true;
  /// Evaluate on the test split every N epochs (0: never during training).
  int eval_every = 0;

  /// Throws ConfigError; `epochs` may be 0 (no-op training).
  void validate(HeadKind head) const;
  json to_json() const;
  /// Strict: unknown keys raise ConfigError. Does not read `seed` or `strategy`.
  static TrainConfig from_json(const json& j);
};

// ---------------------------------------------------------------------------
// Data preparation

struct DataOptions {
  /// Revisits loaded per location.
  int revisits = 4;
  /// Square operating size; 0 keeps the stored size.
  int64_t image_size = 0;
  std::optional<BandSpec> bands;
  NormalizationMode normalization = NormalizationMode::ConstantScale;
  double constant = 4000.0;
  int normalization_sample = 64;
  std::uint64_t seed = 0;

  json to_json() const;
  /// Strict keys; "bands" may name one of default_band_specs().
  static DataOptions from_json(const json& j);
};

struct PreparedLocation {
  RevisitStack stack;  // normalized, band-selected, resized
  GroundTruth truth;
  bool negative = false;
};

struct PreparedDataset {
  TruthKind task = TruthKind::BinaryMask;
  NormalizationSpec normalization;
  std::vector<std::string> bands;
  std::vector<PreparedLocation> train;
  std::vector<PreparedLocation> test;

  int64_t channels() const;
};

/// load -> normalize (fitted on the train split) -> select bands -> resize.
PreparedDataset prepare_dataset(const DatasetManifest& manifest, const DataOptions& options);

/// Applies the same per-location preparation with a known normalization.
PreparedLocation prepare_location(const DatasetManifest& manifest, const LocationEntry& entry,
                                  const DataOptions& options, const NormalizationSpec& normalization);

// ---------------------------------------------------------------------------
// Training

/// Sets single-threaded, deterministic kernels (on) or restores defaults (off).
void set_deterministic(bool on);

torch::Tensor compute_loss(const torch::Tensor& output, const torch::Tensor& truth, LossKind loss,
                           double dice_weight = 0.5);

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_metric;  // filled when eval_every > 0
  std::vector<int> metric_epochs;
};

struct TrainResult {
  SegmentationModel model;
  TrainHistory history;
};

/// Builds `model` (seeded with config.seed) and trains every parameter.
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const TrainConfig& config, const ModelConfig& model, const PreparedDataset& data);

/// Continues training an existing model in place.
TrainHistory train_model(SegmentationModelImpl& model, const TrainConfig& config, const PreparedDataset& data);

// ---------------------------------------------------------------------------
// Evaluation

struct MetricReport {
  TruthKind task = TruthKind::BinaryMask;
  size_t images = 0;
  double iou = 0.0;         // mean of per-image IoU (headline)
  double pooled_iou = 0.0;  // dataset-pooled intersection / union
  double mse = 0.0;
  std::optional<NegativeStats> negatives;

  /// IoU for masks, MSE for density.
  double headline() const { return task == TruthKind::BinaryMask ? iou : mse; }
  std::string metric_name() const { return task == TruthKind::BinaryMask ? "iou" : "mse"; }
  json to_json() const;
};

/// Maps a prepared location to a binary mask (0/1) or density map, [H, W].
using Predictor = std::function<torch::Tensor(const PreparedLocation&)>;

/// Eval-mode prediction with strategy-appropriate input: revisit 0 for the
/// single/augmented baselines, the composite for median, T forwards plus
/// output fusion, or the full stack for latent fusion.
torch::Tensor predict_location(SegmentationModelImpl& model, const RevisitStack& stack, FusionStrategy strategy,
                               TruthKind task);

MetricReport evaluate(const Predictor& predictor, const std::vector<PreparedLocation>& test, TruthKind task);
MetricReport evaluate(SegmentationModelImpl& model, const std::vector<PreparedLocation>& test,
                      FusionStrategy strategy, TruthKind task);

/// False-positive statistics on negative locations. Throws when none are given.
NegativeStats negative_image_report(SegmentationModelImpl& model, const std::vector<PreparedLocation>& negatives,
                                    FusionStrategy strategy);

}  // namespace revisit
