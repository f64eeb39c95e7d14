#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "revisit/dataset.hpp"
#include "revisit/fusion.hpp"

namespace revisit {

enum class ModelFamily { UNet, HierarchicalWindowTransformer, PlainViT };
enum class EncoderSize { Small, Base, Large };
enum class HeadKind { BinarySegmentation, DensityRegression };

std::string to_string(ModelFamily family);
ModelFamily model_family_from_string(const std::string& text);
std::string to_string(EncoderSize size);
EncoderSize encoder_size_from_string(const std::string& text);
std::string to_string(HeadKind head);
HeadKind head_kind_from_string(const std::string& text);

/// Architecture description. Zero / empty fields take the defaults of
/// `encoder_size` for the chosen family (see resolved()).
struct ModelConfig {
  ModelFamily family = ModelFamily::UNet;
  int64_t in_channels = 4;
  EncoderSize encoder_size = EncoderSize::Base;
  /// Nominal square input size; sizes the ViT positional table.
  int64_t image_size = 224;

  std::vector<int64_t> widths;  // U-Net stage widths (H/4 .. H/32)
  std::vector<int64_t> depths;  // blocks per stage; ViT uses depths[0]
  int64_t embed_dim = 0;        // transformer families
  std::vector<int64_t> heads;   // per stage (window transformer) or heads[0] (ViT)
  int64_t window_size = 0;
  int64_t patch_size = 0;
  int64_t fpn_width = 0;
  int64_t upsample_blocks = 0;  // window-transformer head
  double decoder_dropout = -1;  // ViT decoder

  FusionStrategy fusion = FusionStrategy::LatentTemporalMax;
  FeatureReducer reducer = FeatureReducer::Max;
  HeadKind head = HeadKind::BinarySegmentation;
  std::uint64_t seed = 0;

  /// Copy with every defaulted field filled in.
  ModelConfig resolved() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// Required divisor of the input height and width.
  int64_t spatial_multiple() const;

  json to_json() const;
  /// Strict: unknown keys raise ConfigError.
  static ModelConfig from_json(const json& j);
};

/// Pre-threshold prediction for one location: logits (binary head) or
/// density in [0,1] (density head), [H, W].
struct SegmentationOutput {
  torch::Tensor values;
  HeadKind head = HeadKind::BinarySegmentation;
};

/// Shared revisit handling for every family. Subclasses provide an encoder
/// producing MultiScaleFeatures and a decoder mapping them to a one-channel
/// full-resolution map; the fusion strategy decides how revisits reach them.
class SegmentationModelImpl : public torch::nn::Module {
 public:
  explicit SegmentationModelImpl(ModelConfig config);

  /// [B, C, H, W] -> per-scale features.
  virtual MultiScaleFeatures encode(const torch::Tensor& images) = 0;
  /// Features -> raw [B, 1, H, W] map.
  virtual torch::Tensor decode(const MultiScaleFeatures& features) = 0;

  /// [B, T, C, H, W] -> [B, H, W] head output using config().fusion.
  torch::Tensor forward(const torch::Tensor& stacks);
  torch::Tensor forward(const torch::Tensor& stacks, FusionStrategy strategy);
  /// One revisit, [B, C, H, W] -> [B, H, W].
  torch::Tensor forward_single(const torch::Tensor& images);
  /// Runs the encoder once per revisit of [B, T, C, H, W].
  std::vector<MultiScaleFeatures> encode_revisits(const torch::Tensor& stacks);

  /// Eval-path convenience for one already-prepared stack.
  SegmentationOutput predict(const RevisitStack& stack);
  SegmentationOutput predict(const RevisitStack& stack, FusionStrategy strategy);

  const ModelConfig& config() const { return config_; }
  int64_t parameter_count() const;

 protected:
  void check_images(const torch::Tensor& images) const;
  torch::Tensor activate(const torch::Tensor& raw) const;

  ModelConfig config_;
};

using SegmentationModel = std::shared_ptr<SegmentationModelImpl>;

/// Seeds the global generator with config.seed, then constructs the family.
SegmentationModel build_model(const ModelConfig& config);

}  // namespace revisit
