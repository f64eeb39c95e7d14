#pragma once

#include <torch/torch.h>

#include "revisit/backbones.hpp"

namespace revisit {

/// conv3x3-BN-ReLU-conv3x3-BN plus (projected) identity, then ReLU.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Upsample x2, concatenate the skip tensor, two conv-BN-ReLU.
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);

 private:
  torch::nn::Sequential convs_{nullptr};
};
TORCH_MODULE(DecoderBlock);

/// Residual encoder emitting H/2 (stem), H/4, H/8, H/16 and H/32 features;
/// every one of them is a fusion site and a decoder input.
class UNetImpl : public SegmentationModelImpl {
 public:
  explicit UNetImpl(const ModelConfig& config);

  MultiScaleFeatures encode(const torch::Tensor& images) override;
  torch::Tensor decode(const MultiScaleFeatures& features) override;

 private:
  torch::nn::Sequential stem_{nullptr};
  torch::nn::ModuleList stages_{nullptr};
  torch::nn::ModuleList decoder_{nullptr};
  torch::nn::Sequential final_{nullptr};
};

}  // namespace revisit
