#pragma once

#include <torch/torch.h>

#include "revisit/backbones.hpp"

namespace revisit {

/// Pre-norm transformer encoder block (global MHSA + 4x GELU MLP).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads);
  torch::Tensor forward(const torch::Tensor& tokens);

 private:
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// ConvTranspose(2, stride 2) -> Conv2d 3x3 -> BatchNorm -> Dropout -> ReLU.
void append_upscaling_block(torch::nn::Sequential& seq, int64_t in_channels, int64_t out_channels, double dropout);

/// Plain ViT encoder producing one patch-token grid [B, D, H/p, W/p] per
/// revisit, decoded by log2(p) upscaling blocks and a 1x1 conv.
class ViTSegmenterImpl : public SegmentationModelImpl {
 public:
  explicit ViTSegmenterImpl(const ModelConfig& config);

  MultiScaleFeatures encode(const torch::Tensor& images) override;
  torch::Tensor decode(const MultiScaleFeatures& features) override;

 private:
  torch::Tensor positional(int64_t grid_h, int64_t grid_w) const;

  int64_t grid_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::Tensor pos_embed_;
  torch::nn::Sequential blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};

}  // namespace revisit
