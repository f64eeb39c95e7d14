#pragma once

#include <torch/torch.h>

#include "revisit/backbones.hpp"

namespace revisit {

/// Multi-head self-attention inside non-overlapping windows with a learned
/// relative-position bias. The bias table is sized for the configured window;
/// smaller effective windows (stages coarser than the window) index into it.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window);

  /// windows: [nW*B, N, C] with N = w*w; mask: [nW, N, N] additive or undefined.
  torch::Tensor forward(const torch::Tensor& windows, int64_t window, const torch::Tensor& mask);

 private:
  int64_t heads_;
  int64_t window_;
  double scale_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
  torch::Tensor bias_table_;
};
TORCH_MODULE(WindowAttention);

/// Pre-norm block: (shifted) window attention then a 4x MLP, both residual.
class WindowBlockImpl : public torch::nn::Module {
 public:
  WindowBlockImpl(int64_t dim, int64_t heads, int64_t window, bool shifted);

  /// x: [B, H, W, C]
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t window_;
  bool shifted_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(WindowBlock);

/// 2x2 neighbourhood concat -> LayerNorm -> linear 4C -> 2C.
class PatchMergingImpl : public torch::nn::Module {
 public:
  explicit PatchMergingImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduction_{nullptr};
};
TORCH_MODULE(PatchMerging);

/// Lateral 1x1 convs plus nearest-neighbour top-down merge; returns the
/// finest merged level after a 3x3 smoothing conv.
class FeaturePyramidImpl : public torch::nn::Module {
 public:
  FeaturePyramidImpl(const std::vector<int64_t>& in_channels, int64_t width);
  torch::Tensor forward(const std::vector<torch::Tensor>& features);

 private:
  torch::nn::ModuleList laterals_{nullptr};
  torch::nn::Conv2d smooth_{nullptr};
};
TORCH_MODULE(FeaturePyramid);

/// Hierarchical shifted-window transformer (patch 4, four stages with patch
/// merging) emitting H/4 .. H/32 features, a feature pyramid, and an
/// upsampling head of [ConvTranspose, Conv2d, ReLU] blocks.
class WindowTransformerSegmenterImpl : public SegmentationModelImpl {
 public:
  explicit WindowTransformerSegmenterImpl(const ModelConfig& config);

  MultiScaleFeatures encode(const torch::Tensor& images) override;
  torch::Tensor decode(const MultiScaleFeatures& features) override;

 private:
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::nn::LayerNorm embed_norm_{nullptr};
  torch::nn::ModuleList stages_{nullptr};
  torch::nn::ModuleList merges_{nullptr};
  torch::nn::ModuleList out_norms_{nullptr};
  FeaturePyramid fpn_{nullptr};
  torch::nn::Sequential head_{nullptr};
};

}  // namespace revisit
