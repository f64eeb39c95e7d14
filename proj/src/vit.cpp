#include "revisit/vit.hpp"

#include <cmath>

namespace revisit {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads) : heads_(heads) {
  norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", nn::Linear(dim, dim));
  norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  mlp_ = register_module("mlp", nn::Sequential(nn::Linear(dim, 4 * dim), nn::GELU(), nn::Linear(4 * dim, dim)));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& tokens) {
  const int64_t b = tokens.size(0), n = tokens.size(1), c = tokens.size(2);
  const int64_t d = c / heads_;
  auto qkv = qkv_(norm1_(tokens)).reshape({b, n, 3, heads_, d}).permute({2, 0, 3, 1, 4});
  auto attn = torch::softmax(qkv[0].matmul(qkv[1].transpose(-2, -1)) / std::sqrt(static_cast<double>(d)), -1);
  auto x = tokens + proj_(attn.matmul(qkv[2]).transpose(1, 2).reshape({b, n, c}));
  return x + mlp_->forward(norm2_(x));
}

void append_upscaling_block(nn::Sequential& seq, int64_t in_channels, int64_t out_channels, double dropout) {
  seq->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in_channels, out_channels, 2).stride(2)));
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  seq->push_back(nn::BatchNorm2d(out_channels));
  seq->push_back(nn::Dropout(dropout));
  seq->push_back(nn::ReLU());
}

ViTSegmenterImpl::ViTSegmenterImpl(const ModelConfig& config)
    : SegmentationModelImpl(config), grid_(config_.image_size / config_.patch_size) {
  const int64_t dim = config_.embed_dim;
  patch_embed_ = register_module(
      "patch_embed",
      nn::Conv2d(nn::Conv2dOptions(config_.in_channels, dim, config_.patch_size).stride(config_.patch_size)));
  pos_embed_ = register_parameter("pos_embed", torch::randn({1, dim, std::max<int64_t>(grid_, 1), std::max<int64_t>(grid_, 1)}) * 0.02);
  blocks_ = register_module("blocks", nn::Sequential());
  for (int64_t i = 0; i < config_.depths[0]; ++i) blocks_->push_back(TransformerBlock(dim, config_.heads[0]));
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim})));

  decoder_ = register_module("decoder", nn::Sequential());
  const auto n_blocks = static_cast<int64_t>(std::lround(std::log2(static_cast<double>(config_.patch_size))));
  int64_t in = dim;
  int64_t out = 64;
  for (int64_t i = 0; i < n_blocks; ++i) {
    append_upscaling_block(decoder_, in, out, config_.decoder_dropout);
    in = out;
    out = std::max<int64_t>(out / 2, 8);
  }
  decoder_->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
}

torch::Tensor ViTSegmenterImpl::positional(int64_t grid_h, int64_t grid_w) const {
  if (grid_h == pos_embed_.size(2) && grid_w == pos_embed_.size(3)) return pos_embed_;
  return F::interpolate(pos_embed_, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{grid_h, grid_w})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
}

MultiScaleFeatures ViTSegmenterImpl::encode(const torch::Tensor& images) {
  auto grid = patch_embed_(images);
  const int64_t b = grid.size(0), d = grid.size(1), gh = grid.size(2), gw = grid.size(3);
  grid = grid + positional(gh, gw);
  auto tokens = blocks_->forward(grid.flatten(2).transpose(1, 2));
  tokens = norm_(tokens);
  return MultiScaleFeatures{{tokens.transpose(1, 2).reshape({b, d, gh, gw}).contiguous()}};
}

torch::Tensor ViTSegmenterImpl::decode(const MultiScaleFeatures& features) { return decoder_->forward(features[0]); }

}  // namespace revisit
