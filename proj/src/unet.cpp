#include "revisit/unet.hpp"

namespace revisit {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

void append_conv_bn_relu(nn::Sequential& seq, int64_t in, int64_t out) {
  seq->push_back(conv3x3(in, out));
  seq->push_back(nn::BatchNorm2d(out));
  seq->push_back(nn::ReLU());
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride) {
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels, stride));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_ = register_module(
        "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)),
                                   nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1_(conv1_(x)));
  out = bn2_(conv2_(out));
  return torch::relu(out + (shortcut_ ? shortcut_->forward(x) : x));
}

DecoderBlockImpl::DecoderBlockImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels) {
  nn::Sequential convs;
  append_conv_bn_relu(convs, in_channels + skip_channels, out_channels);
  append_conv_bn_relu(convs, out_channels, out_channels);
  convs_ = register_module("convs", convs);
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  return convs_->forward(torch::cat({upsample2x(x), skip}, 1));
}

UNetImpl::UNetImpl(const ModelConfig& config) : SegmentationModelImpl(config) {
  const auto& w = config_.widths;
  const auto& d = config_.depths;
  stem_ = register_module("stem", nn::Sequential(conv3x3(config_.in_channels, w[0], 2), nn::BatchNorm2d(w[0]), nn::ReLU()));

  stages_ = register_module("stages", nn::ModuleList());
  int64_t in = w[0];
  for (size_t s = 0; s < 4; ++s) {
    nn::Sequential stage;
    for (int64_t b = 0; b < d[s]; ++b) stage->push_back(ResidualBlock(b == 0 ? in : w[s], w[s], b == 0 ? 2 : 1));
    stages_->push_back(stage);
    in = w[s];
  }

  // skips, coarse to fine: stage3 (H/16), stage2, stage1, stem (H/2)
  decoder_ = register_module("decoder", nn::ModuleList());
  const int64_t skip_channels[] = {w[2], w[1], w[0], w[0]};
  in = w[3];
  for (int64_t skip : skip_channels) {
    decoder_->push_back(DecoderBlock(in, skip, skip));
    in = skip;
  }
  const int64_t last = std::max<int64_t>(w[0] / 2, 4);
  nn::Sequential final;
  append_conv_bn_relu(final, in, last);
  final->push_back(nn::Conv2d(nn::Conv2dOptions(last, 1, 1)));
  final_ = register_module("final", final);
}

MultiScaleFeatures UNetImpl::encode(const torch::Tensor& images) {
  MultiScaleFeatures f;
  auto x = stem_->forward(images);
  f.scales.push_back(x);
  for (const auto& stage : *stages_) {
    x = stage->as<nn::SequentialImpl>()->forward(x);
    f.scales.push_back(x);
  }
  return f;
}

torch::Tensor UNetImpl::decode(const MultiScaleFeatures& features) {
  auto x = features[4];
  for (size_t i = 0; i < 4; ++i) x = decoder_[i]->as<DecoderBlockImpl>()->forward(x, features[3 - i]);
  return final_->forward(upsample2x(x));
}

}  // namespace revisit
