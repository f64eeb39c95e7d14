#include "revisit/window_transformer.hpp"

#include <algorithm>
#include <cmath>

#include "revisit/errors.hpp"

namespace revisit {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

// Index into a (2W-1)^2 bias table for every (query, key) pair of a w x w window.
torch::Tensor relative_position_index(int64_t w, int64_t table_window) {
  const int64_t n = w * w;
  const int64_t span = 2 * table_window - 1;
  std::vector<int64_t> idx(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      const int64_t dy = i / w - j / w + table_window - 1;
      const int64_t dx = i % w - j % w + table_window - 1;
      idx[static_cast<size_t>(i * n + j)] = dy * span + dx;
    }
  return torch::tensor(idx, torch::kLong);
}

// Additive mask separating regions that wrapped around during the cyclic shift.
torch::Tensor shifted_window_mask(int64_t height, int64_t width, int64_t w, int64_t shift,
                                  torch::TensorOptions opts) {
  auto region = [&](int64_t pos, int64_t extent) -> int64_t {
    if (pos < extent - w) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  std::vector<int64_t> ids(static_cast<size_t>(height * width));
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) ids[static_cast<size_t>(y * width + x)] = region(y, height) * 3 + region(x, width);
  auto grid = torch::tensor(ids, torch::kLong).view({height / w, w, width / w, w}).permute({0, 2, 1, 3}).reshape({-1, w * w});
  auto differs = grid.unsqueeze(1) != grid.unsqueeze(2);
  return torch::zeros(differs.sizes(), opts).masked_fill(differs, -100.0);
}

}  // namespace

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window)
    : heads_(heads), window_(window), scale_(1.0 / std::sqrt(static_cast<double>(dim / heads))) {
  qkv_ = register_module("qkv", nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", nn::Linear(dim, dim));
  bias_table_ = register_parameter("relative_position_bias_table",
                                   torch::randn({(2 * window - 1) * (2 * window - 1), heads}) * 0.02);
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& windows, int64_t window, const torch::Tensor& mask) {
  const int64_t bw = windows.size(0), n = windows.size(1), c = windows.size(2);
  auto qkv = qkv_(windows).reshape({bw, n, 3, heads_, c / heads_}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0] * scale_;
  auto k = qkv[1];
  auto v = qkv[2];
  auto attn = q.matmul(k.transpose(-2, -1));

  auto bias = bias_table_.index_select(0, relative_position_index(window, window_)).view({n, n, heads_}).permute({2, 0, 1});
  attn = attn + bias.unsqueeze(0);
  if (mask.defined()) {
    const int64_t nw = mask.size(0);
    attn = attn.view({bw / nw, nw, heads_, n, n}) + mask.unsqueeze(1).unsqueeze(0);
    attn = attn.view({bw, heads_, n, n});
  }
  attn = torch::softmax(attn, -1);
  auto out = attn.matmul(v).transpose(1, 2).reshape({bw, n, c});
  return proj_(out);
}

WindowBlockImpl::WindowBlockImpl(int64_t dim, int64_t heads, int64_t window, bool shifted)
    : window_(window), shifted_(shifted) {
  norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention(dim, heads, window));
  norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  mlp_ = register_module("mlp", nn::Sequential(nn::Linear(dim, 4 * dim), nn::GELU(), nn::Linear(4 * dim, dim)));
}

torch::Tensor WindowBlockImpl::forward(const torch::Tensor& x) {
  const int64_t b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  const int64_t win = std::min({window_, h, w});
  const int64_t shift = (shifted_ && std::min(h, w) > window_) ? win / 2 : 0;

  auto y = norm1_(x);
  const int64_t pad_b = (win - h % win) % win;
  const int64_t pad_r = (win - w % win) % win;
  if (pad_b || pad_r) y = F::pad(y, F::PadFuncOptions({0, 0, 0, pad_r, 0, pad_b}));
  const int64_t hp = h + pad_b, wp = w + pad_r;

  torch::Tensor mask;
  if (shift) {
    y = torch::roll(y, {-shift, -shift}, {1, 2});
    mask = shifted_window_mask(hp, wp, win, shift, y.options());
  }
  auto windows = y.view({b, hp / win, win, wp / win, win, c}).permute({0, 1, 3, 2, 4, 5}).reshape({-1, win * win, c});
  auto attended = attn_(windows, win, mask);
  y = attended.view({b, hp / win, wp / win, win, win, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b, hp, wp, c});
  if (shift) y = torch::roll(y, {shift, shift}, {1, 2});
  if (pad_b || pad_r) y = y.slice(1, 0, h).slice(2, 0, w);

  auto out = x + y;
  return out + mlp_->forward(norm2_(out));
}

PatchMergingImpl::PatchMergingImpl(int64_t dim) {
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({4 * dim})));
  reduction_ = register_module("reduction", nn::Linear(nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  if (x.size(1) % 2 || x.size(2) % 2) throw ShapeError("patch merging needs even spatial dims");
  auto x0 = x.slice(1, 0, x.size(1), 2).slice(2, 0, x.size(2), 2);
  auto x1 = x.slice(1, 1, x.size(1), 2).slice(2, 0, x.size(2), 2);
  auto x2 = x.slice(1, 0, x.size(1), 2).slice(2, 1, x.size(2), 2);
  auto x3 = x.slice(1, 1, x.size(1), 2).slice(2, 1, x.size(2), 2);
  return reduction_(norm_(torch::cat({x0, x1, x2, x3}, -1)));
}

FeaturePyramidImpl::FeaturePyramidImpl(const std::vector<int64_t>& in_channels, int64_t width) {
  laterals_ = register_module("laterals", nn::ModuleList());
  for (int64_t c : in_channels) laterals_->push_back(nn::Conv2d(nn::Conv2dOptions(c, width, 1)));
  smooth_ = register_module("smooth", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)));
}

torch::Tensor FeaturePyramidImpl::forward(const std::vector<torch::Tensor>& features) {
  torch::Tensor merged;
  for (size_t i = features.size(); i-- > 0;) {
    auto lateral = laterals_[i]->as<nn::Conv2dImpl>()->forward(features[i]);
    if (merged.defined()) {
      merged = lateral + F::interpolate(merged, F::InterpolateFuncOptions()
                                                    .size(std::vector<int64_t>{lateral.size(2), lateral.size(3)})
                                                    .mode(torch::kNearest));
    } else {
      merged = lateral;
    }
  }
  return smooth_(merged);
}

WindowTransformerSegmenterImpl::WindowTransformerSegmenterImpl(const ModelConfig& config)
    : SegmentationModelImpl(config) {
  const int64_t c = config_.embed_dim;
  patch_embed_ = register_module(
      "patch_embed", nn::Conv2d(nn::Conv2dOptions(config_.in_channels, c, config_.patch_size).stride(config_.patch_size)));
  embed_norm_ = register_module("embed_norm", nn::LayerNorm(nn::LayerNormOptions({c})));
  stages_ = register_module("stages", nn::ModuleList());
  merges_ = register_module("merges", nn::ModuleList());
  out_norms_ = register_module("out_norms", nn::ModuleList());
  std::vector<int64_t> widths;
  for (int64_t s = 0; s < 4; ++s) {
    const int64_t dim = c << s;
    widths.push_back(dim);
    nn::Sequential blocks;
    for (int64_t b = 0; b < config_.depths[static_cast<size_t>(s)]; ++b)
      blocks->push_back(WindowBlock(dim, config_.heads[static_cast<size_t>(s)], config_.window_size, b % 2 == 1));
    stages_->push_back(blocks);
    out_norms_->push_back(nn::LayerNorm(nn::LayerNormOptions({dim})));
    if (s < 3) merges_->push_back(PatchMerging(dim));
  }
  fpn_ = register_module("fpn", FeaturePyramid(widths, config_.fpn_width));

  head_ = register_module("head", nn::Sequential());
  int64_t in = config_.fpn_width;
  for (int64_t b = 0; b < config_.upsample_blocks; ++b) {
    const int64_t out = std::max<int64_t>(in / 2, 8);
    head_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 2).stride(2)));
    head_->push_back(nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
    head_->push_back(nn::ReLU());
    in = out;
  }
  head_->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
}

MultiScaleFeatures WindowTransformerSegmenterImpl::encode(const torch::Tensor& images) {
  auto x = embed_norm_(patch_embed_(images).permute({0, 2, 3, 1}));
  MultiScaleFeatures f;
  for (size_t s = 0; s < 4; ++s) {
    x = stages_[s]->as<nn::SequentialImpl>()->forward(x);
    auto out = out_norms_[s]->as<nn::LayerNormImpl>()->forward(x);
    f.scales.push_back(out.permute({0, 3, 1, 2}).contiguous());
    if (s < 3) x = merges_[s]->as<PatchMergingImpl>()->forward(x);
  }
  return f;
}

torch::Tensor WindowTransformerSegmenterImpl::decode(const MultiScaleFeatures& features) {
  return head_->forward(fpn_(features.scales));
}

}  // namespace revisit
