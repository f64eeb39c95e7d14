#include "revisit/backbones.hpp"

#include <algorithm>

#include "revisit/errors.hpp"
#include "revisit/unet.hpp"
#include "revisit/vit.hpp"
#include "revisit/window_transformer.hpp"

namespace revisit {

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::UNet: return "unet";
    case ModelFamily::HierarchicalWindowTransformer: return "swin";
    case ModelFamily::PlainViT: return "vit";
  }
  return "?";
}

ModelFamily model_family_from_string(const std::string& text) {
  if (text == "unet") return ModelFamily::UNet;
  if (text == "swin") return ModelFamily::HierarchicalWindowTransformer;
  if (text == "vit") return ModelFamily::PlainViT;
  throw ConfigError("unknown model family '" + text + "' (expected unet|swin|vit)");
}

std::string to_string(EncoderSize size) {
  switch (size) {
    case EncoderSize::Small: return "small";
    case EncoderSize::Base: return "base";
    case EncoderSize::Large: return "large";
  }
  return "?";
}

EncoderSize encoder_size_from_string(const std::string& text) {
  if (text == "small") return EncoderSize::Small;
  if (text == "base") return EncoderSize::Base;
  if (text == "large") return EncoderSize::Large;
  throw ConfigError("unknown encoder size '" + text + "' (expected small|base|large)");
}

std::string to_string(HeadKind head) { return head == HeadKind::BinarySegmentation ? "binary" : "density"; }

HeadKind head_kind_from_string(const std::string& text) {
  if (text == "binary") return HeadKind::BinarySegmentation;
  if (text == "density") return HeadKind::DensityRegression;
  throw ConfigError("unknown head '" + text + "' (expected binary|density)");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  const int size = static_cast<int>(encoder_size);
  switch (family) {
    case ModelFamily::UNet: {
      static const std::vector<int64_t> widths_by_size[] = {{8, 16, 32, 64}, {32, 64, 128, 256}, {64, 128, 256, 512}};
      static const std::vector<int64_t> depths_by_size[] = {{1, 1, 1, 1}, {2, 2, 2, 2}, {2, 2, 2, 2}};
      if (c.widths.empty()) c.widths = widths_by_size[size];
      if (c.depths.empty()) c.depths = depths_by_size[size];
      break;
    }
    case ModelFamily::HierarchicalWindowTransformer: {
      static const int64_t embed_by_size[] = {16, 32, 48};
      static const std::vector<int64_t> depths_by_size[] = {{1, 1, 1, 1}, {2, 2, 2, 2}, {2, 2, 4, 2}};
      static const std::vector<int64_t> heads_by_size[] = {{1, 2, 4, 8}, {1, 2, 4, 8}, {2, 4, 8, 16}};
      if (c.embed_dim == 0) c.embed_dim = embed_by_size[size];
      if (c.depths.empty()) c.depths = depths_by_size[size];
      if (c.heads.empty()) c.heads = heads_by_size[size];
      if (c.window_size == 0) c.window_size = 7;
      if (c.patch_size == 0) c.patch_size = 4;
      if (c.fpn_width == 0) c.fpn_width = 64;
      if (c.upsample_blocks == 0) c.upsample_blocks = 2;
      break;
    }
    case ModelFamily::PlainViT: {
      static const int64_t dim_by_size[] = {96, 192, 256};
      static const int64_t depth_by_size[] = {4, 6, 8};
      static const int64_t heads_by_size[] = {3, 6, 8};
      if (c.embed_dim == 0) c.embed_dim = dim_by_size[size];
      if (c.depths.empty()) c.depths = {depth_by_size[size]};
      if (c.heads.empty()) c.heads = {heads_by_size[size]};
      if (c.patch_size == 0) c.patch_size = 16;
      if (c.decoder_dropout < 0) c.decoder_dropout = 0.1;
      break;
    }
  }
  return c;
}

int64_t ModelConfig::spatial_multiple() const {
  auto r = resolved();
  switch (r.family) {
    case ModelFamily::UNet: return 32;
    case ModelFamily::HierarchicalWindowTransformer: return r.patch_size * 8;
    case ModelFamily::PlainViT: return r.patch_size;
  }
  return 1;
}

void ModelConfig::validate() const {
  auto r = resolved();
  auto positive = [](const std::vector<int64_t>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](int64_t x) { return x > 0; });
  };
  if (r.in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (r.image_size < 1) throw ConfigError("image_size must be >= 1");
  switch (r.family) {
    case ModelFamily::UNet:
      if (r.widths.size() != 4 || !positive(r.widths)) throw ConfigError("U-Net needs four positive stage widths");
      if (r.depths.size() != 4 || !positive(r.depths)) throw ConfigError("U-Net needs four positive stage depths");
      break;
    case ModelFamily::HierarchicalWindowTransformer:
      if (r.depths.size() != 4 || !positive(r.depths)) throw ConfigError("window transformer needs four stage depths");
      if (r.heads.size() != 4 || !positive(r.heads)) throw ConfigError("window transformer needs four head counts");
      for (size_t s = 0; s < 4; ++s)
        if (((r.embed_dim << s) % r.heads[s]) != 0)
          throw ConfigError("stage " + std::to_string(s) + " width is not divisible by its head count");
      if (r.window_size < 1 || r.patch_size < 1 || r.fpn_width < 1 || r.upsample_blocks < 0)
        throw ConfigError("window transformer sizes must be positive");
      if ((int64_t{1} << r.upsample_blocks) != r.patch_size)
        throw ConfigError("upsampling blocks must recover the patch stride (2^blocks == patch_size)");
      break;
    case ModelFamily::PlainViT:
      if (r.depths.empty() || r.depths[0] < 1 || r.heads.empty() || r.heads[0] < 1)
        throw ConfigError("ViT needs a positive depth and head count");
      if (r.embed_dim % r.heads[0] != 0) throw ConfigError("ViT embed_dim must be divisible by heads");
      if (r.patch_size < 2 || (r.patch_size & (r.patch_size - 1)) != 0)
        throw ConfigError("ViT patch_size must be a power of two >= 2");
      if (r.decoder_dropout < 0 || r.decoder_dropout >= 1) throw ConfigError("decoder_dropout must lie in [0,1)");
      break;
  }
}

json ModelConfig::to_json() const {
  json j{{"family", to_string(family)},
         {"in_channels", in_channels},
         {"encoder_size", to_string(encoder_size)},
         {"image_size", image_size},
         {"fusion", to_string(fusion)},
         {"reducer", reducer == FeatureReducer::Max ? "max" : "mean"},
         {"head", to_string(head)},
         {"seed", seed}};
  if (!widths.empty()) j["widths"] = widths;
  if (!depths.empty()) j["depths"] = depths;
  if (embed_dim) j["embed_dim"] = embed_dim;
  if (!heads.empty()) j["heads"] = heads;
  if (window_size) j["window_size"] = window_size;
  if (patch_size) j["patch_size"] = patch_size;
  if (fpn_width) j["fpn_width"] = fpn_width;
  if (upsample_blocks) j["upsample_blocks"] = upsample_blocks;
  if (decoder_dropout >= 0) j["decoder_dropout"] = decoder_dropout;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  static const std::vector<std::string> known = {
      "family", "in_channels", "encoder_size", "image_size", "widths", "depths", "embed_dim", "heads",
      "window_size", "patch_size", "fpn_width", "upsample_blocks", "decoder_dropout", "fusion", "reducer", "head",
      "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown model config key '" + key + "'");
  ModelConfig c;
  try {
    c.family = model_family_from_string(j.at("family").get<std::string>());
    c.in_channels = j.value("in_channels", c.in_channels);
    if (j.contains("encoder_size")) c.encoder_size = encoder_size_from_string(j["encoder_size"].get<std::string>());
    c.image_size = j.value("image_size", c.image_size);
    c.widths = j.value("widths", c.widths);
    c.depths = j.value("depths", c.depths);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.heads = j.value("heads", c.heads);
    c.window_size = j.value("window_size", c.window_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.fpn_width = j.value("fpn_width", c.fpn_width);
    c.upsample_blocks = j.value("upsample_blocks", c.upsample_blocks);
    c.decoder_dropout = j.value("decoder_dropout", c.decoder_dropout);
    if (j.contains("fusion")) c.fusion = fusion_strategy_from_string(j["fusion"].get<std::string>());
    if (j.contains("reducer")) {
      auto r = j["reducer"].get<std::string>();
      if (r == "max")
        c.reducer = FeatureReducer::Max;
      else if (r == "mean")
        c.reducer = FeatureReducer::Mean;
      else
        throw ConfigError("unknown reducer '" + r + "' (expected max|mean)");
    }
    if (j.contains("head")) c.head = head_kind_from_string(j["head"].get<std::string>());
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

SegmentationModelImpl::SegmentationModelImpl(ModelConfig config) : config_(config.resolved()) { config_.validate(); }

void SegmentationModelImpl::check_images(const torch::Tensor& images) const {
  if (images.dim() != 4) throw ShapeError("encoder input must be [B, C, H, W]");
  if (images.size(1) != config_.in_channels)
    throw ShapeError("channel mismatch: model expects " + std::to_string(config_.in_channels) + " bands, got " +
                     std::to_string(images.size(1)));
  const int64_t m = config_.spatial_multiple();
  if (images.size(2) % m != 0 || images.size(3) % m != 0)
    throw ShapeError("input " + std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)) +
                     " is not divisible by " + std::to_string(m));
}

torch::Tensor SegmentationModelImpl::activate(const torch::Tensor& raw) const {
  auto map = raw.squeeze(1);
  return config_.head == HeadKind::DensityRegression ? torch::sigmoid(map) : map;
}

torch::Tensor SegmentationModelImpl::forward_single(const torch::Tensor& images) {
  check_images(images);
  return activate(decode(encode(images)));
}

std::vector<MultiScaleFeatures> SegmentationModelImpl::encode_revisits(const torch::Tensor& stacks) {
  if (stacks.dim() != 5) throw ShapeError("model input must be [B, T, C, H, W]");
  std::vector<MultiScaleFeatures> out;
  out.reserve(static_cast<size_t>(stacks.size(1)));
  for (int64_t t = 0; t < stacks.size(1); ++t) {
    auto images = stacks.select(1, t).contiguous();
    check_images(images);
    out.push_back(encode(images));
  }
  return out;
}

torch::Tensor SegmentationModelImpl::forward(const torch::Tensor& stacks) { return forward(stacks, config_.fusion); }

torch::Tensor SegmentationModelImpl::forward(const torch::Tensor& stacks, FusionStrategy strategy) {
  if (stacks.dim() != 5) throw ShapeError("model input must be [B, T, C, H, W]");
  const int64_t T = stacks.size(1);
  if (T < 1) throw ShapeError("model input needs at least one revisit");
  switch (strategy) {
    case FusionStrategy::SingleImage:
    case FusionStrategy::AugmentedDataset:
    case FusionStrategy::MedianImage:
      if (T != 1)
        throw ShapeError(display_name(strategy) + " expects a prepared single-revisit input, got T=" +
                         std::to_string(T));
      return forward_single(stacks.select(1, 0));
    case FusionStrategy::OutputFusion: {
      std::vector<torch::Tensor> maps;
      for (int64_t t = 0; t < T; ++t) maps.push_back(forward_single(stacks.select(1, t).contiguous()));
      return output_fuse_pre_threshold(maps);
    }
    case FusionStrategy::LatentTemporalMax: {
      auto fused = fuse_features(encode_revisits(stacks), config_.reducer);
      return activate(decode(fused));
    }
  }
  throw ConfigError("unhandled fusion strategy");
}

SegmentationOutput SegmentationModelImpl::predict(const RevisitStack& stack) { return predict(stack, config_.fusion); }

SegmentationOutput SegmentationModelImpl::predict(const RevisitStack& stack, FusionStrategy strategy) {
  return SegmentationOutput{forward(stack.data.unsqueeze(0), strategy).squeeze(0), config_.head};
}

int64_t SegmentationModelImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

SegmentationModel build_model(const ModelConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);
  switch (config.family) {
    case ModelFamily::UNet: return std::make_shared<UNetImpl>(config);
    case ModelFamily::HierarchicalWindowTransformer: return std::make_shared<WindowTransformerSegmenterImpl>(config);
    case ModelFamily::PlainViT: return std::make_shared<ViTSegmenterImpl>(config);
  }
  throw ConfigError("unhandled model family");
}

}  // namespace revisit
