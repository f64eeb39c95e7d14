#include "revisit/fusion.hpp"

#include <random>

#include "revisit/errors.hpp"

namespace revisit {

std::string to_string(FusionStrategy strategy) {
  switch (strategy) {
    case FusionStrategy::SingleImage: return "single";
    case FusionStrategy::AugmentedDataset: return "augmented";
    case FusionStrategy::MedianImage: return "median";
    case FusionStrategy::OutputFusion: return "output_fusion";
    case FusionStrategy::LatentTemporalMax: return "latent_max";
  }
  return "?";
}

FusionStrategy fusion_strategy_from_string(const std::string& text) {
  for (auto s : kStrategyOrder)
    if (to_string(s) == text) return s;
  throw ConfigError("unknown fusion kind '" + text +
                    "' (expected single|augmented|median|output_fusion|latent_max)");
}

std::string display_name(FusionStrategy strategy) {
  switch (strategy) {
    case FusionStrategy::SingleImage: return "Single Image";
    case FusionStrategy::AugmentedDataset: return "Augmented Dataset";
    case FusionStrategy::MedianImage: return "Median Image";
    case FusionStrategy::OutputFusion: return "Output Fusion";
    case FusionStrategy::LatentTemporalMax: return "Latent Temporal Max";
  }
  return "?";
}

bool consumes_all_revisits(FusionStrategy strategy) {
  return strategy == FusionStrategy::OutputFusion || strategy == FusionStrategy::LatentTemporalMax;
}

int select_single_index(int64_t revisits, std::uint64_t seed, SelectionMode mode) {
  if (revisits < 1) throw ShapeError("cannot select from an empty revisit stack");
  if (mode == SelectionMode::Eval || revisits == 1) return 0;
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<int>(0, static_cast<int>(revisits) - 1)(rng);
}

RevisitStack select_single(const RevisitStack& stack, std::uint64_t seed, SelectionMode mode) {
  const int idx = select_single_index(stack.revisits(), seed, mode);
  return RevisitStack{stack.data.narrow(0, idx, 1).contiguous(), stack.band_names, stack.location_id};
}

DatasetManifest expand_augmented(const DatasetManifest& manifest) {
  DatasetManifest out = manifest;
  out.locations.clear();
  for (const auto& e : manifest.locations) {
    if (e.split != Split::Train) {
      out.locations.push_back(e);
      continue;
    }
    for (int k = 0; k < e.revisit_count(); ++k) {
      LocationEntry single = e;
      single.id = e.id + "#" + std::to_string(k);
      single.revisits = {e.revisits[static_cast<size_t>(k)]};
      out.locations.push_back(std::move(single));
    }
  }
  return out;
}

torch::Tensor temporal_median(const torch::Tensor& values, int64_t dim) {
  const int64_t n = values.size(dim);
  if (n < 1) throw ShapeError("median over an empty axis");
  if (n == 1) return values.select(dim, 0);
  auto sorted = std::get<0>(values.sort(dim));
  if (n % 2 == 1) return sorted.select(dim, n / 2);
  return (sorted.select(dim, n / 2 - 1) + sorted.select(dim, n / 2)) / 2;
}

RevisitStack median_composite(const RevisitStack& stack) {
  if (stack.revisits() < 1) throw ShapeError("median of an empty revisit stack");
  return RevisitStack{temporal_median(stack.data, 0).unsqueeze(0).contiguous(), stack.band_names,
                      stack.location_id};
}

torch::Tensor temporal_max(const std::vector<torch::Tensor>& per_revisit) {
  if (per_revisit.empty()) throw ShapeError("temporal max over zero revisits");
  torch::Tensor best = per_revisit.front();
  for (size_t t = 1; t < per_revisit.size(); ++t) {
    if (per_revisit[t].sizes() != best.sizes())
      throw ShapeError("temporal max: revisit " + std::to_string(t) + " has a different shape");
    // strict comparison keeps the earliest revisit on ties
    best = torch::where(per_revisit[t] > best, per_revisit[t], best);
  }
  // one memory layout whatever T is, so downstream kernels see identical input
  return best.contiguous();
}

MultiScaleFeatures fuse_features(const std::vector<MultiScaleFeatures>& per_revisit, FeatureReducer reducer) {
  if (per_revisit.empty()) throw ShapeError("feature fusion over zero revisits");
  const size_t n_scales = per_revisit.front().size();
  for (const auto& f : per_revisit)
    if (f.size() != n_scales) throw ShapeError("feature fusion: revisits disagree in scale count");
  MultiScaleFeatures out;
  for (size_t s = 0; s < n_scales; ++s) {
    std::vector<torch::Tensor> level;
    level.reserve(per_revisit.size());
    for (const auto& f : per_revisit) {
      if (f[s].sizes() != per_revisit.front()[s].sizes())
        throw ShapeError("feature fusion: shape mismatch at scale " + std::to_string(s));
      level.push_back(f[s]);
    }
    if (reducer == FeatureReducer::Max) {
      out.scales.push_back(temporal_max(level));
    } else {
      out.scales.push_back(level.size() == 1 ? level.front() : torch::stack(level, 0).mean(0));
    }
  }
  return out;
}

torch::Tensor output_fuse_pre_threshold(const std::vector<torch::Tensor>& maps) {
  if (maps.empty()) throw ShapeError("output fusion over zero maps");
  for (const auto& m : maps)
    if (m.sizes() != maps.front().sizes()) throw ShapeError("output fusion: maps differ in shape");
  if (maps.size() == 1) return maps.front();
  return temporal_median(torch::stack(maps, 0), 0);
}

torch::Tensor output_fuse(const std::vector<torch::Tensor>& maps, TruthKind task) {
  auto median = output_fuse_pre_threshold(maps);
  if (task == TruthKind::DensityMap) return median;
  return (median > 0).to(median.scalar_type());
}

}  // namespace revisit
