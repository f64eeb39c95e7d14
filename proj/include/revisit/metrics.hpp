#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace revisit {

using json = nlohmann::json;

/// |pred AND truth| / |pred OR truth| over nonzero pixels; 1.0 when both are empty.
double compute_iou(const torch::Tensor& pred_mask, const torch::Tensor& true_mask);

/// Intersection and union pixel counts, for dataset-pooled IoU.
struct OverlapCounts {
  int64_t intersection = 0;
  int64_t union_ = 0;

  OverlapCounts& operator+=(const OverlapCounts& o) {
    intersection += o.intersection;
    union_ += o.union_;
    return *this;
  }
  double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
};

OverlapCounts overlap_counts(const torch::Tensor& pred_mask, const torch::Tensor& true_mask);

/// Mean squared pixel difference.
double compute_mse(const torch::Tensor& pred_density, const torch::Tensor& true_density);

/// False-positive behaviour on images that contain no target.
struct NegativeStats {
  size_t images = 0;
  size_t flagged = 0;  // images with at least one positive pixel
  double fraction_flagged = 0.0;
  /// Lower bucket edges; bucket k holds counts in [edges[k], edges[k+1]).
  std::vector<int64_t> bucket_edges{0, 1, 100, 1000};
  std::vector<size_t> histogram;
  std::vector<int64_t> positive_counts;

  /// Of the flagged images, how many have fewer than 100 positive pixels.
  size_t flagged_below_100() const;

  json to_json() const;
  std::string summary() const;
};

/// Throws InvalidSpecError on an empty set.
NegativeStats negative_stats(const std::vector<torch::Tensor>& predicted_masks);

/// Mean and standard error (sample std with n-1, divided by sqrt(n)).
/// A single value reports standard error 0 with `single_run` set.
struct RunAggregate {
  double mean = 0.0;
  double standard_error = 0.0;
  size_t n = 0;
  bool single_run = false;
};

RunAggregate aggregate_runs(const std::vector<double>& values);

/// "0.481 ± 0.004" with `decimals` places, plus " (n=1)" for single runs.
std::string format_mean_stderr(const RunAggregate& agg, int decimals);

}  // namespace revisit
