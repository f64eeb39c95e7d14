#include "revisit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "revisit/errors.hpp"

namespace revisit {

OverlapCounts overlap_counts(const torch::Tensor& pred_mask, const torch::Tensor& true_mask) {
  if (pred_mask.sizes() != true_mask.sizes()) throw ShapeError("IoU: prediction and truth shapes differ");
  auto p = pred_mask != 0;
  auto t = true_mask != 0;
  return OverlapCounts{(p & t).sum().item<int64_t>(), (p | t).sum().item<int64_t>()};
}

double compute_iou(const torch::Tensor& pred_mask, const torch::Tensor& true_mask) {
  return overlap_counts(pred_mask, true_mask).iou();
}

double compute_mse(const torch::Tensor& pred_density, const torch::Tensor& true_density) {
  if (pred_density.sizes() != true_density.sizes()) throw ShapeError("MSE: prediction and truth shapes differ");
  if (pred_density.numel() == 0) throw ShapeError("MSE of empty maps");
  auto diff = pred_density.to(torch::kFloat64) - true_density.to(torch::kFloat64);
  return (diff * diff).mean().item<double>();
}

size_t NegativeStats::flagged_below_100() const {
  size_t n = 0;
  for (auto c : positive_counts)
    if (c > 0 && c < 100) ++n;
  return n;
}

json NegativeStats::to_json() const {
  json buckets = json::array();
  for (size_t k = 0; k < bucket_edges.size(); ++k) {
    json b{{"min", bucket_edges[k]}, {"count", histogram.at(k)}};
    if (k + 1 < bucket_edges.size()) b["max_exclusive"] = bucket_edges[k + 1];
    buckets.push_back(b);
  }
  return json{{"images", images},
              {"flagged", flagged},
              {"fraction_flagged", fraction_flagged},
              {"flagged_below_100_pixels", flagged_below_100()},
              {"histogram", buckets},
              {"positive_counts", positive_counts}};
}

std::string NegativeStats::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%.1f%% of negative images flagged (%zu of %zu); %zu of the flagged have fewer than 100 positive pixels",
                100.0 * fraction_flagged, flagged, images, flagged_below_100());
  return buf;
}

NegativeStats negative_stats(const std::vector<torch::Tensor>& predicted_masks) {
  if (predicted_masks.empty()) throw InvalidSpecError("negative-image report needs at least one negative image");
  NegativeStats s;
  s.images = predicted_masks.size();
  s.histogram.assign(s.bucket_edges.size(), 0);
  for (const auto& m : predicted_masks) {
    const int64_t count = (m != 0).sum().item<int64_t>();
    s.positive_counts.push_back(count);
    if (count > 0) ++s.flagged;
    size_t k = s.bucket_edges.size() - 1;
    while (k > 0 && count < s.bucket_edges[k]) --k;
    ++s.histogram[k];
  }
  s.fraction_flagged = static_cast<double>(s.flagged) / static_cast<double>(s.images);
  return s;
}

RunAggregate aggregate_runs(const std::vector<double>& values) {
  if (values.empty()) throw InvalidSpecError("cannot aggregate an empty list of runs");
  RunAggregate a;
  a.n = values.size();
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
  if (a.n == 1) {
    a.single_run = true;
    return a;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.standard_error = std::sqrt(ss / static_cast<double>(a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  return a;
}

std::string format_mean_stderr(const RunAggregate& agg, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, agg.mean, decimals, agg.standard_error);
  std::string out = buf;
  if (agg.single_run) out += " (n=1)";
  return out;
}

}  // namespace revisit
