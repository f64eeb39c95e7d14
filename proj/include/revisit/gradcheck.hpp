#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "revisit/backbones.hpp"
#include "revisit/train.hpp"

namespace revisit {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-3;
  /// Entries sampled per parameter tensor, and overall cap.
  int entries_per_tensor = 2;
  int max_entries = 96;
  std::uint64_t seed = 0;
  /// Relative error denominator floor, so near-zero gradients compare absolutely.
  double denominator_floor = 1e-6;
  /// Max-fusion sites whose top-two gap is below this count as tied.
  double tie_gap = 1e-5;
  int max_retries = 8;
  /// Std of the noise added to the original input on each resample.
  double resample_noise = 0.1;
  /// Std of seeded noise added to every parameter first, which moves the
  /// check point off exact zeros of fresh initialisation (zero biases on
  /// dead patches sit exactly on a ReLU kink).
  double parameter_jitter = 0.01;
};

struct GradCheckResult {
  bool passed = false;
  double max_relative_error = 0.0;
  size_t checked = 0;
  std::string worst_entry;
  int retries = 0;
  /// Entries replaced because their difference quotient crossed a kink.
  size_t kink_skips = 0;
  /// Too many replacements: the sample point itself is non-smooth.
  bool non_smooth = false;
  std::string message;

  json to_json() const;
};

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Compares `analytic` (one tensor per parameter, same shapes) with central
/// differences of `loss_fn` on a seeded subset of entries. An entry whose
/// quotients at epsilon and epsilon/2 disagree, or whose one-sided slopes jump
/// by an amount that does not shrink with the step, is replaced by another
/// entry of the same tensor; more than a quarter of such replacements fails
/// the check.
GradCheckResult compare_gradients(const std::function<torch::Tensor()>& loss_fn, const NamedTensors& params,
                                  const std::vector<torch::Tensor>& analytic, const GradCheckOptions& options = {});

/// Backpropagates `loss_fn` for the analytic side, then compare_gradients.
GradCheckResult check_gradients(const std::function<torch::Tensor()>& loss_fn, const NamedTensors& params,
                                const GradCheckOptions& options = {});

/// True when any max-fusion site of `stacks` [B, T, C, H, W] has its top two
/// revisits within `gap` (exact zero ties, e.g. from dead ReLUs, excluded).
bool has_fusion_tie(SegmentationModelImpl& model, const torch::Tensor& stacks, double gap);

/// Whole-model check: converts the model to double in eval mode, jitters its
/// parameters, then checks every parameter tensor under the model's fusion
/// strategy and the head's loss. The input is resampled (bounded by
/// max_retries) while a fusion site is tied or the sample is non-smooth.
GradCheckResult gradient_check(SegmentationModelImpl& model, const torch::Tensor& stacks, const torch::Tensor& truth,
                               const GradCheckOptions& options = {});

/// Small per-family configuration for finite-difference checks, plus the
/// square input size it expects.
std::pair<ModelConfig, int64_t> tiny_gradcheck_config(ModelFamily family, int64_t in_channels);

}  // namespace revisit
