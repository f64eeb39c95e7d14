#include "revisit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "revisit/errors.hpp"
#include "revisit/hash.hpp"

namespace revisit {

std::string to_string(LossKind loss) {
  switch (loss) {
    case LossKind::BCEWithLogits: return "bce";
    case LossKind::BCEDice: return "bce_dice";
    case LossKind::MSE: return "mse";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& text) {
  if (text == "bce") return LossKind::BCEWithLogits;
  if (text == "bce_dice") return LossKind::BCEDice;
  if (text == "mse") return LossKind::MSE;
  throw ConfigError("unknown loss '" + text + "' (expected bce|bce_dice|mse)");
}

std::string to_string(OptimizerKind opt) { return opt == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + text + "' (expected adam|sgd)");
}

void TrainConfig::validate(HeadKind head) const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (dice_weight < 0) throw ConfigError("dice_weight must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  const bool density = head == HeadKind::DensityRegression;
  if (density != (loss == LossKind::MSE))
    throw ConfigError("loss '" + to_string(loss) + "' does not fit the " + to_string(head) + " head");
}

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"optimizer", to_string(optimizer)},
              {"loss", to_string(loss)},
              {"dice_weight", dice_weight},
              {"augment", augment},
              {"augment_ranges",
               {{"flip_prob", augment_ranges.flip_prob},
                {"affine_prob", augment_ranges.affine_prob},
                {"max_rotation_deg", augment_ranges.max_rotation_deg},
                {"max_translate", augment_ranges.max_translate},
                {"min_scale", augment_ranges.min_scale},
                {"max_scale", augment_ranges.max_scale}}},
              {"deterministic", deterministic},
              {"eval_every", eval_every}};
}

namespace {

void check_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown " + where + " key '" + key + "'");
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "optimizer", "loss", "dice_weight", "augment", "augment_ranges",
              "deterministic", "eval_every"},
             "train config");
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("optimizer")) c.optimizer = optimizer_kind_from_string(j["optimizer"].get<std::string>());
    if (j.contains("loss")) c.loss = loss_kind_from_string(j["loss"].get<std::string>());
    c.dice_weight = j.value("dice_weight", c.dice_weight);
    c.augment = j.value("augment", c.augment);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.eval_every = j.value("eval_every", c.eval_every);
    if (j.contains("augment_ranges")) {
      const auto& a = j["augment_ranges"];
      check_keys(a, {"flip_prob", "affine_prob", "max_rotation_deg", "max_translate", "min_scale", "max_scale"},
                 "augment_ranges");
      auto& r = c.augment_ranges;
      r.flip_prob = a.value("flip_prob", r.flip_prob);
      r.affine_prob = a.value("affine_prob", r.affine_prob);
      r.max_rotation_deg = a.value("max_rotation_deg", r.max_rotation_deg);
      r.max_translate = a.value("max_translate", r.max_translate);
      r.min_scale = a.value("min_scale", r.min_scale);
      r.max_scale = a.value("max_scale", r.max_scale);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  return c;
}

json DataOptions::to_json() const {
  json j{{"revisits", revisits},
         {"image_size", image_size},
         {"normalization", to_string(normalization)},
         {"constant", constant},
         {"normalization_sample", normalization_sample},
         {"seed", seed}};
  if (bands) j["bands"] = bands->to_json();
  return j;
}

DataOptions DataOptions::from_json(const json& j) {
  check_keys(j, {"revisits", "image_size", "bands", "normalization", "constant", "normalization_sample", "seed"},
             "data options");
  DataOptions d;
  try {
    d.revisits = j.value("revisits", d.revisits);
    d.image_size = j.value("image_size", d.image_size);
    if (j.contains("normalization"))
      d.normalization = normalization_mode_from_string(j["normalization"].get<std::string>());
    d.constant = j.value("constant", d.constant);
    d.normalization_sample = j.value("normalization_sample", d.normalization_sample);
    d.seed = j.value("seed", d.seed);
    if (j.contains("bands") && !j["bands"].is_null()) {
      if (j["bands"].is_string()) {
        const auto name = j["bands"].get<std::string>();
        const auto specs = default_band_specs();
        auto it = specs.find(name);
        if (it == specs.end()) throw ConfigError("unknown band composition '" + name + "'");
        d.bands = it->second;
      } else {
        d.bands = BandSpec::from_json(j["bands"]);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data options: ") + e.what());
  }
  if (d.image_size < 0) throw ConfigError("image_size must be >= 0");
  if (d.normalization_sample < 1) throw ConfigError("normalization_sample must be >= 1");
  return d;
}

// ---------------------------------------------------------------------------

int64_t PreparedDataset::channels() const {
  if (!train.empty()) return train.front().stack.channels();
  if (!test.empty()) return test.front().stack.channels();
  return static_cast<int64_t>(bands.size());
}

PreparedLocation prepare_location(const DatasetManifest& manifest, const LocationEntry& entry,
                                  const DataOptions& options, const NormalizationSpec& normalization) {
  auto [stack, truth] = load_location(manifest, entry, options.revisits, options.seed);
  PreparedLocation out;
  out.negative = entry.negative;
  out.stack = normalize(stack, normalization);
  if (options.bands) out.stack = select_bands(out.stack, *options.bands);
  out.truth = truth;
  if (options.image_size > 0) {
    out.stack = resize(out.stack, options.image_size, options.image_size);
    out.truth = resize(truth, options.image_size, options.image_size);
  }
  return out;
}

PreparedDataset prepare_dataset(const DatasetManifest& manifest, const DataOptions& options) {
  manifest.validate();
  PreparedDataset data;
  data.task = manifest.task;
  data.normalization = fit_normalization(manifest, options.normalization, options.normalization_sample,
                                         options.seed, options.constant);
  for (const auto& entry : manifest.locations) {
    auto loc = prepare_location(manifest, entry, options, data.normalization);
    if (data.bands.empty()) data.bands = loc.stack.band_names;
    (entry.split == Split::Train ? data.train : data.test).push_back(std::move(loc));
  }
  return data;
}

// ---------------------------------------------------------------------------

void set_deterministic(bool on) {
  if (on) torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(on, false);
}

torch::Tensor compute_loss(const torch::Tensor& output, const torch::Tensor& truth, LossKind loss,
                           double dice_weight) {
  if (output.sizes() != truth.sizes()) throw ShapeError("loss: output and target shapes differ");
  auto target = truth.to(output.scalar_type());
  switch (loss) {
    case LossKind::BCEWithLogits:
      return torch::binary_cross_entropy_with_logits(output, target);
    case LossKind::BCEDice: {
      auto bce = torch::binary_cross_entropy_with_logits(output, target);
      auto p = torch::sigmoid(output).flatten(1);
      auto t = target.flatten(1);
      auto dice = 1.0 - (2.0 * (p * t).sum(1) + 1.0) / (p.sum(1) + t.sum(1) + 1.0);
      return bce + dice_weight * dice.mean();
    }
    case LossKind::MSE:
      return torch::mse_loss(output, target);
  }
  throw ConfigError("unhandled loss");
}

namespace {

// A revisit index, or one of the whole-stack markers.
constexpr int kAllRevisits = -1;
constexpr int kComposite = -2;

struct Sample {
  size_t location;
  int revisit;
};

std::vector<Sample> epoch_samples(const PreparedDataset& data, FusionStrategy strategy, std::uint64_t seed,
                                  int epoch) {
  std::vector<Sample> out;
  for (size_t i = 0; i < data.train.size(); ++i) {
    const int64_t T = data.train[i].stack.revisits();
    switch (strategy) {
      case FusionStrategy::SingleImage:
        out.push_back({i, select_single_index(T, mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), i),
                                              SelectionMode::Train)});
        break;
      case FusionStrategy::AugmentedDataset:
        for (int t = 0; t < T; ++t) out.push_back({i, t});
        break;
      case FusionStrategy::MedianImage:
        out.push_back({i, kComposite});
        break;
      case FusionStrategy::OutputFusion:
      case FusionStrategy::LatentTemporalMax:
        out.push_back({i, kAllRevisits});
        break;
    }
  }
  std::mt19937_64 rng(mix_seed(seed ^ 0x5eedULL, static_cast<std::uint64_t>(epoch)));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

TrainHistory train_model(SegmentationModelImpl& model, const TrainConfig& config, const PreparedDataset& data) {
  config.validate(model.config().head);
  set_deterministic(config.deterministic);
  TrainHistory history;
  if (config.epochs == 0) return history;
  if (data.train.empty()) throw InvalidSpecError("training split is empty");
  const auto strategy = config.strategy;

  std::vector<torch::Tensor> composites;
  if (strategy == FusionStrategy::MedianImage)
    for (const auto& loc : data.train) composites.push_back(median_composite(loc.stack).data);

  std::unique_ptr<torch::optim::Optimizer> optimizer;
  if (config.optimizer == OptimizerKind::Adam)
    optimizer = std::make_unique<torch::optim::Adam>(model.parameters(),
                                                     torch::optim::AdamOptions(config.learning_rate));
  else
    optimizer = std::make_unique<torch::optim::SGD>(
        model.parameters(), torch::optim::SGDOptions(config.learning_rate).momentum(0.9));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    model.train();
    auto samples = epoch_samples(data, strategy, config.seed, epoch);
    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(samples.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<torch::Tensor> inputs, targets;
      for (size_t k = start; k < end; ++k) {
        const auto& s = samples[k];
        const auto& loc = data.train[s.location];
        RevisitStack stack{loc.stack.data, loc.stack.band_names, loc.stack.location_id};
        if (s.revisit == kComposite)
          stack.data = composites[s.location];
        else if (s.revisit >= 0)
          stack.data = loc.stack.data.narrow(0, s.revisit, 1);
        GroundTruth truth = loc.truth;
        if (config.augment) {
          const auto aug_seed = mix_seed(mix_seed(config.seed ^ 0xa11ceULL, static_cast<std::uint64_t>(epoch)), k);
          std::tie(stack, truth) = geometric_augment(stack, truth, aug_seed, config.augment_ranges);
        }
        inputs.push_back(stack.data);
        targets.push_back(truth.values);
      }
      auto batch = torch::stack(inputs);
      auto target = torch::stack(targets);
      auto output = model.forward(batch, strategy);
      auto loss = compute_loss(output, target, config.loss, config.dice_weight);
      const double value = loss.item<double>();
      if (!std::isfinite(value))
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(start / static_cast<size_t>(config.batch_size)));
      optimizer->zero_grad();
      loss.backward();
      optimizer->step();
      loss_sum += value * static_cast<double>(end - start);
      seen += end - start;
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
    if (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 && !data.test.empty()) {
      history.epoch_metric.push_back(evaluate(model, data.test, strategy, data.task).headline());
      history.metric_epochs.push_back(epoch + 1);
    }
  }
  model.eval();
  return history;
}

TrainResult train(const TrainConfig& config, const ModelConfig& model_config, const PreparedDataset& data) {
  ModelConfig mc = model_config;
  mc.fusion = config.strategy;
  mc.seed = config.seed;
  if (mc.in_channels != data.channels())
    throw ShapeError("model expects " + std::to_string(mc.in_channels) + " bands but the data has " +
                     std::to_string(data.channels()));
  set_deterministic(config.deterministic);
  TrainResult result;
  result.model = build_model(mc);
  result.history = train_model(*result.model, config, data);
  result.model->eval();
  return result;
}

// ---------------------------------------------------------------------------

json MetricReport::to_json() const {
  json j{{"task", to_string(task)}, {"images", images}};
  if (task == TruthKind::BinaryMask) {
    j["iou"] = iou;
    j["pooled_iou"] = pooled_iou;
  } else {
    j["mse"] = mse;
  }
  if (negatives) j["negatives"] = negatives->to_json();
  return j;
}

torch::Tensor predict_location(SegmentationModelImpl& model, const RevisitStack& stack, FusionStrategy strategy,
                               TruthKind task) {
  torch::NoGradGuard guard;
  model.eval();
  torch::Tensor input;
  switch (strategy) {
    case FusionStrategy::SingleImage:
    case FusionStrategy::AugmentedDataset:
      input = select_single(stack, 0, SelectionMode::Eval).data;
      break;
    case FusionStrategy::MedianImage:
      input = median_composite(stack).data;
      break;
    case FusionStrategy::OutputFusion:
    case FusionStrategy::LatentTemporalMax:
      input = stack.data;
      break;
  }
  auto out = model.forward(input.unsqueeze(0), strategy).squeeze(0);
  if (task == TruthKind::BinaryMask) return (out > 0).to(torch::kFloat32);
  return out;
}

MetricReport evaluate(const Predictor& predictor, const std::vector<PreparedLocation>& test, TruthKind task) {
  if (test.empty()) throw InvalidSpecError("evaluation split is empty");
  MetricReport r;
  r.task = task;
  r.images = test.size();
  OverlapCounts pooled;
  double iou_sum = 0.0, mse_sum = 0.0;
  std::vector<torch::Tensor> negative_masks;
  for (const auto& loc : test) {
    auto pred = predictor(loc);
    if (task == TruthKind::BinaryMask) {
      auto counts = overlap_counts(pred, loc.truth.values);
      pooled += counts;
      iou_sum += counts.iou();
      if (loc.negative) negative_masks.push_back(pred);
    } else {
      mse_sum += compute_mse(pred, loc.truth.values);
    }
  }
  const auto n = static_cast<double>(test.size());
  if (task == TruthKind::BinaryMask) {
    r.iou = iou_sum / n;
    r.pooled_iou = pooled.iou();
    if (!negative_masks.empty()) r.negatives = negative_stats(negative_masks);
  } else {
    r.mse = mse_sum / n;
  }
  return r;
}

MetricReport evaluate(SegmentationModelImpl& model, const std::vector<PreparedLocation>& test,
                      FusionStrategy strategy, TruthKind task) {
  return evaluate([&](const PreparedLocation& loc) { return predict_location(model, loc.stack, strategy, task); },
                  test, task);
}

NegativeStats negative_image_report(SegmentationModelImpl& model, const std::vector<PreparedLocation>& negatives,
                                    FusionStrategy strategy) {
  if (model.config().head != HeadKind::BinarySegmentation)
    throw ConfigError("negative-image report needs a binary segmentation model");
  std::vector<torch::Tensor> masks;
  for (const auto& loc : negatives) masks.push_back(predict_location(model, loc.stack, strategy, TruthKind::BinaryMask));
  return negative_stats(masks);
}

}  // namespace revisit
