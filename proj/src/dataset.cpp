#include "revisit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "revisit/array_io.hpp"
#include "revisit/errors.hpp"
#include "revisit/hash.hpp"

namespace revisit {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// Types

void RevisitStack::validate() const {
  if (!data.defined() || data.dim() != 4) throw ShapeError("revisit stack must be [T, C, H, W]");
  if (data.size(0) < 1) throw ShapeError("revisit stack needs at least one revisit");
  if (static_cast<int64_t>(band_names.size()) != data.size(1))
    throw InvalidSpecError("band_names has " + std::to_string(band_names.size()) + " entries for " +
                           std::to_string(data.size(1)) + " channels");
  for (size_t i = 0; i < band_names.size(); ++i)
    for (size_t j = i + 1; j < band_names.size(); ++j)
      if (same_band(band_names[i], band_names[j])) throw InvalidSpecError("duplicate band " + band_names[i]);
  if (!torch::isfinite(data).all().item<bool>()) throw InvalidSpecError("revisit stack contains NaN/Inf");
}

void GroundTruth::validate() const {
  if (!values.defined() || values.dim() != 2) throw ShapeError("ground truth must be [H, W]");
  if (kind == TruthKind::BinaryMask) {
    if (!((values == 0) | (values == 1)).all().item<bool>()) throw InvalidSpecError("binary mask must be 0/1");
  } else {
    if (!((values >= 0) & (values <= 1)).all().item<bool>()) throw InvalidSpecError("density map must lie in [0,1]");
  }
}

std::string to_string(TruthKind kind) { return kind == TruthKind::BinaryMask ? "binary" : "density"; }

TruthKind truth_kind_from_string(const std::string& text) {
  if (text == "binary") return TruthKind::BinaryMask;
  if (text == "density") return TruthKind::DensityMap;
  throw ConfigError("unknown task kind '" + text + "' (expected binary|density)");
}

// ---------------------------------------------------------------------------
// Normalization

std::string to_string(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::Standardize: return "standardize";
    case NormalizationMode::PercentileNormalize: return "percentile";
    case NormalizationMode::ConstantScale: return "constant";
  }
  return "?";
}

NormalizationMode normalization_mode_from_string(const std::string& text) {
  if (text == "standardize") return NormalizationMode::Standardize;
  if (text == "percentile") return NormalizationMode::PercentileNormalize;
  if (text == "constant") return NormalizationMode::ConstantScale;
  throw ConfigError("unknown normalization mode '" + text + "' (expected standardize|percentile|constant)");
}

NormalizationSpec NormalizationSpec::standardize(std::vector<double> mean, std::vector<double> stddev) {
  NormalizationSpec s;
  s.mode = NormalizationMode::Standardize;
  s.mean = std::move(mean);
  s.stddev = std::move(stddev);
  s.validate();
  return s;
}

NormalizationSpec NormalizationSpec::percentile(std::vector<double> p_low, std::vector<double> p_high) {
  NormalizationSpec s;
  s.mode = NormalizationMode::PercentileNormalize;
  s.p_low = std::move(p_low);
  s.p_high = std::move(p_high);
  s.validate();
  return s;
}

NormalizationSpec NormalizationSpec::constant_scale(double constant) {
  NormalizationSpec s;
  s.mode = NormalizationMode::ConstantScale;
  s.constant = constant;
  s.validate();
  return s;
}

void NormalizationSpec::validate(int64_t channels) const {
  auto check_len = [&](const std::vector<double>& v, const char* name) {
    if (v.empty()) throw InvalidSpecError(std::string(name) + " is required by this normalization mode");
    if (channels >= 0 && static_cast<int64_t>(v.size()) != channels)
      throw InvalidSpecError(std::string(name) + " has " + std::to_string(v.size()) + " bands, stack has " +
                             std::to_string(channels));
  };
  switch (mode) {
    case NormalizationMode::Standardize:
      check_len(mean, "mean");
      check_len(stddev, "std");
      if (mean.size() != stddev.size()) throw InvalidSpecError("mean and std lengths differ");
      for (double s : stddev)
        if (!(s > 0)) throw InvalidSpecError("standard deviation must be > 0 (got " + std::to_string(s) + ")");
      if (!p_low.empty() || !p_high.empty()) throw InvalidSpecError("percentiles set on a standardize spec");
      break;
    case NormalizationMode::PercentileNormalize:
      check_len(p_low, "p_low");
      check_len(p_high, "p_high");
      if (p_low.size() != p_high.size()) throw InvalidSpecError("p_low and p_high lengths differ");
      for (size_t i = 0; i < p_low.size(); ++i)
        if (!(p_high[i] > p_low[i])) throw InvalidSpecError("p_high must exceed p_low for every band");
      if (!mean.empty() || !stddev.empty()) throw InvalidSpecError("mean/std set on a percentile spec");
      break;
    case NormalizationMode::ConstantScale:
      if (!(constant > 0)) throw InvalidSpecError("scaling constant must be > 0");
      if (!mean.empty() || !stddev.empty() || !p_low.empty() || !p_high.empty())
        throw InvalidSpecError("per-band statistics set on a constant-scale spec");
      break;
  }
}

json NormalizationSpec::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  switch (mode) {
    case NormalizationMode::Standardize:
      j["mean"] = mean;
      j["std"] = stddev;
      break;
    case NormalizationMode::PercentileNormalize:
      j["p_low"] = p_low;
      j["p_high"] = p_high;
      break;
    case NormalizationMode::ConstantScale: j["constant"] = constant; break;
  }
  return j;
}

NormalizationSpec NormalizationSpec::from_json(const json& j) {
  NormalizationSpec s;
  s.mode = normalization_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("mean")) s.mean = j["mean"].get<std::vector<double>>();
  if (j.contains("std")) s.stddev = j["std"].get<std::vector<double>>();
  if (j.contains("p_low")) s.p_low = j["p_low"].get<std::vector<double>>();
  if (j.contains("p_high")) s.p_high = j["p_high"].get<std::vector<double>>();
  if (j.contains("constant")) s.constant = j["constant"].get<double>();
  s.validate();
  return s;
}

RevisitStack normalize(const RevisitStack& stack, const NormalizationSpec& spec) {
  spec.validate(spec.mode == NormalizationMode::ConstantScale ? -1 : stack.channels());
  RevisitStack out{torch::Tensor(), stack.band_names, stack.location_id};
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto per_band = [&](const std::vector<double>& v) {
    return torch::tensor(v, opts).view({1, -1, 1, 1}).to(stack.data.scalar_type());
  };
  switch (spec.mode) {
    case NormalizationMode::Standardize:
      out.data = (stack.data - per_band(spec.mean)) / per_band(spec.stddev);
      break;
    case NormalizationMode::PercentileNormalize: {
      std::vector<double> range(spec.p_low.size());
      for (size_t i = 0; i < range.size(); ++i) range[i] = spec.p_high[i] - spec.p_low[i];
      out.data = ((stack.data - per_band(spec.p_low)) / per_band(range)).clamp(0.0, 1.0);
      break;
    }
    case NormalizationMode::ConstantScale:
      out.data = (stack.data / spec.constant).clamp(0.0, 1.0);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bands

bool same_band(const std::string& a, const std::string& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
    return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
  });
}

json BandSpec::to_json() const {
  json j;
  j["selected"] = selected;
  j["substitutions"] = json::object();
  for (const auto& [from, to] : substitutions) j["substitutions"][from] = to;
  return j;
}

BandSpec BandSpec::from_json(const json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "selected" && key != "substitutions") throw ConfigError("unknown band-spec key '" + key + "'");
  BandSpec s;
  s.selected = j.at("selected").get<std::vector<std::string>>();
  if (j.contains("substitutions"))
    for (const auto& [from, to] : j["substitutions"].items()) s.substitutions[from] = to.get<std::string>();
  return s;
}

namespace {

std::optional<int64_t> band_index(const std::vector<std::string>& names, const std::string& band) {
  for (size_t i = 0; i < names.size(); ++i)
    if (same_band(names[i], band)) return static_cast<int64_t>(i);
  return std::nullopt;
}

}  // namespace

RevisitStack select_bands(const RevisitStack& stack, const BandSpec& bands) {
  std::vector<int64_t> indices;
  indices.reserve(bands.selected.size());
  for (const auto& band : bands.selected) {
    if (auto idx = band_index(stack.band_names, band)) {
      indices.push_back(*idx);
      continue;
    }
    std::optional<int64_t> replacement;
    for (const auto& [from, to] : bands.substitutions)
      if (same_band(from, band)) replacement = band_index(stack.band_names, to);
    if (!replacement) throw MissingBandError(band);
    indices.push_back(*replacement);
  }
  RevisitStack out;
  out.data = stack.data.index_select(1, torch::tensor(indices, torch::kLong));
  out.band_names = bands.selected;
  out.location_id = stack.location_id;
  return out;
}

BandSpec identity_band_spec(const RevisitStack& stack) { return BandSpec{stack.band_names, {}}; }

std::map<std::string, BandSpec> default_band_specs() {
  std::map<std::string, BandSpec> specs;
  specs["unet"] = BandSpec{{"B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B10", "B11", "B12"},
                           {{"B1", "B2"}, {"B9", "B8A"}, {"B10", "B11"}}};
  specs["swin"] = BandSpec{{"B2", "B3", "B4", "B5", "B6", "B7", "B8", "B11", "B12"}, {}};
  specs["vit"] = BandSpec{{"B2", "B3", "B4"}, {}};
  return specs;
}

std::map<std::string, BandSpec> load_band_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open band-spec file " + path.string());
  json j = json::parse(in);
  std::map<std::string, BandSpec> specs;
  for (const auto& [model, spec] : j.items()) specs[model] = BandSpec::from_json(spec);
  return specs;
}

void save_band_specs(const std::filesystem::path& path, const std::map<std::string, BandSpec>& specs) {
  json j = json::object();
  for (const auto& [model, spec] : specs) j[model] = spec.to_json();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Resizing

RevisitStack resize(const RevisitStack& stack, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be at least 1x1");
  RevisitStack out{torch::Tensor(), stack.band_names, stack.location_id};
  if (height == stack.height() && width == stack.width()) {
    out.data = stack.data.clone();
    return out;
  }
  out.data = F::interpolate(stack.data, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{height, width})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
  return out;
}

GroundTruth resize(const GroundTruth& truth, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be at least 1x1");
  GroundTruth out{truth.kind, torch::Tensor()};
  if (height == truth.height() && width == truth.width()) {
    out.values = truth.values.clone();
    return out;
  }
  auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{height, width});
  if (truth.kind == TruthKind::BinaryMask)
    opts.mode(torch::kNearest);
  else
    opts.mode(torch::kBilinear).align_corners(false);
  out.values = F::interpolate(truth.values.unsqueeze(0).unsqueeze(0), opts).squeeze(0).squeeze(0);
  return out;
}

// ---------------------------------------------------------------------------
// Geometric augmentation

bool GeometricTransform::is_identity() const {
  if (flip_horizontal || flip_vertical || quarter_turns % 4 != 0) return false;
  if (!affine) return true;
  return affine->rotation_deg == 0 && affine->translate_x == 0 && affine->translate_y == 0 && affine->scale == 1;
}

GeometricTransform sample_transform(std::uint64_t seed, const AugmentRanges& ranges) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeometricTransform t;
  t.flip_horizontal = unit(rng) < ranges.flip_prob;
  t.flip_vertical = unit(rng) < ranges.flip_prob;
  t.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  if (unit(rng) < ranges.affine_prob) {
    AffineParams a;
    a.rotation_deg = std::uniform_real_distribution<double>(-ranges.max_rotation_deg, ranges.max_rotation_deg)(rng);
    a.translate_x = std::uniform_real_distribution<double>(-ranges.max_translate, ranges.max_translate)(rng);
    a.translate_y = std::uniform_real_distribution<double>(-ranges.max_translate, ranges.max_translate)(rng);
    a.scale = std::uniform_real_distribution<double>(ranges.min_scale, ranges.max_scale)(rng);
    t.affine = a;
  }
  return t;
}

namespace {

// Warps a [N, C, H, W] batch; the output pixel at normalized location p samples
// the input at A^{-1}(p - t), with A = scale * rotation.
torch::Tensor warp_affine(const torch::Tensor& batch, const AffineParams& a, bool nearest) {
  const double theta = a.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta) / a.scale;
  const double s = std::sin(theta) / a.scale;
  const double tx = 2.0 * a.translate_x;
  const double ty = 2.0 * a.translate_y;
  // inverse map: R(-theta)/scale applied to (p - t)
  auto mat = torch::tensor({c, s, -(c * tx + s * ty), -s, c, -(-s * tx + c * ty)},
                           torch::TensorOptions().dtype(torch::kFloat64))
                 .view({1, 2, 3})
                 .to(batch.scalar_type())
                 .expand({batch.size(0), 2, 3});
  auto grid = F::affine_grid(mat, batch.sizes().vec(), /*align_corners=*/false);
  auto options = F::GridSampleFuncOptions().padding_mode(torch::kReflection).align_corners(false);
  if (nearest)
    options.mode(torch::kNearest);
  else
    options.mode(torch::kBilinear);
  return F::grid_sample(batch, grid, options);
}

}  // namespace

std::pair<RevisitStack, GroundTruth> apply_transform(const RevisitStack& stack, const GroundTruth& truth,
                                                     const GeometricTransform& transform) {
  auto image = stack.data;
  auto map = truth.values;
  if (transform.flip_horizontal) {
    image = image.flip({3});
    map = map.flip({1});
  }
  if (transform.flip_vertical) {
    image = image.flip({2});
    map = map.flip({0});
  }
  const int turns = ((transform.quarter_turns % 4) + 4) % 4;
  if (turns != 0) {
    if (stack.height() != stack.width()) throw ShapeError("quarter-turn rotation requires square inputs");
    image = torch::rot90(image, turns, {2, 3});
    map = torch::rot90(map, turns, {0, 1});
  }
  if (transform.affine) {
    image = warp_affine(image, *transform.affine, false);
    map = warp_affine(map.unsqueeze(0).unsqueeze(0), *transform.affine, truth.kind == TruthKind::BinaryMask)
              .squeeze(0)
              .squeeze(0);
  }
  return {RevisitStack{image.contiguous(), stack.band_names, stack.location_id},
          GroundTruth{truth.kind, map.contiguous()}};
}

std::pair<RevisitStack, GroundTruth> geometric_augment(const RevisitStack& stack, const GroundTruth& truth,
                                                       std::uint64_t seed, const AugmentRanges& ranges) {
  return apply_transform(stack, truth, sample_transform(seed, ranges));
}

// ---------------------------------------------------------------------------
// Manifest

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "'");
}

std::vector<const LocationEntry*> DatasetManifest::entries(Split split) const {
  std::vector<const LocationEntry*> out;
  for (const auto& e : locations)
    if (e.split == split) out.push_back(&e);
  return out;
}

size_t DatasetManifest::count(Split split) const {
  return static_cast<size_t>(
      std::count_if(locations.begin(), locations.end(), [&](const auto& e) { return e.split == split; }));
}

size_t DatasetManifest::negative_count() const {
  return static_cast<size_t>(
      std::count_if(locations.begin(), locations.end(), [](const auto& e) { return e.negative; }));
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : locations) {
    if (!ids.insert(e.id).second) throw InvalidSpecError("location '" + e.id + "' listed more than once");
    if (e.revisits.empty()) throw InvalidSpecError("location '" + e.id + "' has no revisits");
  }
}

json DatasetManifest::to_json() const {
  json j;
  j["format"] = "revisit-fusion-manifest/1";
  j["task"] = to_string(task);
  j["bands"] = bands;
  j["height"] = height;
  j["width"] = width;
  j["locations"] = json::array();
  for (const auto& e : locations) {
    j["locations"].push_back({{"id", e.id},
                              {"revisits", e.revisits},
                              {"truth", e.truth},
                              {"split", to_string(e.split)},
                              {"negative", e.negative},
                              {"revisit_count", e.revisit_count()}});
  }
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, std::filesystem::path root) {
  DatasetManifest m;
  m.root = std::move(root);
  m.task = truth_kind_from_string(j.at("task").get<std::string>());
  m.bands = j.at("bands").get<std::vector<std::string>>();
  m.height = j.at("height").get<int64_t>();
  m.width = j.at("width").get<int64_t>();
  for (const auto& item : j.at("locations")) {
    LocationEntry e;
    e.id = item.at("id").get<std::string>();
    e.revisits = item.at("revisits").get<std::vector<std::string>>();
    e.truth = item.at("truth").get<std::string>();
    e.split = split_from_string(item.at("split").get<std::string>());
    e.negative = item.value("negative", false);
    if (item.contains("revisit_count") && item["revisit_count"].get<int>() != e.revisit_count())
      throw InvalidSpecError("location '" + e.id + "': revisit_count disagrees with revisit list");
    m.locations.push_back(std::move(e));
  }
  m.validate();
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  std::filesystem::path root = path.parent_path();
  if (const char* env = std::getenv(kDataRootEnv); env && *env) root = env;
  return from_json(j, root);
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json().dump(2) << "\n";
}

std::string manifest_hash(const DatasetManifest& manifest) {
  Fnv1a h;
  h.update(manifest.to_json().dump());
  auto hash_file = [&](const std::string& ref) {
    std::ifstream in(manifest.resolve(ref), std::ios::binary);
    if (!in) throw IoError("cannot open " + manifest.resolve(ref).string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h.update(bytes);
  };
  for (const auto& e : manifest.locations) {
    for (const auto& r : e.revisits) hash_file(r);
    hash_file(e.truth);
  }
  return h.hex();
}

std::vector<Split> assign_splits(size_t n, double train_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || train_fraction > 1) throw InvalidSpecError("train fraction must lie in [0,1]");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<Split> splits(n, Split::Test);
  for (size_t i = 0; i < n_train; ++i) splits[order[i]] = Split::Train;
  return splits;
}

LocationEntry write_location(const std::filesystem::path& root, const RevisitStack& stack, const GroundTruth& truth,
                             Split split, bool negative) {
  namespace fs = std::filesystem;
  stack.validate();
  fs::create_directories(root / stack.location_id);
  LocationEntry e;
  e.id = stack.location_id;
  e.split = split;
  e.negative = negative;
  for (int64_t t = 0; t < stack.revisits(); ++t) {
    std::string ref = stack.location_id + "/revisit_" + std::to_string(t) + ".npy";
    write_array(root / ref, stack.data[t]);
    e.revisits.push_back(ref);
  }
  e.truth = stack.location_id + "/truth.npy";
  write_array(root / e.truth, truth.values);
  std::ofstream sidecar(root / stack.location_id / "bands.json");
  sidecar << json{{"bands", stack.band_names}}.dump() << "\n";
  return e;
}

std::pair<RevisitStack, GroundTruth> load_location(const DatasetManifest& manifest, const LocationEntry& entry,
                                                   int revisits, std::uint64_t seed) {
  const int available = entry.revisit_count();
  if (available < 1) throw InvalidSpecError("location '" + entry.id + "' has no revisits");
  std::vector<int> chosen;
  if (revisits <= 0 || revisits == available) {
    for (int i = 0; i < available; ++i) chosen.push_back(i);
  } else {
    std::mt19937_64 rng(mix_seed(seed, hash_u64(entry.id)));
    if (revisits < available) {
      std::vector<int> all(available);
      for (int i = 0; i < available; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      chosen.assign(all.begin(), all.begin() + revisits);
      std::sort(chosen.begin(), chosen.end());
    } else {
      for (int i = 0; i < available; ++i) chosen.push_back(i);
      std::uniform_int_distribution<int> pick(0, available - 1);
      while (static_cast<int>(chosen.size()) < revisits) chosen.push_back(pick(rng));
    }
  }

  std::vector<torch::Tensor> frames;
  frames.reserve(chosen.size());
  for (int idx : chosen) {
    auto frame = read_array(manifest.resolve(entry.revisits[static_cast<size_t>(idx)]));
    if (frame.dim() != 3) throw ShapeError(entry.revisits[static_cast<size_t>(idx)] + " must be [C, H, W]");
    frames.push_back(frame);
  }
  for (const auto& f : frames)
    if (f.sizes() != frames.front().sizes())
      throw ShapeError("location '" + entry.id + "': revisits disagree in shape");

  RevisitStack stack;
  stack.data = torch::stack(frames, 0);
  stack.location_id = entry.id;
  auto sidecar_path = manifest.resolve(entry.revisits.front()).parent_path() / "bands.json";
  if (std::ifstream sidecar(sidecar_path); sidecar) {
    stack.band_names = json::parse(sidecar).at("bands").get<std::vector<std::string>>();
  } else {
    stack.band_names = manifest.bands;
  }
  stack.validate();

  GroundTruth truth{manifest.task, read_array(manifest.resolve(entry.truth))};
  if (truth.values.dim() != 2 || truth.height() != stack.height() || truth.width() != stack.width())
    throw ShapeError("location '" + entry.id + "': truth shape does not match revisits");
  return {std::move(stack), std::move(truth)};
}

double quantile(std::vector<float>& values, double q) {
  if (values.empty()) throw InvalidSpecError("quantile of an empty sample");
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double v_lo = values[lo];
  if (hi == lo) return v_lo;
  const double v_hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return v_lo + (pos - static_cast<double>(lo)) * (v_hi - v_lo);
}

NormalizationSpec fit_normalization(const DatasetManifest& manifest, NormalizationMode mode, int sample_size,
                                    std::uint64_t seed, double constant) {
  if (sample_size < 1) throw InvalidSpecError("sample_size must be >= 1");
  auto train = manifest.entries(Split::Train);
  if (train.empty()) throw InvalidSpecError("cannot fit normalization: train split is empty");
  if (mode == NormalizationMode::ConstantScale) return NormalizationSpec::constant_scale(constant);

  std::mt19937_64 rng(seed);
  std::shuffle(train.begin(), train.end(), rng);
  train.resize(std::min(train.size(), static_cast<size_t>(sample_size)));

  std::vector<std::vector<float>> per_band;
  for (const auto* entry : train) {
    auto [stack, truth] = load_location(manifest, *entry, 0, seed);
    if (per_band.empty()) per_band.resize(static_cast<size_t>(stack.channels()));
    if (static_cast<int64_t>(per_band.size()) != stack.channels())
      throw ShapeError("locations disagree in band count");
    auto values = stack.data.transpose(0, 1).contiguous().view({stack.channels(), -1});
    for (int64_t c = 0; c < stack.channels(); ++c) {
      auto row = values[c];
      const float* p = row.data_ptr<float>();
      per_band[static_cast<size_t>(c)].insert(per_band[static_cast<size_t>(c)].end(), p, p + row.numel());
    }
  }

  if (mode == NormalizationMode::Standardize) {
    std::vector<double> mean, stddev;
    for (const auto& band : per_band) {
      double sum = 0;
      for (float v : band) sum += v;
      const double m = sum / static_cast<double>(band.size());
      double ss = 0;
      for (float v : band) ss += (v - m) * (v - m);
      mean.push_back(m);
      stddev.push_back(std::sqrt(ss / static_cast<double>(band.size())));
    }
    return NormalizationSpec::standardize(std::move(mean), std::move(stddev));
  }

  std::vector<double> lo, hi;
  for (auto& band : per_band) {
    lo.push_back(quantile(band, 0.01));
    hi.push_back(quantile(band, 0.99));
  }
  return NormalizationSpec::percentile(std::move(lo), std::move(hi));
}

}  // namespace revisit
