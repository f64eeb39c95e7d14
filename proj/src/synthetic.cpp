#include "revisit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "revisit/errors.hpp"
#include "revisit/hash.hpp"

namespace revisit {

namespace {

const std::vector<std::string> kBandOrder = {"B2", "B3", "B4", "B8", "B5", "B6", "B7",
                                             "B8A", "B11", "B12", "B1", "B9", "B10"};

struct Rect {
  double cy, cx, half_h, half_w, corner;
};

bool inside_rounded_rect(const Rect& r, double y, double x) {
  const double dy = std::abs(y - r.cy);
  const double dx = std::abs(x - r.cx);
  if (dy > r.half_h || dx > r.half_w) return false;
  const double iy = r.half_h - r.corner;
  const double ix = r.half_w - r.corner;
  if (dy <= iy || dx <= ix) return true;
  const double ey = dy - iy;
  const double ex = dx - ix;
  return ey * ey + ex * ex <= r.corner * r.corner;
}

Rect sample_rect(std::mt19937_64& rng, const SyntheticParams& p, double area_fraction) {
  std::uniform_real_distribution<double> aspect_dist(0.6, 1.6);
  const double area = area_fraction * p.height * p.width;
  const double aspect = aspect_dist(rng);
  double h = std::sqrt(area * aspect);
  double w = area / h;
  h = std::min(h, p.height - 4.0);
  w = std::min(w, p.width - 4.0);
  std::uniform_real_distribution<double> cy(2.0 + h / 2, p.height - 2.0 - h / 2);
  std::uniform_real_distribution<double> cx(2.0 + w / 2, p.width - 2.0 - w / 2);
  return Rect{cy(rng), cx(rng), h / 2, w / 2, 0.25 * std::min(h, w)};
}

double cycled(const std::vector<double>& v, int c) { return v[static_cast<size_t>(c) % v.size()]; }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

std::vector<std::string> SyntheticParams::band_names() const {
  std::vector<std::string> names;
  for (int c = 0; c < channels; ++c)
    names.push_back(c < static_cast<int>(kBandOrder.size()) ? kBandOrder[static_cast<size_t>(c)]
                                                            : "X" + std::to_string(c));
  return names;
}

void SyntheticParams::validate() const {
  if (n_locations < 1) throw InvalidSpecError("n_locations must be >= 1");
  if (revisits < 1) throw InvalidSpecError("revisits must be >= 1");
  if (channels < 1) throw InvalidSpecError("channels must be >= 1");
  if (height < 8 || width < 8) throw InvalidSpecError("images must be at least 8x8");
  const auto [f_min, f_max] = target_fraction_range;
  if (!(f_min > 0 && f_max < 1 && f_min <= f_max)) throw InvalidSpecError("target_fraction_range must lie in (0,1)");
  if (!(occlusion_prob >= 0 && occlusion_prob < 1)) throw InvalidSpecError("occlusion_prob must lie in [0,1)");
  if (!(occlusion_radius_range[0] > 0 && occlusion_radius_range[0] <= occlusion_radius_range[1]))
    throw InvalidSpecError("occlusion_radius_range must be positive and ordered");
  if (max_clouds < 1) throw InvalidSpecError("max_clouds must be >= 1");
  if (!(cloud_target_bias >= 0 && cloud_target_bias <= 1)) throw InvalidSpecError("cloud_target_bias must lie in [0,1]");
  if (brightness_jitter_std < 0 || pixel_noise_std < 0) throw InvalidSpecError("noise levels must be >= 0");
  if (background_level.empty() || spectral_signature.empty())
    throw InvalidSpecError("background_level and spectral_signature must be non-empty");
  if (!(negative_fraction >= 0 && negative_fraction < 1)) throw InvalidSpecError("negative_fraction must lie in [0,1)");
  if (!(train_fraction > 0 && train_fraction <= 1)) throw InvalidSpecError("train_fraction must lie in (0,1]");
  if (max_resamples < 1) throw InvalidSpecError("max_resamples must be >= 1");
}

json SyntheticParams::to_json() const {
  return json{{"n_locations", n_locations},
              {"revisits", revisits},
              {"channels", channels},
              {"height", height},
              {"width", width},
              {"task", to_string(task)},
              {"target_fraction_range", target_fraction_range},
              {"occlusion_prob", occlusion_prob},
              {"occlusion_radius_range", occlusion_radius_range},
              {"max_clouds", max_clouds},
              {"cloud_target_bias", cloud_target_bias},
              {"cloud_offset", cloud_offset},
              {"brightness_jitter_std", brightness_jitter_std},
              {"pixel_noise_std", pixel_noise_std},
              {"background_level", background_level},
              {"spectral_signature", spectral_signature},
              {"max_distractors", max_distractors},
              {"negative_fraction", negative_fraction},
              {"train_fraction", train_fraction},
              {"seed", seed},
              {"max_resamples", max_resamples}};
}

SyntheticParams SyntheticParams::from_json(const json& j) {
  check_keys(j,
             {"n_locations", "revisits", "channels", "height", "width", "task", "target_fraction_range",
              "occlusion_prob", "occlusion_radius_range", "max_clouds", "cloud_target_bias", "cloud_offset",
              "brightness_jitter_std", "pixel_noise_std", "background_level", "spectral_signature",
              "max_distractors", "negative_fraction", "train_fraction", "seed", "max_resamples"},
             "synthetic params");
  SyntheticParams p;
  p.n_locations = j.value("n_locations", p.n_locations);
  p.revisits = j.value("revisits", p.revisits);
  p.channels = j.value("channels", p.channels);
  p.height = j.value("height", p.height);
  p.width = j.value("width", p.width);
  if (j.contains("task")) p.task = truth_kind_from_string(j["task"].get<std::string>());
  p.target_fraction_range = j.value("target_fraction_range", p.target_fraction_range);
  p.occlusion_prob = j.value("occlusion_prob", p.occlusion_prob);
  p.occlusion_radius_range = j.value("occlusion_radius_range", p.occlusion_radius_range);
  p.max_clouds = j.value("max_clouds", p.max_clouds);
  p.cloud_target_bias = j.value("cloud_target_bias", p.cloud_target_bias);
  p.cloud_offset = j.value("cloud_offset", p.cloud_offset);
  p.brightness_jitter_std = j.value("brightness_jitter_std", p.brightness_jitter_std);
  p.pixel_noise_std = j.value("pixel_noise_std", p.pixel_noise_std);
  p.background_level = j.value("background_level", p.background_level);
  p.spectral_signature = j.value("spectral_signature", p.spectral_signature);
  p.max_distractors = j.value("max_distractors", p.max_distractors);
  p.negative_fraction = j.value("negative_fraction", p.negative_fraction);
  p.train_fraction = j.value("train_fraction", p.train_fraction);
  p.seed = j.value("seed", p.seed);
  p.max_resamples = j.value("max_resamples", p.max_resamples);
  p.validate();
  return p;
}

SyntheticLocation generate_location(const SyntheticParams& p, std::uint64_t location_seed, bool negative,
                                    const std::string& location_id) {
  p.validate();
  const int T = p.revisits, C = p.channels, H = p.height, W = p.width;
  const size_t plane = static_cast<size_t>(H) * W;
  std::mt19937_64 rng(location_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Static scene: low-frequency texture shared across bands.
  std::vector<double> texture(plane, 0.0);
  for (int wave = 0; wave < 3; ++wave) {
    const double angle = unit(rng) * 2 * std::numbers::pi;
    const double freq = (0.5 + 2.5 * unit(rng)) * 2 * std::numbers::pi / std::max(H, W);
    const double phase = unit(rng) * 2 * std::numbers::pi;
    const double amp = 0.03 + 0.04 * unit(rng);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        texture[static_cast<size_t>(y) * W + x] +=
            amp * std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y) + phase);
  }
  std::vector<double> level(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) level[static_cast<size_t>(c)] = cycled(p.background_level, c) * (0.9 + 0.2 * unit(rng));

  std::vector<float> clean(static_cast<size_t>(C) * plane);
  for (int c = 0; c < C; ++c)
    for (size_t i = 0; i < plane; ++i)
      clean[static_cast<size_t>(c) * plane + i] = static_cast<float>(level[static_cast<size_t>(c)] * (1.0 + texture[i]));

  // Distractors: bright but spectrally flat.
  std::uniform_int_distribution<int> n_distract(0, p.max_distractors);
  const int distractors = p.max_distractors > 0 ? n_distract(rng) : 0;
  for (int d = 0; d < distractors; ++d) {
    Rect r = sample_rect(rng, p, std::uniform_real_distribution<double>(0.01, 0.05)(rng));
    const double boost = 250.0 + 250.0 * unit(rng);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (inside_rounded_rect(r, y + 0.5, x + 0.5))
          for (int c = 0; c < C; ++c) clean[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * W + x] += static_cast<float>(boost);
  }

  // Targets and ground truth.
  std::vector<float> truth(plane, 0.0f);
  std::vector<Rect> targets;
  if (!negative) {
    const int n_targets = p.task == TruthKind::BinaryMask ? 1 : std::uniform_int_distribution<int>(2, 5)(rng);
    std::uniform_real_distribution<double> frac(p.target_fraction_range[0], p.target_fraction_range[1]);
    for (int k = 0; k < n_targets; ++k) {
      Rect r = sample_rect(rng, p, frac(rng) / (p.task == TruthKind::BinaryMask ? 1.0 : n_targets));
      const double density = p.task == TruthKind::BinaryMask ? 1.0 : 0.3 + 0.7 * unit(rng);
      targets.push_back(r);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const size_t i = static_cast<size_t>(y) * W + x;
          if (!inside_rounded_rect(r, y + 0.5, x + 0.5) || truth[i] > 0) continue;
          truth[i] = static_cast<float>(density);
          for (int c = 0; c < C; ++c)
            clean[static_cast<size_t>(c) * plane + i] += static_cast<float>(density * cycled(p.spectral_signature, c));
        }
    }
  }

  // Occlusions, resampled until every target pixel is visible in some revisit.
  std::vector<unsigned char> occluded;
  bool satisfied = false;
  for (int attempt = 0; attempt < p.max_resamples && !satisfied; ++attempt) {
    occluded.assign(static_cast<size_t>(T) * plane, 0);
    for (int t = 0; t < T; ++t) {
      if (!(unit(rng) < p.occlusion_prob)) continue;
      const int clouds = std::uniform_int_distribution<int>(1, p.max_clouds)(rng);
      for (int k = 0; k < clouds; ++k) {
        const double radius =
            std::uniform_real_distribution<double>(p.occlusion_radius_range[0], p.occlusion_radius_range[1])(rng);
        double cy, cx;
        if (!targets.empty() && unit(rng) < p.cloud_target_bias) {
          const Rect& r = targets[std::uniform_int_distribution<size_t>(0, targets.size() - 1)(rng)];
          cy = r.cy + (2 * unit(rng) - 1) * r.half_h;
          cx = r.cx + (2 * unit(rng) - 1) * r.half_w;
        } else {
          cy = unit(rng) * H;
          cx = unit(rng) * W;
        }
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius)
              occluded[static_cast<size_t>(t) * plane + static_cast<size_t>(y) * W + x] = 1;
          }
      }
    }
    satisfied = true;
    for (size_t i = 0; i < plane && satisfied; ++i) {
      if (truth[i] <= 0) continue;
      bool visible = false;
      for (int t = 0; t < T && !visible; ++t) visible = !occluded[static_cast<size_t>(t) * plane + i];
      satisfied = visible;
    }
  }
  if (!satisfied)
    throw GenerationError("location '" + location_id + "': could not keep every target pixel visible after " +
                          std::to_string(p.max_resamples) + " occlusion resamples");

  // Per-revisit observation.
  std::vector<float> observed(static_cast<size_t>(T) * C * plane);
  for (int t = 0; t < T; ++t) {
    for (int c = 0; c < C; ++c) {
      const double gain = 1.0 + p.brightness_jitter_std * gauss(rng);
      const double cloud_value = level[static_cast<size_t>(c)] + p.cloud_offset;
      float* dst = observed.data() + (static_cast<size_t>(t) * C + c) * plane;
      const float* src = clean.data() + static_cast<size_t>(c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        double v = gain * src[i];
        if (p.pixel_noise_std > 0) v += p.pixel_noise_std * gauss(rng);
        if (occluded[static_cast<size_t>(t) * plane + i]) v = cloud_value;
        dst[i] = static_cast<float>(std::max(v, 0.0));
      }
    }
  }

  SyntheticLocation out;
  out.negative = negative;
  out.stack.data = torch::from_blob(observed.data(), {T, C, H, W}, torch::kFloat32).clone();
  out.stack.band_names = p.band_names();
  out.stack.location_id = location_id;
  out.truth.kind = p.task;
  out.truth.values = torch::from_blob(truth.data(), {H, W}, torch::kFloat32).clone();
  out.clean_scene = torch::from_blob(clean.data(), {C, H, W}, torch::kFloat32).clone();
  out.occlusion = torch::from_blob(occluded.data(), {T, H, W}, torch::kUInt8).clone().to(torch::kBool);
  return out;
}

DatasetManifest generate_dataset(const SyntheticParams& params, const std::filesystem::path& out_dir) {
  params.validate();
  std::filesystem::create_directories(out_dir);
  const auto n = static_cast<size_t>(params.n_locations);

  const auto splits = assign_splits(n, params.train_fraction, mix_seed(params.seed, 0x5b117));
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(params.seed, 0x4e6));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_negative = static_cast<size_t>(std::llround(params.negative_fraction * static_cast<double>(n)));
  std::vector<bool> negative(n, false);
  for (size_t i = 0; i < n_negative; ++i) negative[order[i]] = true;

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.task = params.task;
  manifest.bands = params.band_names();
  manifest.height = params.height;
  manifest.width = params.width;
  for (size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "loc_%05zu", i);
    auto loc = generate_location(params, mix_seed(params.seed, 1000 + i), negative[i], id);
    manifest.locations.push_back(write_location(out_dir, loc.stack, loc.truth, splits[i], negative[i]));
  }
  manifest.save(out_dir / "manifest.json");
  std::ofstream prov(out_dir / "params.json");
  if (!prov) throw IoError("cannot write " + (out_dir / "params.json").string());
  prov << params.to_json().dump(2) << "\n";
  return manifest;
}

}  // namespace revisit
