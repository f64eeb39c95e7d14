// Acceptance harness: one PASS/FAIL line per criterion.
// Usage: revisit_acceptance [criterion...]   (no arguments runs all ten)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "revisit/backbones.hpp"
#include "revisit/dataset.hpp"
#include "revisit/errors.hpp"
#include "revisit/experiment.hpp"
#include "revisit/metrics.hpp"
#include "revisit/synthetic.hpp"
#include "test_util.hpp"

using namespace revisit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

const ModelFamily kFamilies[] = {ModelFamily::UNet, ModelFamily::HierarchicalWindowTransformer, ModelFamily::PlainViT};

SegmentationModel eval_model(ModelFamily family, int64_t channels) {
  ModelConfig c;
  c.family = family;
  c.in_channels = channels;
  c.encoder_size = EncoderSize::Small;
  c.seed = 11;
  auto m = build_model(c);
  m->eval();
  return m;
}

// Normalized synthetic stacks as [1, T, C, H, W].
std::vector<torch::Tensor> synthetic_batches(int count) {
  SyntheticParams p;
  std::vector<torch::Tensor> out;
  for (int s = 0; s < count; ++s) {
    auto loc = generate_location(p, 1000 + s);
    out.push_back(normalize(loc.stack, NormalizationSpec::constant_scale()).data.unsqueeze(0));
  }
  return out;
}

torch::Tensor permute_revisits(const torch::Tensor& x, std::mt19937_64& rng) {
  std::vector<int64_t> order(x.size(1));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return x.index_select(1, torch::tensor(order));
}

ExperimentConfig load_config(const std::string& name, const fs::path& out) {
  auto c = ExperimentConfig::load(fs::path(REVISIT_CONFIG_DIR) / name);
  c.output_dir = out;
  return c;
}

double mean_of(const ExperimentResult& r, FusionStrategy s) {
  for (const auto& sum : r.summaries)
    if (sum.strategy == s && sum.aggregate) return sum.aggregate->mean;
  return std::nan("");
}

RunOptions quiet_deterministic() {
  RunOptions o;
  o.verbose = false;
  o.deterministic = true;
  return o;
}

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c);
  return buf;
}

Outcome permutation_invariance() {
  torch::NoGradGuard no_grad;
  Outcome o;
  auto batches = synthetic_batches(20);
  std::mt19937_64 rng(1);
  for (auto family : kFamilies) {
    auto model = eval_model(family, batches[0].size(2));
    for (size_t i = 0; i < batches.size(); ++i) {
      auto ref = model->forward(batches[i], FusionStrategy::LatentTemporalMax);
      for (int k = 0; k < 3; ++k) {
        auto out = model->forward(permute_revisits(batches[i], rng), FusionStrategy::LatentTemporalMax);
        o.require(torch::equal(out, ref), to_string(family) + " stack " + std::to_string(i) + " differs");
      }
    }
  }
  if (o.pass) o.detail = "20 stacks x 3 families x 3 permutations bitwise equal";
  return o;
}

Outcome single_revisit_collapse() {
  torch::NoGradGuard no_grad;
  Outcome o;
  auto batches = synthetic_batches(5);
  for (auto family : kFamilies) {
    auto model = eval_model(family, batches[0].size(2));
    for (const auto& b : batches) {
      auto x = b.narrow(1, 0, 1);
      auto single = model->forward_single(x.select(1, 0));
      o.require(torch::equal(model->forward(x, FusionStrategy::SingleImage), single), to_string(family) + " single");
      o.require(torch::equal(model->forward(x, FusionStrategy::LatentTemporalMax), single),
                to_string(family) + " latent max T=1");
      o.require(torch::equal(model->forward(x, FusionStrategy::OutputFusion), single),
                to_string(family) + " output fusion T=1");
    }
  }
  if (o.pass) o.detail = "latent max and output fusion equal the single-image forward for 3 families";
  return o;
}

Outcome duplication_idempotence() {
  torch::NoGradGuard no_grad;
  Outcome o;
  auto batches = synthetic_batches(5);
  for (auto family : kFamilies) {
    auto model = eval_model(family, batches[0].size(2));
    for (const auto& b : batches) {
      auto ref = model->forward(b, FusionStrategy::LatentTemporalMax);
      for (int64_t t = 0; t < b.size(1); ++t) {
        auto dup = torch::cat({b, b.narrow(1, t, 1)}, 1);
        o.require(torch::equal(model->forward(dup, FusionStrategy::LatentTemporalMax), ref),
                  to_string(family) + " duplicate of revisit " + std::to_string(t));
      }
    }
  }
  if (o.pass) o.detail = "appending any revisit copy leaves outputs bitwise unchanged";
  return o;
}

Outcome strategy_ordering() {
  Outcome o;
  const auto root = revisit::testing::scratch_dir("acceptance-4");
  int held = 0;
  for (int k = 0; k < 5; ++k) {
    auto c = load_config("strategies.json", root / ("invocation" + std::to_string(k)));
    c.dataset.synthetic->seed = static_cast<std::uint64_t>(k);
    c.strategies = {FusionStrategy::SingleImage, FusionStrategy::MedianImage, FusionStrategy::LatentTemporalMax};
    c.seeds.clear();
    for (int s = 0; s < 5; ++s) c.seeds.push_back(static_cast<std::uint64_t>(5 * k + s));
    auto r = cmd_run(c, quiet_deterministic());
    const double single = mean_of(r, FusionStrategy::SingleImage);
    const double median = mean_of(r, FusionStrategy::MedianImage);
    const double latent = mean_of(r, FusionStrategy::LatentTemporalMax);
    const bool ok = r.all_ok() && latent >= single + 0.03 && median >= single - 0.005;
    held += ok;
    std::printf("  invocation %d: single %.3f median %.3f latent_max %.3f %s\n", k, single, median, latent,
                ok ? "holds" : "does not hold");
    std::fflush(stdout);
  }
  fs::remove_all(root);
  o.require(held >= 4, "ordering held on " + std::to_string(held) + " of 5 invocations");
  if (o.pass) o.detail = "ordering held on " + std::to_string(held) + " of 5 invocations";
  return o;
}

Outcome density_pattern() {
  Outcome o;
  const auto root = revisit::testing::scratch_dir("acceptance-5");
  auto r = cmd_run(load_config("density.json", root), quiet_deterministic());
  const double single = mean_of(r, FusionStrategy::SingleImage);
  const double latent = mean_of(r, FusionStrategy::LatentTemporalMax);
  fs::remove_all(root);
  o.require(r.all_ok(), "failed runs");
  o.require(latent <= single, fmt("latent_max MSE %.4f > single MSE %.4f", latent, single));
  if (o.pass) o.detail = fmt("latent_max MSE %.4f <= single MSE %.4f", latent, single);
  return o;
}

Outcome gradient_correctness() {
  Outcome o;
  auto reports = cmd_gradient_check({std::begin(kFamilies), std::end(kFamilies)}, 3);
  std::string summary;
  for (const auto& rep : reports) {
    o.require(rep.result.passed && rep.result.max_relative_error < 1e-3,
              to_string(rep.family) + ": " + rep.result.message);
    summary += to_string(rep.family) + fmt(" %.1e ", rep.result.max_relative_error);
  }
  if (o.pass) o.detail = "max relative error " + summary;
  return o;
}

Outcome shape_contract() {
  torch::NoGradGuard no_grad;
  Outcome o;
  auto x = torch::rand({1, 2, 9, 224, 224});
  auto swin = eval_model(ModelFamily::HierarchicalWindowTransformer, 9);
  auto features = swin->encode(x.select(1, 0));
  const int64_t expect[] = {56, 28, 14, 7};
  o.require(features.size() == 4, "hierarchical encoder emitted " + std::to_string(features.size()) + " scales");
  for (size_t s = 0; s < features.size() && s < 4; ++s)
    o.require(features[s].size(2) == expect[s] && features[s].size(3) == expect[s],
              "scale " + std::to_string(s) + " is " + std::to_string(features[s].size(2)));
  for (auto family : kFamilies) {
    auto model = eval_model(family, 9);
    auto out = model->forward(x);
    o.require(out.sizes() == torch::IntArrayRef({1, 224, 224}), to_string(family) + " output not 224x224");
  }
  if (o.pass) o.detail = "scales 56/28/14/7; 224x224 outputs for 3 families";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t h = 4 + trial % 13, w = 3 + trial % 11;
    auto pa = torch::empty({h, w}, torch::kFloat64), pb = torch::empty({h, w}, torch::kFloat64);
    auto da = torch::empty({h, w}, torch::kFloat64), db = torch::empty({h, w}, torch::kFloat64);
    const double density = 0.1 + 0.8 * u(rng);
    long inter = 0, uni = 0;
    double sq = 0;
    for (int64_t i = 0; i < h * w; ++i) {
      const bool a = u(rng) < density, b = u(rng) < density;
      pa.data_ptr<double>()[i] = a;
      pb.data_ptr<double>()[i] = b;
      inter += a && b;
      uni += a || b;
      const double x = u(rng), y = u(rng);
      da.data_ptr<double>()[i] = x;
      db.data_ptr<double>()[i] = y;
      sq += (x - y) * (x - y);
    }
    const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    const double mse = sq / static_cast<double>(h * w);
    o.require(std::abs(compute_iou(pa, pb) - iou) <= 1e-12, "IoU trial " + std::to_string(trial));
    o.require(std::abs(compute_mse(da, db) - mse) <= 1e-12, "MSE trial " + std::to_string(trial));
  }
  auto agg = aggregate_runs({0.4, 0.6});
  o.require(std::abs(agg.mean - 0.5) <= 1e-12 && std::abs(agg.standard_error - 0.1) <= 1e-12,
            fmt("aggregate [0.4, 0.6] gave (%.6f, %.6f)", agg.mean, agg.standard_error));
  if (o.pass) o.detail = "100 IoU and MSE pairs within 1e-12; [0.4, 0.6] -> (0.5, 0.1)";
  return o;
}

Outcome normalization_conformance() {
  Outcome o;
  const auto constant = NormalizationSpec::constant_scale(4000);
  const auto standard = NormalizationSpec::standardize({1500}, {500});
  const auto percentile = NormalizationSpec::percentile({100}, {4100});
  o.require(std::abs(revisit::testing::normalize_scalar(2000, constant) - 0.5) <= 1e-12, "constant 2000");
  o.require(std::abs(revisit::testing::normalize_scalar(2000, standard) - 1.0) <= 1e-12, "standardize 2000");
  o.require(std::abs(revisit::testing::normalize_scalar(2100, percentile) - 0.5) <= 1e-12, "percentile 2100");
  o.require(revisit::testing::normalize_scalar(9000, constant) == 1.0 && revisit::testing::normalize_scalar(-50, constant) == 0.0, "constant clip");
  o.require(revisit::testing::normalize_scalar(50, percentile) == 0.0 && revisit::testing::normalize_scalar(5000, percentile) == 1.0, "percentile clip");
  o.require(std::abs(revisit::testing::normalize_scalar(-1000, standard) + 5.0) <= 1e-12, "standardize is unbounded");

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20000, 20000);
  auto data = torch::empty({3, 2, 16, 16}, torch::kFloat64);
  for (int64_t i = 0; i < data.numel(); ++i) data.data_ptr<double>()[i] = u(rng);
  auto stack = revisit::testing::make_stack(data);
  const auto two_band = NormalizationSpec::percentile({-300, 10}, {1200, 5000});
  for (const auto& spec : {NormalizationSpec::constant_scale(4000), two_band}) {
    auto out = normalize(stack, spec).data;
    o.require(out.min().item<double>() >= 0.0 && out.max().item<double>() <= 1.0, "bounded mode left [0, 1]");
  }
  // elementwise reference for the percentile mode
  auto out = normalize(stack, two_band).data;
  auto in = data.accessor<double, 4>();
  auto got = out.accessor<double, 4>();
  const double lo[] = {-300, 10}, hi[] = {1200, 5000};
  double worst = 0;
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 16; ++x) {
          const double ref = std::clamp((in[t][c][y][x] - lo[c]) / (hi[c] - lo[c]), 0.0, 1.0);
          worst = std::max(worst, std::abs(got[t][c][y][x] - ref));
        }
  o.require(worst <= 1e-12, fmt("percentile elementwise error %.3e", worst));
  bool raised = false;
  try {
    normalize(stack, NormalizationSpec::standardize({0, 0}, {1, 0}));
  } catch (const InvalidSpecError&) {
    raised = true;
  }
  o.require(raised, "std = 0 accepted");
  if (o.pass) o.detail = "worked examples, clipping and range bounds exact to 1e-12";
  return o;
}

Outcome protocol_conformance() {
  Outcome o;
  const auto root = revisit::testing::scratch_dir("acceptance-10");
  auto c = load_config("smoke.json", root / "a");
  auto first = cmd_run(c, quiet_deterministic());
  c.output_dir = root / "b";
  auto second = cmd_run(c, quiet_deterministic());
  o.require(first.all_ok() && second.all_ok(), "failed runs");
  o.require(first.runs.size() == 4, "expected 4 run rows, got " + std::to_string(first.runs.size()));
  o.require(first.summaries.size() == 2, "expected 2 aggregate rows");
  if (first.summaries.size() == 2) {
    o.require(first.summaries[0].strategy == FusionStrategy::SingleImage &&
                  first.summaries[1].strategy == FusionStrategy::LatentTemporalMax,
              "aggregate rows out of canonical order");
    o.require(first.summaries[0].formatted.find(" ± ") != std::string::npos, "mean ± stderr formatting");
  }
  for (size_t i = 0; i < first.runs.size() && i < second.runs.size(); ++i)
    o.require(first.runs[i].report.iou == second.runs[i].report.iou &&
                  first.runs[i].final_train_loss == second.runs[i].final_train_loss,
              "replay differs at run " + std::to_string(i));
  std::ifstream csv(root / "a" / "results.csv");
  size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  o.require(lines == 1 + 4 + 2, "results.csv has " + std::to_string(lines) + " lines");
  fs::remove_all(root);
  if (o.pass) o.detail = "4 run rows + 2 aggregates in canonical order; replay bit-identical";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"permutation invariance", permutation_invariance}},
      {2, {"T=1 collapse", single_revisit_collapse}},
      {3, {"duplication idempotence", duplication_idempotence}},
      {4, {"strategy ordering", strategy_ordering}},
      {5, {"density pattern", density_pattern}},
      {6, {"gradient correctness", gradient_correctness}},
      {7, {"shape contract", shape_contract}},
      {8, {"metric oracles", metric_oracles}},
      {9, {"normalization conformance", normalization_conformance}},
      {10, {"protocol conformance", protocol_conformance}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.push_back(id);

  int failures = 0;
  for (int id : selected) {
    auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %-26s %s  %s (%.1fs)\n", id, it->second.first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
