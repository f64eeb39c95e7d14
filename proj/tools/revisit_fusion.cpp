// revisit-fusion: data generation, strategy experiments, band comparison,
// negative-image evaluation and gradient checks.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "revisit/errors.hpp"
#include "revisit/experiment.hpp"

namespace fs = std::filesystem;
using namespace revisit;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

struct CommonFlags {
  std::string config;
  std::string out;
  std::string seeds;
  std::optional<bool> deterministic;
  int workers = 1;
};

ExperimentConfig load_experiment(const CommonFlags& f) {
  auto config = ExperimentConfig::load(f.config);
  if (!f.out.empty()) config.output_dir = f.out;
  if (!f.seeds.empty()) config.seeds = parse_seeds(f.seeds);
  config.validate();
  return config;
}

RunOptions run_options(const CommonFlags& f) {
  RunOptions o;
  o.workers = f.workers;
  o.deterministic = f.deterministic;
  return o;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory (overrides output_dir)");
  cmd->add_option("--seeds", f.seeds, "seed count N (0..N-1) or comma list");
  cmd->add_option("--deterministic", f.deterministic, "single-threaded replayable kernels (true|false)");
  cmd->add_option("--workers", f.workers, "parallel worker processes")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-revisit segmentation experiments"};
  app.require_subcommand(1);

  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("generate-data", "write a synthetic revisit dataset");
  gen->add_option("--config", gen_config, "synthetic parameters (JSON); defaults when omitted")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "dataset directory")->required();

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "train and evaluate every strategy x seed");
  add_common(run, run_flags);

  CommonFlags band_flags;
  auto* bands = app.add_subcommand("compare-bands", "RGB versus all-band inputs");
  add_common(bands, band_flags);

  std::string neg_checkpoint, neg_manifest, neg_strategy, neg_out;
  auto* neg = app.add_subcommand("negative-eval", "false positives on negative locations");
  neg->add_option("--checkpoint", neg_checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  neg->add_option("--manifest", neg_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  neg->add_option("--strategy", neg_strategy, "override the checkpoint's fusion strategy");
  neg->add_option("--out", neg_out, "report JSON path");

  std::vector<std::string> gc_families = {"unet", "swin", "vit"};
  int gc_revisits = 3;
  std::uint64_t gc_seed = 0;
  double gc_tolerance = 1e-3;
  double gc_epsilon = 1e-5;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradient-check", "finite-difference check of tiny models");
  gc->add_option("--family", gc_families, "model families")->expected(1, 3);
  gc->add_option("--revisits", gc_revisits, "revisits per sample");
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--tolerance", gc_tolerance, "max relative error");
  gc->add_option("--epsilon", gc_epsilon, "central-difference step");
  gc->add_option("--out", gc_out, "report JSON path");

  std::string job_path, result_path;
  auto* job = app.add_subcommand("run-job", "")->group("");  // worker entry point
  job->add_option("--job", job_path)->required();
  job->add_option("--result", result_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      SyntheticParams params;
      if (!gen_config.empty()) params = SyntheticParams::from_json(read_json_file(gen_config));
      auto manifest = cmd_generate_data(params, gen_out);
      std::cout << "manifest: " << (fs::path(gen_out) / "manifest.json").string() << "\n"
                << "locations: " << manifest.locations.size() << " (train " << manifest.count(Split::Train)
                << ", test " << manifest.count(Split::Test) << ", negative " << manifest.negative_count() << ")\n"
                << "task: " << to_string(manifest.task) << ", revisits: " << params.revisits
                << ", bands: " << manifest.bands.size() << ", size: " << manifest.height << "x" << manifest.width
                << "\n"
                << "hash: " << manifest_hash(manifest) << "\n";
      return 0;
    }
    if (*run || *bands) {
      const auto& flags = *run ? run_flags : band_flags;
      auto config = load_experiment(flags);
      auto result = *run ? cmd_run(config, run_options(flags)) : cmd_compare_bands(config, run_options(flags));
      std::cerr << "results: " << (config.output_dir / "results.csv").string() << "\n";
      if (result.failed_runs() == result.runs.size()) return 2;
      return result.all_ok() ? 0 : 1;
    }
    if (*neg) {
      std::optional<FusionStrategy> strategy;
      if (!neg_strategy.empty()) strategy = fusion_strategy_from_string(neg_strategy);
      auto report = cmd_negative_eval(neg_checkpoint, neg_manifest, strategy);
      if (!neg_out.empty()) write_json_file(neg_out, report.to_json());
      std::cout << report.stats.summary() << "\n";
      for (size_t k = 0; k < report.stats.bucket_edges.size(); ++k) {
        std::cout << "  [" << report.stats.bucket_edges[k] << ", ";
        if (k + 1 < report.stats.bucket_edges.size())
          std::cout << report.stats.bucket_edges[k + 1] << ")";
        else
          std::cout << "inf)";
        std::cout << " pixels: " << report.stats.histogram[k] << " images\n";
      }
      return 0;
    }
    if (*gc) {
      std::vector<ModelFamily> families;
      for (const auto& f : gc_families) families.push_back(model_family_from_string(f));
      GradCheckOptions opts;
      opts.seed = gc_seed;
      opts.tolerance = gc_tolerance;
      opts.epsilon = gc_epsilon;
      auto reports = cmd_gradient_check(families, gc_revisits, opts);
      json out = json::array();
      bool all = true;
      for (const auto& r : reports) {
        std::printf("%-5s %s max_rel_err=%.3e checked=%zu retries=%d kink_skips=%zu\n",
                    to_string(r.family).c_str(), r.result.passed ? "PASS" : "FAIL", r.result.max_relative_error,
                    r.result.checked, r.result.retries, r.result.kink_skips);
        if (!r.result.passed) std::printf("      %s\n", r.result.message.c_str());
        auto j = r.result.to_json();
        j["family"] = to_string(r.family);
        out.push_back(j);
        all = all && r.result.passed;
      }
      if (!gc_out.empty()) write_json_file(gc_out, out);
      return all ? 0 : 1;
    }
    if (*job) {
      auto spec = JobSpec::from_json(read_json_file(job_path));
      auto record = run_job(spec);
      write_json_file(result_path, record.to_json());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
