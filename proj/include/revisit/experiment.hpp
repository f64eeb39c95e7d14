#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "revisit/backbones.hpp"
#include "revisit/gradcheck.hpp"
#include "revisit/metrics.hpp"
#include "revisit/synthetic.hpp"
#include "revisit/train.hpp"

namespace revisit {

/// Either synthetic parameters (generated on demand under the output
/// directory) or an existing manifest.
struct DatasetSource {
  std::optional<SyntheticParams> synthetic;
  std::filesystem::path manifest;

  json to_json() const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSource dataset;
  DataOptions data;
  /// in_channels is taken from the prepared data.
  ModelConfig model;
  std::vector<FusionStrategy> strategies;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  TrainConfig train;
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError (empty strategies/seeds, unwritable output dir, ...).
  void validate() const;
  json to_json() const;
  /// Hash of the canonical JSON without output_dir.
  std::string hash() const;

  /// Strict keys. Relative paths resolve against `base_dir`. "bands" may be an
  /// object or the name of a default per-model composition.
  static ExperimentConfig from_json(const json& j, const std::filesystem::path& base_dir = ".");
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Parses "5" (seeds 0..4) or "3,7,11".
std::vector<std::uint64_t> parse_seeds(const std::string& text);

struct RunOptions {
  /// >1 runs jobs as child processes of `executable` ("run-job" verb).
  int workers = 1;
  std::optional<bool> deterministic;
  std::filesystem::path executable;
  bool verbose = true;
};

enum class RunStatus { Ok, Failed, Diverged };
std::string to_string(RunStatus status);

struct RunRecord {
  std::string variant = "default";
  FusionStrategy strategy = FusionStrategy::SingleImage;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Failed;
  std::string message;
  MetricReport report;
  double final_train_loss = 0.0;
  int epochs = 0;
  double seconds = 0.0;
  std::string config_hash;
  std::string checkpoint;

  bool ok() const { return status == RunStatus::Ok; }
  json to_json() const;
  static RunRecord from_json(const json& j);
};

struct StrategySummary {
  std::string variant = "default";
  FusionStrategy strategy = FusionStrategy::SingleImage;
  std::optional<RunAggregate> aggregate;  // empty when every run failed
  size_t failed = 0;
  std::string formatted;
  std::string config_hash;
};

struct ExperimentResult {
  std::string config_hash;
  TruthKind task = TruthKind::BinaryMask;
  std::vector<RunRecord> runs;
  std::vector<StrategySummary> summaries;
  std::vector<std::string> warnings;
  std::string table;

  bool all_ok() const;
  size_t failed_runs() const;
};

/// One independent strategy x seed job.
struct JobSpec {
  ExperimentConfig config;
  std::string variant = "default";
  FusionStrategy strategy = FusionStrategy::SingleImage;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;

  json to_json() const;
  static JobSpec from_json(const json& j);
};

/// Manifest path for the configured dataset, generating synthetic data when
/// it is not already present.
std::filesystem::path ensure_dataset(const ExperimentConfig& config);

/// Trains, evaluates and checkpoints one job. Failures are captured in the record.
RunRecord run_job(const JobSpec& job);

/// Runs every job with at most `workers` in flight; results keep job order.
std::vector<RunRecord> run_jobs(const std::vector<JobSpec>& jobs, const RunOptions& options);

/// Per (variant, strategy) aggregates over successful runs. Strategies appear
/// in canonical order within each variant.
std::vector<StrategySummary> summarize(const std::vector<RunRecord>& runs, TruthKind task);

/// Text table, one row per summary, "mean ± stderr" to 3 (IoU) or 4 (MSE) decimals.
std::string format_table(const std::vector<StrategySummary>& summaries, TruthKind task);

/// results.csv (run rows then aggregate rows), summary.json and table.txt.
void write_results(const ExperimentResult& result, const std::filesystem::path& dir);

ExperimentResult cmd_run(const ExperimentConfig& config, const RunOptions& options = {});

/// Same model with the RGB composition (B2, B3, B4) and with every band.
ExperimentResult cmd_compare_bands(const ExperimentConfig& config, const RunOptions& options = {});

/// Validates params (negative_fraction 1.0 is rejected) and writes the dataset.
DatasetManifest cmd_generate_data(const SyntheticParams& params, const std::filesystem::path& out_dir);

struct NegativeEvalResult {
  NegativeStats stats;
  FusionStrategy strategy = FusionStrategy::SingleImage;
  json to_json() const;
};

/// Every negative location of the manifest, prepared as recorded in the
/// checkpoint. Throws InvalidSpecError when the manifest has none.
NegativeEvalResult cmd_negative_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                     std::optional<FusionStrategy> strategy = std::nullopt);

struct GradientCheckReport {
  ModelFamily family = ModelFamily::UNet;
  GradCheckResult result;
};

/// Tiny per-family models, latent max fusion, T revisits, double precision.
std::vector<GradientCheckReport> cmd_gradient_check(const std::vector<ModelFamily>& families, int revisits = 3,
                                                    const GradCheckOptions& options = {});

}  // namespace revisit
