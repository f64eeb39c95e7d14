#include "revisit/experiment.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "revisit/checkpoint.hpp"
#include "revisit/errors.hpp"
#include "revisit/hash.hpp"

extern char** environ;

namespace revisit {

namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown " + where + " key '" + key + "'");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

size_t strategy_rank(FusionStrategy s) {
  return static_cast<size_t>(std::find(kStrategyOrder.begin(), kStrategyOrder.end(), s) - kStrategyOrder.begin());
}

int metric_decimals(TruthKind task) { return task == TruthKind::BinaryMask ? 3 : 4; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TruthKind head_task(HeadKind head) {
  return head == HeadKind::DensityRegression ? TruthKind::DensityMap : TruthKind::BinaryMask;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

json DatasetSource::to_json() const {
  if (synthetic) return json{{"synthetic", synthetic->to_json()}};
  return json{{"manifest", manifest.string()}};
}

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("experiment needs at least one strategy");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  for (size_t i = 0; i < strategies.size(); ++i)
    for (size_t k = i + 1; k < strategies.size(); ++k)
      if (strategies[i] == strategies[k]) throw ConfigError("strategy '" + to_string(strategies[i]) + "' listed twice");
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t k = i + 1; k < seeds.size(); ++k)
      if (seeds[i] == seeds[k]) throw ConfigError("seed " + std::to_string(seeds[i]) + " listed twice");
  if (!dataset.synthetic && dataset.manifest.empty()) throw ConfigError("dataset needs synthetic params or a manifest");
  if (dataset.synthetic) {
    dataset.synthetic->validate();
    if (dataset.synthetic->task != head_task(model.head))
      throw ConfigError("synthetic task '" + to_string(dataset.synthetic->task) + "' does not match the " +
                        to_string(model.head) + " head");
  }
  if (data.revisits < 1) throw ConfigError("data.revisits must be >= 1");
  train.validate(model.head);
  model.validate();
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
  fs::path probe = fs::absolute(output_dir);
  while (!fs::exists(probe) && probe.has_parent_path() && probe != probe.parent_path()) probe = probe.parent_path();
  if (!fs::is_directory(probe) || ::access(probe.c_str(), W_OK) != 0)
    throw ConfigError("output_dir " + output_dir.string() + " is not writable");
}

json ExperimentConfig::to_json() const {
  json s = json::array();
  for (auto st : strategies) s.push_back(to_string(st));
  return json{{"name", name},         {"dataset", dataset.to_json()}, {"data", data.to_json()},
              {"model", model.to_json()}, {"strategies", s},          {"seeds", seeds},
              {"train", train.to_json()}, {"output_dir", output_dir.string()}};
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output_dir");
  return hash_hex(j.dump());
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, {"name", "dataset", "data", "model", "strategies", "seeds", "train", "output_dir"}, "experiment");
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    const auto& d = j.at("dataset");
    check_keys(d, {"synthetic", "manifest"}, "dataset");
    if (d.contains("synthetic") == d.contains("manifest"))
      throw ConfigError("dataset needs exactly one of 'synthetic' or 'manifest'");
    if (d.contains("synthetic"))
      c.dataset.synthetic = SyntheticParams::from_json(d["synthetic"]);
    else {
      fs::path m = d["manifest"].get<std::string>();
      c.dataset.manifest = m.is_absolute() ? m : base_dir / m;
    }
    if (j.contains("data")) c.data = DataOptions::from_json(j["data"]);
    c.model = ModelConfig::from_json(j.at("model"));
    c.strategies.clear();
    for (const auto& s : j.at("strategies")) c.strategies.push_back(fusion_strategy_from_string(s.get<std::string>()));
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      if (s.is_number_integer()) {
        const auto n = s.get<int64_t>();
        if (n < 1) throw ConfigError("seed count must be >= 1");
        c.seeds.clear();
        for (int64_t i = 0; i < n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(i));
      } else {
        c.seeds = s.get<std::vector<std::uint64_t>>();
      }
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("output_dir")) {
      fs::path o = j["output_dir"].get<std::string>();
      c.output_dir = o.is_absolute() ? o : base_dir / o;
    } else {
      c.output_dir = base_dir / c.output_dir;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  const bool loss_given = j.contains("train") && j["train"].contains("loss");
  if (!loss_given && c.model.head == HeadKind::DensityRegression) c.train.loss = LossKind::MSE;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(read_json(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  try {
    if (text.find(',') == std::string::npos) {
      const long n = std::stol(text);
      if (n < 1) throw ConfigError("--seeds count must be >= 1");
      for (long i = 0; i < n; ++i) out.push_back(static_cast<std::uint64_t>(i));
      return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse seeds '" + text + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Failed: return "failed";
    case RunStatus::Diverged: return "diverged";
  }
  return "?";
}

namespace {

RunStatus run_status_from_string(const std::string& s) {
  if (s == "ok") return RunStatus::Ok;
  if (s == "diverged") return RunStatus::Diverged;
  return RunStatus::Failed;
}

}  // namespace

json RunRecord::to_json() const {
  return json{{"variant", variant},
              {"strategy", to_string(strategy)},
              {"seed", seed},
              {"status", to_string(status)},
              {"message", message},
              {"report", report.to_json()},
              {"final_train_loss", std::isfinite(final_train_loss) ? json(final_train_loss) : json(nullptr)},
              {"epochs", epochs},
              {"seconds", seconds},
              {"config_hash", config_hash},
              {"checkpoint", checkpoint}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.variant = j.at("variant").get<std::string>();
  r.strategy = fusion_strategy_from_string(j.at("strategy").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = run_status_from_string(j.at("status").get<std::string>());
  r.message = j.value("message", "");
  const auto& rep = j.at("report");
  r.report.task = truth_kind_from_string(rep.at("task").get<std::string>());
  r.report.images = rep.value("images", size_t{0});
  r.report.iou = rep.value("iou", 0.0);
  r.report.pooled_iou = rep.value("pooled_iou", 0.0);
  r.report.mse = rep.value("mse", 0.0);
  r.final_train_loss = j.at("final_train_loss").is_null() ? std::nan("") : j["final_train_loss"].get<double>();
  r.epochs = j.value("epochs", 0);
  r.seconds = j.value("seconds", 0.0);
  r.config_hash = j.value("config_hash", "");
  r.checkpoint = j.value("checkpoint", "");
  return r;
}

bool ExperimentResult::all_ok() const { return failed_runs() == 0 && !runs.empty(); }

size_t ExperimentResult::failed_runs() const {
  return static_cast<size_t>(std::count_if(runs.begin(), runs.end(), [](const RunRecord& r) { return !r.ok(); }));
}

json JobSpec::to_json() const {
  return json{{"config", config.to_json()},
              {"variant", variant},
              {"strategy", to_string(strategy)},
              {"seed", seed},
              {"run_dir", run_dir.string()}};
}

JobSpec JobSpec::from_json(const json& j) {
  JobSpec s;
  s.config = ExperimentConfig::from_json(j.at("config"), "/");
  s.variant = j.at("variant").get<std::string>();
  s.strategy = fusion_strategy_from_string(j.at("strategy").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.run_dir = j.at("run_dir").get<std::string>();
  return s;
}

// ---------------------------------------------------------------------------
// Jobs

fs::path ensure_dataset(const ExperimentConfig& config) {
  if (!config.dataset.synthetic) {
    if (!fs::exists(config.dataset.manifest))
      throw IoError("manifest " + config.dataset.manifest.string() + " does not exist");
    return config.dataset.manifest;
  }
  const auto& params = *config.dataset.synthetic;
  const auto dir = config.output_dir / "data" / ("synthetic-" + hash_hex(params.to_json().dump()));
  const auto manifest = dir / "manifest.json";
  if (fs::exists(manifest)) return manifest;
  const auto tmp = dir.string() + ".tmp" + std::to_string(::getpid());
  fs::remove_all(tmp);
  generate_dataset(params, tmp);
  std::error_code ec;
  fs::rename(tmp, dir, ec);
  if (ec) {
    // another process won the race
    fs::remove_all(tmp);
    if (!fs::exists(manifest)) throw IoError("could not place generated dataset at " + dir.string());
  }
  return manifest;
}

namespace {

// Keeps the most recent prepared dataset; consecutive jobs share it.
std::shared_ptr<const PreparedDataset> prepared_for(const fs::path& manifest_path, const DataOptions& options) {
  static std::string cached_key;
  static std::shared_ptr<const PreparedDataset> cached;
  const auto key = fs::absolute(manifest_path).string() + "|" + options.to_json().dump();
  if (cached && key == cached_key) return cached;
  cached.reset();
  auto manifest = DatasetManifest::load(manifest_path);
  cached = std::make_shared<const PreparedDataset>(prepare_dataset(manifest, options));
  cached_key = key;
  return cached;
}

}  // namespace

RunRecord run_job(const JobSpec& job) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.variant = job.variant;
  rec.strategy = job.strategy;
  rec.seed = job.seed;
  rec.config_hash = job.config.hash();
  rec.epochs = job.config.train.epochs;
  rec.report.task = head_task(job.config.model.head);
  rec.final_train_loss = std::nan("");
  try {
    const auto manifest_path = ensure_dataset(job.config);
    auto data = prepared_for(manifest_path, job.config.data);
    TrainConfig tc = job.config.train;
    tc.strategy = job.strategy;
    tc.seed = job.seed;
    ModelConfig mc = job.config.model;
    mc.in_channels = data->channels();
    auto result = train(tc, mc, *data);
    rec.report = evaluate(*result.model, data->test, job.strategy, data->task);
    if (!result.history.epoch_loss.empty()) rec.final_train_loss = result.history.epoch_loss.back();
    rec.status = RunStatus::Ok;
    if (!job.run_dir.empty()) {
      fs::create_directories(job.run_dir);
      json extra{{"data", job.config.data.to_json()},
                 {"normalization", data->normalization.to_json()},
                 {"strategy", to_string(job.strategy)},
                 {"seed", job.seed},
                 {"variant", job.variant},
                 {"config_hash", rec.config_hash},
                 {"epoch_loss", result.history.epoch_loss}};
      rec.checkpoint = (job.run_dir / "model.ckpt").string();
      save_checkpoint(rec.checkpoint, *result.model, extra);
    }
  } catch (const DivergenceError& e) {
    rec.status = RunStatus::Diverged;
    rec.message = e.what();
  } catch (const std::exception& e) {
    rec.status = RunStatus::Failed;
    rec.message = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!job.run_dir.empty()) {
    std::error_code ec;
    fs::create_directories(job.run_dir, ec);
    if (!ec) write_text(job.run_dir / "metrics.json", rec.to_json().dump(2) + "\n");
  }
  return rec;
}

namespace {

void log_record(const RunRecord& r, size_t done, size_t total) {
  std::ostringstream s;
  s << "[" << done << "/" << total << "] " << (r.variant == "default" ? "" : r.variant + " ") << to_string(r.strategy)
    << " seed=" << r.seed << ": " << to_string(r.status);
  if (r.ok()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %s=%.4f", r.report.metric_name().c_str(), r.report.headline());
    s << buf;
  } else {
    s << " (" << r.message << ")";
  }
  char t[32];
  std::snprintf(t, sizeof(t), " %.1fs", r.seconds);
  std::cerr << s.str() << t << "\n";
}

RunRecord failed_record(const JobSpec& job, const std::string& message) {
  RunRecord r;
  r.variant = job.variant;
  r.strategy = job.strategy;
  r.seed = job.seed;
  r.status = RunStatus::Failed;
  r.message = message;
  r.config_hash = job.config.hash();
  r.report.task = head_task(job.config.model.head);
  r.final_train_loss = std::nan("");
  return r;
}

std::vector<RunRecord> run_in_children(const std::vector<JobSpec>& jobs, const RunOptions& options) {
  fs::path exe = options.executable.empty() ? fs::read_symlink("/proc/self/exe") : options.executable;
  std::vector<RunRecord> out(jobs.size());
  std::map<pid_t, size_t> running;
  size_t next = 0, done = 0;
  auto reap_one = [&] {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    auto it = running.find(pid);
    if (it == running.end()) return;
    const size_t k = it->second;
    running.erase(it);
    const auto result_path = jobs[k].run_dir / "result.json";
    if (WIFEXITED(status) && WEXITSTATUS(status) == 0 && fs::exists(result_path)) {
      try {
        out[k] = RunRecord::from_json(read_json(result_path));
      } catch (const std::exception& e) {
        out[k] = failed_record(jobs[k], std::string("unreadable worker result: ") + e.what());
      }
    } else {
      out[k] = failed_record(jobs[k], "worker process exited abnormally");
    }
    ++done;
    if (options.verbose) log_record(out[k], done, jobs.size());
  };
  while (next < jobs.size() || !running.empty()) {
    if (next < jobs.size() && running.size() < static_cast<size_t>(options.workers)) {
      const auto& job = jobs[next];
      fs::create_directories(job.run_dir);
      const auto job_path = job.run_dir / "job.json";
      write_text(job_path, job.to_json().dump(2));
      fs::remove(job.run_dir / "result.json");
      std::vector<std::string> args = {exe.string(), "run-job", "--job", job_path.string(), "--result",
                                       (job.run_dir / "result.json").string()};
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      if (::posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
        out[next] = failed_record(job, "could not start worker process " + exe.string());
        ++done;
      } else {
        running[pid] = next;
      }
      ++next;
      continue;
    }
    reap_one();
  }
  return out;
}

}  // namespace

std::vector<RunRecord> run_jobs(const std::vector<JobSpec>& jobs, const RunOptions& options) {
  if (options.workers < 1) throw ConfigError("--workers must be >= 1");
  if (options.workers > 1 && jobs.size() > 1) return run_in_children(jobs, options);
  std::vector<RunRecord> out;
  for (const auto& job : jobs) {
    out.push_back(run_job(job));
    if (options.verbose) log_record(out.back(), out.size(), jobs.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation and output

std::vector<StrategySummary> summarize(const std::vector<RunRecord>& runs, TruthKind task) {
  std::vector<std::string> variants;
  for (const auto& r : runs)
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  std::vector<StrategySummary> out;
  for (const auto& v : variants) {
    for (auto s : kStrategyOrder) {
      std::vector<double> values;
      size_t total = 0;
      StrategySummary sum;
      sum.variant = v;
      sum.strategy = s;
      for (const auto& r : runs) {
        if (r.variant != v || r.strategy != s) continue;
        ++total;
        sum.config_hash = r.config_hash;
        if (r.ok())
          values.push_back(r.report.headline());
        else
          ++sum.failed;
      }
      if (total == 0) continue;
      if (values.empty()) {
        sum.formatted = "failed (0 of " + std::to_string(total) + " runs)";
      } else {
        sum.aggregate = aggregate_runs(values);
        sum.formatted = format_mean_stderr(*sum.aggregate, metric_decimals(task));
        if (sum.failed) sum.formatted += " [" + std::to_string(sum.failed) + " failed]";
      }
      out.push_back(sum);
    }
  }
  return out;
}

std::string format_table(const std::vector<StrategySummary>& summaries, TruthKind task) {
  const bool variants =
      std::any_of(summaries.begin(), summaries.end(), [](const StrategySummary& s) { return s.variant != "default"; });
  const std::string metric = task == TruthKind::BinaryMask ? "IoU" : "MSE";
  size_t vw = 7, sw = 8;
  for (const auto& s : summaries) {
    vw = std::max(vw, s.variant.size());
    sw = std::max(sw, display_name(s.strategy).size());
  }
  auto pad = [](std::string s, size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  std::string out;
  if (variants) out += pad("Bands", vw + 2);
  out += pad("Strategy", sw + 2) + metric + "\n";
  for (const auto& s : summaries) {
    if (variants) out += pad(s.variant, vw + 2);
    out += pad(display_name(s.strategy), sw + 2) + s.formatted + "\n";
  }
  return out;
}

void write_results(const ExperimentResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string metric = result.task == TruthKind::BinaryMask ? "iou" : "mse";
  std::ostringstream csv;
  csv << "row_type,variant,strategy,seed,status,metric,value,pooled_iou,n,mean,stderr,formatted,final_train_loss,"
         "epochs,seconds,config_hash,message\n";
  for (const auto& r : result.runs) {
    csv << "run," << csv_field(r.variant) << "," << to_string(r.strategy) << "," << r.seed << ","
        << to_string(r.status) << "," << metric << "," << (r.ok() ? number(r.report.headline()) : "") << ","
        << (r.ok() && result.task == TruthKind::BinaryMask ? number(r.report.pooled_iou) : "") << ",,,,,"
        << number(r.final_train_loss) << "," << r.epochs << "," << number(r.seconds) << "," << r.config_hash << ","
        << csv_field(r.message) << "\n";
  }
  json strategies = json::array();
  for (const auto& s : result.summaries) {
    const size_t n = s.aggregate ? s.aggregate->n : 0;
    csv << "aggregate," << csv_field(s.variant) << "," << to_string(s.strategy) << ",,"
        << (s.aggregate ? (s.failed ? "partial" : "ok") : "failed") << "," << metric << ",,," << n << ","
        << (s.aggregate ? number(s.aggregate->mean) : "") << ","
        << (s.aggregate ? number(s.aggregate->standard_error) : "") << "," << csv_field(s.formatted) << ",,,,"
        << s.config_hash << ",\n";
    json row{{"variant", s.variant},
             {"strategy", to_string(s.strategy)},
             {"display_name", display_name(s.strategy)},
             {"config_hash", s.config_hash},
             {"n", n},
             {"failed", s.failed},
             {"formatted", s.formatted}};
    row["mean"] = s.aggregate ? json(s.aggregate->mean) : json(nullptr);
    row["stderr"] = s.aggregate ? json(s.aggregate->standard_error) : json(nullptr);
    row["single_run"] = s.aggregate ? s.aggregate->single_run : false;
    strategies.push_back(row);
  }
  write_text(dir / "results.csv", csv.str());
  json summary{{"config_hash", result.config_hash},
               {"metric", metric},
               {"runs", result.runs.size()},
               {"failed_runs", result.failed_runs()},
               {"strategies", strategies},
               {"warnings", result.warnings}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_text(dir / "table.txt", result.table);
}

namespace {

std::vector<JobSpec> build_jobs(const ExperimentConfig& config, const std::string& variant) {
  auto strategies = config.strategies;
  std::stable_sort(strategies.begin(), strategies.end(),
                   [](FusionStrategy a, FusionStrategy b) { return strategy_rank(a) < strategy_rank(b); });
  std::vector<JobSpec> jobs;
  for (auto s : strategies)
    for (auto seed : config.seeds) {
      JobSpec j;
      j.config = config;
      j.variant = variant;
      j.strategy = s;
      j.seed = seed;
      j.run_dir = config.output_dir / "runs" / (variant + "_" + to_string(s) + "_seed" + std::to_string(seed));
      jobs.push_back(std::move(j));
    }
  return jobs;
}

ExperimentResult finish(std::vector<RunRecord> runs, const ExperimentConfig& config, std::vector<std::string> warnings,
                        const RunOptions& options) {
  ExperimentResult r;
  r.config_hash = config.hash();
  r.task = head_task(config.model.head);
  r.runs = std::move(runs);
  r.warnings = std::move(warnings);
  r.summaries = summarize(r.runs, r.task);
  r.table = format_table(r.summaries, r.task);
  write_results(r, config.output_dir);
  if (options.verbose) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << r.table;
  }
  return r;
}

ExperimentConfig with_overrides(ExperimentConfig config, const RunOptions& options) {
  if (options.deterministic) config.train.deterministic = *options.deterministic;
  config.validate();
  return config;
}

}  // namespace

ExperimentResult cmd_run(const ExperimentConfig& base, const RunOptions& options) {
  const auto config = with_overrides(base, options);
  fs::create_directories(config.output_dir);
  ensure_dataset(config);
  auto jobs = build_jobs(config, "default");
  return finish(run_jobs(jobs, options), config, {}, options);
}

ExperimentResult cmd_compare_bands(const ExperimentConfig& base, const RunOptions& options) {
  const auto config = with_overrides(base, options);
  fs::create_directories(config.output_dir);
  const auto manifest = DatasetManifest::load(ensure_dataset(config));
  const std::vector<std::string> rgb = {"B2", "B3", "B4"};
  std::vector<std::string> warnings;
  auto same = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
      if (!same_band(a[i], b[i])) return false;
    return true;
  };
  if (same(rgb, manifest.bands))
    warnings.push_back("RGB and full band lists are identical; both arms run the same configuration");
  if (base.data.bands) warnings.push_back("configured band selection is replaced by the RGB and full compositions");

  std::vector<JobSpec> jobs;
  for (const auto& [variant, bands] : {std::pair{std::string("rgb"), rgb}, std::pair{std::string("full"), manifest.bands}}) {
    auto arm = config;
    arm.data.bands = BandSpec{bands, {}};
    auto arm_jobs = build_jobs(arm, variant);
    jobs.insert(jobs.end(), arm_jobs.begin(), arm_jobs.end());
  }
  return finish(run_jobs(jobs, options), config, std::move(warnings), options);
}

DatasetManifest cmd_generate_data(const SyntheticParams& params, const fs::path& out_dir) {
  if (params.negative_fraction >= 1.0)
    throw InvalidSpecError("negative_fraction must be below 1 so training has positive examples");
  params.validate();
  return generate_dataset(params, out_dir);
}

json NegativeEvalResult::to_json() const {
  auto j = stats.to_json();
  j["strategy"] = to_string(strategy);
  j["summary"] = stats.summary();
  return j;
}

NegativeEvalResult cmd_negative_eval(const fs::path& checkpoint, const fs::path& manifest_path,
                                     std::optional<FusionStrategy> strategy) {
  auto ck = load_checkpoint(checkpoint);
  const auto manifest = DatasetManifest::load(manifest_path);
  if (manifest.negative_count() == 0)
    throw InvalidSpecError("manifest " + manifest_path.string() + " has no negative locations");
  DataOptions options = DataOptions::from_json(ck.extra.value("data", json::object()));
  NormalizationSpec norm = ck.extra.contains("normalization")
                               ? NormalizationSpec::from_json(ck.extra["normalization"])
                               : fit_normalization(manifest, options.normalization, options.normalization_sample,
                                                   options.seed, options.constant);
  NegativeEvalResult r;
  r.strategy = strategy ? *strategy
                        : (ck.extra.contains("strategy") ? fusion_strategy_from_string(ck.extra["strategy"].get<std::string>())
                                                         : ck.config.fusion);
  std::vector<PreparedLocation> negatives;
  for (const auto& e : manifest.locations)
    if (e.negative) negatives.push_back(prepare_location(manifest, e, options, norm));
  r.stats = negative_image_report(*ck.model, negatives, r.strategy);
  return r;
}

std::vector<GradientCheckReport> cmd_gradient_check(const std::vector<ModelFamily>& families, int revisits,
                                                    const GradCheckOptions& options) {
  if (revisits < 1) throw ConfigError("gradient check needs at least one revisit");
  std::vector<GradientCheckReport> out;
  for (auto family : families) {
    auto [config, size] = tiny_gradcheck_config(family, 4);
    config.seed = options.seed;
    auto model = build_model(config);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(options.seed, static_cast<std::uint64_t>(family)));
    auto x = torch::rand({1, revisits, 4, size, size}, gen, torch::kFloat64);
    auto y = (torch::rand({1, size, size}, gen, torch::kFloat64) > 0.7).to(torch::kFloat64);
    out.push_back({family, gradient_check(*model, x, y, options)});
  }
  return out;
}

}  // namespace revisit
