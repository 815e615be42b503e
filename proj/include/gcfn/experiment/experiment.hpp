#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcfn/cf_gan/cf_gan.hpp"
#include "gcfn/data/dataset.hpp"
#include "gcfn/data/simulate.hpp"
#include "gcfn/fair_predictor/predictor.hpp"
#include "gcfn/metrics/metrics.hpp"

namespace gcfn::experiment {

/// Where the data comes from: a simulator, one of the bundled real-data schemas, or a
/// user CSV with a schema file.
struct DatasetSpec {
  std::string name = "synthetic";  // synthetic | semi-sigmoid | semi-sin | adult | compas | csv
  std::optional<nlohmann::json> scm;   // overrides of the simulator defaults (scm_to_json keys)
  std::filesystem::path csv;           // csv: training (or full) file
  std::filesystem::path test_csv;      // optional fixed test file
  std::filesystem::path schema;        // csv: role schema JSON
  double test_fraction = 0.2;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  gan::GanTrainConfig gan;
  fair::PredictorTrainConfig predictor;
  std::vector<double> lambda_grid = {0.5};
  std::vector<double> gamma_grid = metrics::default_gamma_grid();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t density_bins = 20;
  std::filesystem::path output_dir = "gcfn-out";

  void validate() const;
};

/// Flat JSON form: {"dataset": ..., "scm": {...}, "csv": ..., "gan": {...}, "predictor": {...},
/// "lambda_grid": [...], "gamma_grid": [...], "seeds": [...] | "n_seeds": k, "out": ...}.
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON dump (output_dir excluded).
std::string config_hash(const ExperimentConfig& c);

/// Directory holding adult.data/adult.test/compas-scores-two-years.csv: $GCFN_DATA_DIR,
/// else "data" under the working directory.
std::filesystem::path data_dir();
/// Directory holding the bundled schema files: $GCFN_SCHEMA_DIR, else the source tree's schemas/.
std::filesystem::path schema_dir();

/// Builds the train/test pair for one seed (simulate or ingest, then split and standardize).
data::SplitResult prepare_data(const DatasetSpec& spec, std::uint64_t seed);

struct RunManifest {
  std::string config_hash;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | failed
  std::string error;          // machine-readable record when failed
  std::map<std::string, std::string> artifacts;  // relative path -> fnv1a hex
  std::map<std::string, double> timings_s;
  std::string version;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load(const std::filesystem::path& path);
};

/// Per-seed results keyed by lambda.
struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::map<double, metrics::RunMetrics> by_lambda;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  std::vector<RunManifest> manifests;

  /// Aggregate over successful seeds for one lambda.
  metrics::MetricsReport report(double lambda) const;
  nlohmann::json to_json() const;
};

/// Runs one seed end to end in `seed_dir`. Errors are recorded in the manifest, not thrown.
RunManifest run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& seed_dir,
                     SeedResult* result = nullptr);

/// For each seed: data -> train_gan -> for each lambda train_predictor -> evaluate. Writes
/// per-seed artifacts and manifests, then report.json, report-lambda-*.csv, tradeoff.csv and
/// utility.csv under cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Rebuilds the aggregate from an existing output directory (manifests and metrics files).
ExperimentResult load_results(const std::filesystem::path& output_dir);
void write_reports(const ExperimentResult& result, const std::filesystem::path& output_dir);

/// Paired per-seed deltas (alt - baseline) of accuracy, CF and utility. ValidationError if
/// either lambda is missing or the two have different seed sets.
nlohmann::json compare_baseline(const ExperimentResult& result, double baseline_lambda, double alt_lambda);

struct ReplayCheck {
  bool identical = true;
  std::vector<std::string> mismatched;  // artifacts whose hashes differ
};

/// Re-runs the seed described by a manifest into `scratch_dir` and compares every
/// metrics/report artifact hash with the manifest.
ReplayCheck replay_manifest(const RunManifest& manifest, const std::filesystem::path& scratch_dir);

/// "0.5" -> "lambda-0.5", used in artifact names.
std::string lambda_tag(double lambda);

}  // namespace gcfn::experiment
