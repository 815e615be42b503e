#include "gcfn/experiment/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "gcfn/data/csv.hpp"
#include "gcfn/errors.hpp"
#include "gcfn/util/hash.hpp"

#ifndef GCFN_SCHEMA_DIR
#define GCFN_SCHEMA_DIR "schemas"
#endif

namespace gcfn::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kSimulators = {"synthetic", "synthetic-linear", "semi-sigmoid", "semi-sin"};
const std::set<std::string> kDatasets = {"synthetic", "synthetic-linear", "semi-sigmoid", "semi-sin",
                                         "adult", "compas", "csv"};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

data::RoleSchema read_schema(const fs::path& path) { return data::schema_from_json(read_json(path)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// CF against ground truth when the data has it, else the generated counterfactual.
std::string cf_key(const metrics::RunMetrics& r) { return r.get("cf_true") ? "cf_true" : "cf_gen"; }

std::string error_record(const std::string& stage, const std::exception& e) {
  const auto* ge = dynamic_cast<const Error*>(&e);
  return json{{"stage", stage}, {"kind", ge ? ge->kind() : std::string("internal")}, {"message", e.what()}}.dump();
}

std::string fmt(double v) { return data::format_double(v); }

}  // namespace

std::string lambda_tag(double lambda) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "lambda-%g", lambda);
  return buf;
}

void ExperimentConfig::validate() const {
  if (!kDatasets.count(dataset.name)) throw ValidationError("config: unknown dataset '" + dataset.name + "'");
  if (dataset.name == "csv" && (dataset.csv.empty() || dataset.schema.empty())) {
    throw ValidationError("config: a csv dataset needs both 'csv' and 'schema'");
  }
  if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    throw ValidationError("config: test_fraction must lie in (0, 1)");
  }
  if (lambda_grid.empty()) throw ValidationError("config: lambda_grid must not be empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ValidationError("config: lambda values must be >= 0");
  }
  if (gamma_grid.empty()) throw ValidationError("config: gamma_grid must not be empty");
  for (double g : gamma_grid) {
    if (!(g >= 0.0)) throw ValidationError("config: gamma values must be >= 0");
  }
  if (seeds.empty()) throw ValidationError("config: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("config: duplicate seeds");
  }
  if (density_bins < 2) throw ValidationError("config: density_bins must be >= 2");
  gan.validate();
  predictor.validate();
}

json config_to_json(const ExperimentConfig& c) {
  json j = {{"dataset", c.dataset.name},
            {"test_fraction", c.dataset.test_fraction},
            {"gan", gan::gan_config_to_json(c.gan)},
            {"predictor", fair::predictor_config_to_json(c.predictor)},
            {"lambda_grid", c.lambda_grid},
            {"gamma_grid", c.gamma_grid},
            {"seeds", c.seeds},
            {"density_bins", c.density_bins},
            {"out", c.output_dir.string()}};
  if (c.dataset.scm) j["scm"] = *c.dataset.scm;
  if (!c.dataset.csv.empty()) j["csv"] = c.dataset.csv.string();
  if (!c.dataset.test_csv.empty()) j["test_csv"] = c.dataset.test_csv.string();
  if (!c.dataset.schema.empty()) j["schema"] = c.dataset.schema.string();
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  static const std::set<std::string> known = {"dataset", "test_fraction", "scm", "csv", "test_csv", "schema",
                                              "gan", "predictor", "lambda_grid", "gamma_grid", "seeds",
                                              "n_seeds", "density_bins", "out", "lambda", "seed"};
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ValidationError("config: unknown key '" + k + "'");
  }
  try {
    ExperimentConfig c;
    c.dataset.name = j.value("dataset", c.dataset.name);
    c.dataset.test_fraction = j.value("test_fraction", c.dataset.test_fraction);
    if (j.contains("scm")) c.dataset.scm = j.at("scm");
    if (j.contains("csv")) c.dataset.csv = j.at("csv").get<std::string>();
    if (j.contains("test_csv")) c.dataset.test_csv = j.at("test_csv").get<std::string>();
    if (j.contains("schema")) c.dataset.schema = j.at("schema").get<std::string>();
    if (j.contains("gan")) c.gan = gan::gan_config_from_json(j.at("gan"));
    if (j.contains("predictor")) c.predictor = fair::predictor_config_from_json(j.at("predictor"));
    if (j.contains("lambda_grid")) c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (j.contains("lambda")) c.lambda_grid = {j.at("lambda").get<double>()};
    if (j.contains("gamma_grid")) c.gamma_grid = j.at("gamma_grid").get<std::vector<double>>();
    if (j.contains("n_seeds")) {
      c.seeds.clear();
      for (std::uint64_t s = 0; s < j.at("n_seeds").get<std::uint64_t>(); ++s) c.seeds.push_back(s);
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
    c.density_bins = j.value("density_bins", c.density_bins);
    if (j.contains("out")) c.output_dir = j.at("out").get<std::string>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_json(path)); }

std::string config_hash(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("out");
  return util::hex64(util::fnv1a64(j.dump()));
}

fs::path data_dir() {
  const char* env = std::getenv("GCFN_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("data");
}

fs::path schema_dir() {
  const char* env = std::getenv("GCFN_SCHEMA_DIR");
  return env && *env ? fs::path(env) : fs::path(GCFN_SCHEMA_DIR);
}

data::SplitResult prepare_data(const DatasetSpec& spec, std::uint64_t seed) {
  data::IngestOptions opts;
  opts.log_dropped = false;
  if (kSimulators.count(spec.name)) {
    const auto kind = data::scm_kind_from_name(spec.name);
    json base = data::scm_to_json(data::ScmConfig::defaults(kind, seed));
    if (spec.scm) base.merge_patch(*spec.scm);
    base["kind"] = data::scm_kind_name(kind);
    base["seed"] = seed;
    return data::split(data::simulate(data::scm_from_json(base)), spec.test_fraction, seed);
  }
  if (spec.name == "adult") {
    const auto schema = read_schema(schema_dir() / "adult.json");
    return data::standardize_pair(data::ingest_csv(data_dir() / "adult.data", schema, opts),
                                  data::ingest_csv(data_dir() / "adult.test", schema, opts));
  }
  if (spec.name == "compas") {
    const auto schema = read_schema(schema_dir() / "compas.json");
    return data::split(data::ingest_csv(data_dir() / "compas-scores-two-years.csv", schema, opts),
                       spec.test_fraction, seed);
  }
  if (spec.name == "csv") {
    const auto schema = read_schema(spec.schema);
    auto full = data::ingest_csv(spec.csv, schema, opts);
    if (!spec.test_csv.empty()) return data::standardize_pair(full, data::ingest_csv(spec.test_csv, schema, opts));
    return data::split(full, spec.test_fraction, seed);
  }
  throw ValidationError("unknown dataset '" + spec.name + "'");
}

json RunManifest::to_json() const {
  return {{"config_hash", config_hash}, {"config", config}, {"seed", seed},       {"status", status},
          {"error", error},             {"artifacts", artifacts}, {"timings_s", timings_s}, {"version", version}};
}

RunManifest RunManifest::from_json(const json& j) {
  try {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.status = j.at("status").get<std::string>();
    m.error = j.value("error", std::string());
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.timings_s = j.value("timings_s", std::map<std::string, double>{});
    m.version = j.value("version", std::string());
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

RunManifest RunManifest::load(const fs::path& path) { return from_json(read_json(path)); }

RunManifest run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& seed_dir, SeedResult* result) {
  RunManifest man;
  man.config = config_to_json(cfg);
  man.config.erase("out");
  man.config_hash = config_hash(cfg);
  man.seed = seed;
  man.version = GCFN_VERSION;
  SeedResult local;
  SeedResult& res = result ? *result : local;
  res.seed = seed;
  res.ok = true;
  res.by_lambda.clear();

  std::string stage = "setup";
  auto record = [&](const std::string& rel) { man.artifacts[rel] = util::hex64(util::hash_file(seed_dir / rel)); };
  try {
    fs::create_directories(seed_dir);
    auto t0 = std::chrono::steady_clock::now();
    stage = "data";
    const auto parts = prepare_data(cfg.dataset, seed);
    data::save_dataset(parts.train, seed_dir / "train.csv");
    data::save_dataset(parts.test, seed_dir / "test.csv");
    for (const char* f : {"train.csv", "train.meta.json", "test.csv", "test.meta.json"}) record(f);
    man.timings_s["data"] = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    stage = "train-gan";
    gan::GanTrainConfig gcfg = cfg.gan;
    gcfg.seed = seed;
    const auto gan_bundle = gan::train_gan(parts.train, gcfg);
    gan_bundle.save(seed_dir / "gan.json");
    record("gan.json");
    man.timings_s["train-gan"] = seconds_since(t0);

    for (double lambda : cfg.lambda_grid) {
      const std::string tag = lambda_tag(lambda);
      t0 = std::chrono::steady_clock::now();
      stage = "train-predictor " + tag;
      fair::PredictorTrainConfig pcfg = cfg.predictor;
      pcfg.lambda = lambda;
      pcfg.seed = seed;
      const auto bundle = fair::train_predictor(parts.train, gan_bundle, pcfg);
      bundle.save(seed_dir / ("predictor-" + tag + ".json"));
      record("predictor-" + tag + ".json");

      stage = "evaluate " + tag;
      auto m = metrics::evaluate(bundle, gan_bundle.generator, parts.test, cfg.gamma_grid);
      const auto& hist_loss = gan_bundle.loss_history.back();
      m.values["gan.adversarial"] = hist_loss.adversarial;
      m.values["gan.reconstruction"] = hist_loss.reconstruction;
      m.values["lambda"] = lambda;
      const auto p = fair::predict(bundle.predictor, parts.test.x, parts.test.m);
      const auto hist = metrics::density_export(p, parts.test.a, cfg.density_bins);
      metrics::write_histogram_csv(hist, seed_dir / ("density-" + tag + ".csv"));
      record("density-" + tag + ".csv");
      if (hist.empty_groups.empty()) m.values["density.tv"] = metrics::tv_distance(hist);
      write_text(seed_dir / ("metrics-" + tag + ".json"), m.to_json().dump(2) + "\n");
      record("metrics-" + tag + ".json");
      res.by_lambda[lambda] = std::move(m);
      man.timings_s[tag] = seconds_since(t0);
    }
  } catch (const std::exception& e) {
    man.status = "failed";
    man.error = error_record(stage, e);
    res.ok = false;
  }
  try {
    fs::create_directories(seed_dir);
    write_text(seed_dir / "manifest.json", man.to_json().dump(2) + "\n");
  } catch (const std::exception& e) {
    man.status = "failed";
    man.error = error_record("manifest", e);
    res.ok = false;
  }
  return man;
}

metrics::MetricsReport ExperimentResult::report(double lambda) const {
  metrics::MetricsReport rep;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    const auto it = s.by_lambda.find(lambda);
    if (it == s.by_lambda.end()) continue;
    rep.runs.push_back(it->second);
    rep.run_labels.push_back("seed=" + std::to_string(s.seed));
  }
  return rep;
}

json ExperimentResult::to_json() const {
  json lambdas = json::object();
  for (double l : config.lambda_grid) lambdas[lambda_tag(l)] = report(l).to_json();
  json failures = json::array();
  for (const auto& m : manifests) {
    if (m.status != "ok") failures.push_back({{"seed", m.seed}, {"error", json::parse(m.error, nullptr, false)}});
  }
  json cfg = config_to_json(config);
  cfg.erase("out");
  return {{"config_hash", config_hash(config)}, {"config", cfg}, {"lambdas", lambdas}, {"failures", failures}};
}

void write_reports(const ExperimentResult& result, const fs::path& out) {
  fs::create_directories(out);
  write_text(out / "report.json", result.to_json().dump(2) + "\n");

  data::CsvTable trade;
  trade.header = {"lambda", "n_runs", "accuracy_mean", "accuracy_std", "cf_mean", "cf_std", "cf_gen_mean",
                  "cf_gen_std", "utility_mean", "utility_std"};
  data::CsvTable util_table;
  util_table.header = {"lambda", "gamma", "utility_mean", "utility_std"};
  for (double l : result.config.lambda_grid) {
    const auto rep = result.report(l);
    rep.write_csv(out / ("report-" + lambda_tag(l) + ".csv"));
    if (rep.n_runs() == 0) continue;
    const std::string ck = cf_key(rep.runs.front());
    auto cell = [&](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    trade.rows.push_back({fmt(l), std::to_string(rep.n_runs()), cell(rep.mean("accuracy")),
                          cell(rep.stddev("accuracy")), cell(rep.mean(ck)), cell(rep.stddev(ck)),
                          cell(rep.mean("cf_gen")), cell(rep.stddev("cf_gen")), cell(rep.mean("utility.mean")),
                          cell(rep.stddev("utility.mean"))});
    for (double g : result.config.gamma_grid) {
      char key[48];
      std::snprintf(key, sizeof key, "utility@%.2g", g);
      util_table.rows.push_back({fmt(l), fmt(g), cell(rep.mean(key)), cell(rep.stddev(key))});
    }
  }
  data::write_csv(out / "tradeoff.csv", trade);
  data::write_csv(out / "utility.csv", util_table);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  for (std::uint64_t seed : cfg.seeds) {
    SeedResult sr;
    result.manifests.push_back(run_seed(cfg, seed, cfg.output_dir / ("seed-" + std::to_string(seed)), &sr));
    result.seeds.push_back(std::move(sr));
  }
  write_reports(result, cfg.output_dir);
  return result;
}

ExperimentResult load_results(const fs::path& out) {
  ExperimentResult result;
  result.config = load_config(out / "config.json");
  result.config.output_dir = out;
  for (std::uint64_t seed : result.config.seeds) {
    const fs::path dir = out / ("seed-" + std::to_string(seed));
    if (!fs::exists(dir / "manifest.json")) throw ValidationError("missing manifest for seed " + std::to_string(seed));
    auto man = RunManifest::load(dir / "manifest.json");
    SeedResult sr;
    sr.seed = seed;
    sr.ok = man.status == "ok";
    if (sr.ok) {
      for (double l : result.config.lambda_grid) {
        metrics::RunMetrics m;
        m.values = read_json(dir / ("metrics-" + lambda_tag(l) + ".json")).get<std::map<std::string, double>>();
        sr.by_lambda[l] = std::move(m);
      }
    }
    result.manifests.push_back(std::move(man));
    result.seeds.push_back(std::move(sr));
  }
  return result;
}

json compare_baseline(const ExperimentResult& result, double baseline_lambda, double alt_lambda) {
  std::set<std::uint64_t> seeds_base, seeds_alt;
  for (const auto& s : result.seeds) {
    if (!s.ok) continue;
    if (s.by_lambda.count(baseline_lambda)) seeds_base.insert(s.seed);
    if (s.by_lambda.count(alt_lambda)) seeds_alt.insert(s.seed);
  }
  if (seeds_base.empty()) throw ValidationError("compare: no runs with lambda " + fmt(baseline_lambda));
  if (seeds_alt.empty()) throw ValidationError("compare: no runs with lambda " + fmt(alt_lambda));
  if (seeds_base != seeds_alt) throw ValidationError("compare: the two lambdas were run on different seed sets");

  json per_seed = json::array();
  std::map<std::string, double> sums;
  std::size_t cf_decreased = 0;
  for (const auto& s : result.seeds) {
    if (!seeds_base.count(s.seed)) continue;
    const auto& b = s.by_lambda.at(baseline_lambda);
    const auto& a = s.by_lambda.at(alt_lambda);
    const std::string ck = cf_key(b);
    json row = {{"seed", s.seed}};
    auto delta = [&](const std::string& out_key, const std::string& key) {
      const auto vb = b.get(key), va = a.get(key);
      if (!vb || !va) return;
      row[out_key] = *va - *vb;
      sums[out_key] += *va - *vb;
    };
    delta("d_accuracy", "accuracy");
    delta("d_cf", ck);
    for (const auto& [k, _] : b.values) {
      if (k.rfind("utility", 0) == 0) delta("d_" + k, k);
    }
    if (row.contains("d_cf") && row["d_cf"].get<double>() < 0.0) ++cf_decreased;
    per_seed.push_back(std::move(row));
  }
  json mean = json::object();
  for (const auto& [k, v] : sums) mean[k] = v / static_cast<double>(seeds_base.size());
  return {{"baseline_lambda", baseline_lambda},
          {"alt_lambda", alt_lambda},
          {"n_seeds", seeds_base.size()},
          {"cf_decreased", cf_decreased},
          {"per_seed", per_seed},
          {"mean", mean}};
}

ReplayCheck replay_manifest(const RunManifest& manifest, const fs::path& scratch_dir) {
  ExperimentConfig cfg = config_from_json(manifest.config);
  cfg.output_dir = scratch_dir;
  const auto again = run_seed(cfg, manifest.seed, scratch_dir);
  ReplayCheck check;
  if (again.status != manifest.status) {
    check.identical = false;
    check.mismatched.push_back("status");
  }
  for (const auto& [rel, hash] : manifest.artifacts) {
    const auto it = again.artifacts.find(rel);
    if (it == again.artifacts.end() || it->second != hash) {
      check.identical = false;
      check.mismatched.push_back(rel);
    }
  }
  return check;
}

}  // namespace gcfn::experiment
