#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gcfn/errors.hpp"
#include "gcfn/experiment/experiment.hpp"
#include "gcfn/util/hash.hpp"

using namespace gcfn;
using namespace gcfn::experiment;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
  return config_from_json({{"dataset", "synthetic"},
                           {"scm", {{"n_samples", 600}}},
                           {"gan", {{"epochs", 3}, {"batch_size", 64}}},
                           {"predictor", {{"epochs", 2}}},
                           {"lambda_grid", {0.0, 1.0}},
                           {"seeds", {3, 4}},
                           {"out", out.string()}});
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gcfn_test_experiment_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config json: defaults, overrides, errors") {
  const auto d = config_from_json(json::object());
  CHECK(d.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(d.lambda_grid == std::vector<double>{0.5});
  CHECK(d.gamma_grid.size() == 10);
  CHECK(d.predictor.epochs == 30);

  const auto c = config_from_json({{"dataset", "semi-sin"}, {"n_seeds", 2}, {"lambda", 2.0}, {"gan", {{"alpha", 3.0}}}});
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(c.lambda_grid == std::vector<double>{2.0});
  CHECK(c.gan.alpha == 3.0);
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_AS(config_from_json({{"lamda", 1.0}}), ValidationError);
  CHECK_THROWS_AS(config_from_json({{"lambda_grid", json::array()}}), ValidationError);
  CHECK_THROWS_AS(config_from_json({{"seeds", {1, 1}}}), ValidationError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "csv"}}), ValidationError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "mnist"}}), ValidationError);
  CHECK_THROWS_AS(config_from_json({{"seeds", "zero"}}), ValidationError);

  ExperimentConfig a = d, b = d;
  b.output_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.lambda_grid = {1.0};
  CHECK(config_hash(a) != config_hash(b));
  CHECK(lambda_tag(0.5) == "lambda-0.5");
  CHECK(lambda_tag(0.0) == "lambda-0");
  CHECK(lambda_tag(1000.0) == "lambda-1000");
}

TEST_CASE("prepare_data is seeded and keeps the simulator overrides") {
  DatasetSpec spec;
  spec.name = "semi-sigmoid";
  spec.scm = json{{"n_samples", 500}};
  const auto p1 = prepare_data(spec, 7);
  const auto p2 = prepare_data(spec, 7);
  const auto p3 = prepare_data(spec, 8);
  CHECK(p1.train.rows() == 400);
  CHECK(p1.test.rows() == 100);
  CHECK(p1.train.m == p2.train.m);
  CHECK_FALSE(p1.train.m == p3.train.m);
  spec.name = "csv";
  spec.csv = "/nonexistent.csv";
  spec.schema = "/nonexistent.json";
  CHECK_THROWS_AS(prepare_data(spec, 0), IoError);
}

TEST_CASE("run_experiment writes complete manifests and reports") {
  const auto out = scratch("run");
  const auto cfg = tiny_config(out);
  const auto result = run_experiment(cfg);
  REQUIRE(result.manifests.size() == 2);
  for (const auto& m : result.manifests) {
    CHECK(m.status == "ok");
    CHECK(m.config_hash == config_hash(cfg));
    // Every referenced file exists and hashes match.
    const auto dir = out / ("seed-" + std::to_string(m.seed));
    CHECK(m.artifacts.size() == 4 + 1 + 2 * 3);
    for (const auto& [rel, hash] : m.artifacts) {
      REQUIRE(fs::exists(dir / rel));
      CHECK(util::hex64(util::hash_file(dir / rel)) == hash);
    }
  }
  for (const char* f : {"config.json", "report.json", "tradeoff.csv", "utility.csv", "report-lambda-0.csv",
                        "report-lambda-1.csv"}) {
    CHECK(fs::exists(out / f));
  }
  const auto rep = result.report(1.0);
  CHECK(rep.n_runs() == 2);
  CHECK(rep.mean("cf_true").has_value());
  CHECK(rep.mean("nmse.m_vs_cf") == 1.0);
  CHECK(rep.mean("bound.holds") == 1.0);

  // Reloading from disk gives the same numbers.
  const auto loaded = load_results(out);
  CHECK(loaded.report(1.0).to_json() == rep.to_json());

  // Paired deltas: same lambda gives zeros.
  const auto same = compare_baseline(result, 1.0, 1.0);
  for (const auto& row : same.at("per_seed")) {
    CHECK(row.at("d_accuracy") == 0.0);
    CHECK(row.at("d_cf") == 0.0);
  }
  const auto cmp = compare_baseline(result, 0.0, 1.0);
  CHECK(cmp.at("n_seeds") == 2);
  CHECK_THROWS_AS(compare_baseline(result, 0.0, 2.0), ValidationError);
  ExperimentResult partial = result;
  partial.seeds[1].by_lambda.erase(1.0);
  CHECK_THROWS_AS(compare_baseline(partial, 0.0, 1.0), ValidationError);

  // Replaying a manifest reproduces every artifact bit-exactly.
  const auto check = replay_manifest(result.manifests[0], scratch("replay"));
  CHECK(check.identical);
  CHECK(check.mismatched.empty());
  fs::remove_all(out);
  fs::remove_all(scratch("replay"));
}

TEST_CASE("a failing seed is recorded, not thrown") {
  const auto out = scratch("fail");
  auto cfg = tiny_config(out);
  cfg.dataset.name = "csv";
  cfg.dataset.csv = out / "missing.csv";
  cfg.dataset.schema = out / "missing.json";
  const auto result = run_experiment(cfg);
  REQUIRE(result.manifests.size() == 2);
  for (const auto& m : result.manifests) {
    CHECK(m.status == "failed");
    const auto err = json::parse(m.error);
    CHECK(err.at("stage") == "data");
    CHECK(err.at("kind") == "io");
    CHECK(fs::exists(out / ("seed-" + std::to_string(m.seed)) / "manifest.json"));
  }
  CHECK(result.report(0.0).n_runs() == 0);
  const auto rep = json::parse(std::ifstream(out / "report.json"));
  CHECK(rep.at("failures").size() == 2);
  fs::remove_all(out);
}
