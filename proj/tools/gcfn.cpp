// gcfn: command-line front end for simulation, training, evaluation and sweeps.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gcfn/data/csv.hpp"
#include "gcfn/errors.hpp"
#include "gcfn/experiment/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gcfn;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::string out;
  std::string dataset;
  std::string schema;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path + "': " + e.what());
  }
}

bool is_saved_dataset(const std::string& s) {
  return !s.empty() && fs::exists(s) && fs::exists(data::sidecar_path(s));
}

// Config file first, command-line flags on top.
experiment::ExperimentConfig resolve_config(const CommonFlags& f) {
  json j = f.config.empty() ? json::object() : read_json_file(f.config);
  if (!f.dataset.empty() && !is_saved_dataset(f.dataset)) {
    if (fs::exists(f.dataset) && fs::is_regular_file(f.dataset)) {
      j["dataset"] = "csv";
      j["csv"] = f.dataset;
    } else {
      j["dataset"] = f.dataset;
    }
  }
  if (!f.schema.empty()) j["schema"] = f.schema;
  if (f.seed) {
    j.erase("seeds");
    j.erase("n_seeds");
    j["seed"] = *f.seed;
  }
  if (f.lambda) {
    j.erase("lambda_grid");
    j["lambda"] = *f.lambda;
  }
  if (!f.out.empty()) j["out"] = f.out;
  return experiment::config_from_json(j);
}

std::uint64_t first_seed(const experiment::ExperimentConfig& c) { return c.seeds.front(); }

// A saved dataset CSV (with sidecar) is used as is; anything else goes through prepare_data.
data::Dataset resolve_dataset(const CommonFlags& f, const experiment::ExperimentConfig& cfg, bool test_part) {
  if (is_saved_dataset(f.dataset)) return data::load_dataset(f.dataset);
  auto parts = experiment::prepare_data(cfg.dataset, first_seed(cfg));
  return test_part ? std::move(parts.test) : std::move(parts.train);
}

fs::path out_dir(const experiment::ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

void add_common(CLI::App* sub, CommonFlags& f, bool with_lambda) {
  sub->add_option("--config", f.config, "experiment config JSON");
  sub->add_option("--seed", f.seed, "seed (overrides the config's seed list)");
  if (with_lambda) sub->add_option("--lambda", f.lambda, "fairness weight (overrides the config's grid)");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--dataset", f.dataset,
                  "synthetic | semi-sigmoid | semi-sin | adult | compas | a CSV path (raw, with --schema) | a saved dataset CSV");
  sub->add_option("--schema", f.schema, "role schema JSON for a raw CSV dataset");
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative counterfactual fairness network: simulate, train, evaluate, sweep"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* simulate = app.add_subcommand("simulate", "generate (or ingest) a dataset and write train/test CSVs");
  add_common(simulate, f, false);
  std::optional<std::size_t> n_rows;
  simulate->add_option("--n", n_rows, "number of simulated rows");

  auto* train_gan = app.add_subcommand("train-gan", "train the counterfactual generator");
  add_common(train_gan, f, false);

  auto* train_pred = app.add_subcommand("train-predictor", "train the fair classifier against a trained generator");
  add_common(train_pred, f, true);
  std::string gan_path;
  train_pred->add_option("--gan", gan_path, "GAN checkpoint")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a predictor on held-out data");
  add_common(evaluate, f, false);
  std::string pred_path;
  evaluate->add_option("--predictor", pred_path, "predictor checkpoint")->required();
  evaluate->add_option("--gan", gan_path, "GAN checkpoint")->required();

  auto* predict = app.add_subcommand("predict", "score a CSV with a trained predictor (adds p_hat)");
  std::string in_csv, out_csv;
  predict->add_option("--predictor", pred_path, "predictor checkpoint")->required();
  predict->add_option("--in", in_csv, "input CSV in the training schema")->required();
  predict->add_option("--out", out_csv, "output CSV")->required();

  auto* sweep = app.add_subcommand("sweep", "run the full pipeline over seeds and the lambda grid");
  add_common(sweep, f, true);

  auto* compare = app.add_subcommand("compare", "paired per-seed deltas between two lambdas of a sweep");
  add_common(compare, f, false);
  double baseline = 0.0;
  std::optional<double> alt;
  compare->add_option("--baseline", baseline, "baseline lambda (default 0)");
  compare->add_option("--lambda", alt, "lambda to compare (default: every other lambda in the sweep)");
  bool run_first = false;
  compare->add_flag("--run", run_first, "run the sweep described by --config first");

  auto* report = app.add_subcommand("report", "rebuild aggregate reports from a sweep directory");
  std::string report_dir;
  report->add_option("--out", report_dir, "sweep output directory")->required();
  bool verify = false;
  report->add_flag("--verify", verify, "re-run every seed manifest and check artifact hashes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*simulate) {
      if (f.dataset.empty()) f.dataset = "synthetic";
      auto cfg = resolve_config(f);
      if (n_rows) {
        json scm = cfg.dataset.scm.value_or(json::object());
        scm["n_samples"] = *n_rows;
        cfg.dataset.scm = scm;
      }
      const auto parts = experiment::prepare_data(cfg.dataset, first_seed(cfg));
      const auto dir = out_dir(cfg);
      data::save_dataset(parts.train, dir / "train.csv");
      data::save_dataset(parts.test, dir / "test.csv");
      emit({{"train", (dir / "train.csv").string()},
            {"test", (dir / "test.csv").string()},
            {"train_rows", parts.train.rows()},
            {"test_rows", parts.test.rows()}});
    } else if (*train_gan) {
      const auto cfg = resolve_config(f);
      const auto train = resolve_dataset(f, cfg, false);
      auto gcfg = cfg.gan;
      gcfg.seed = first_seed(cfg);
      const auto bundle = gan::train_gan(train, gcfg, [](std::size_t epoch, const gan::GanBundle& b) {
        if ((epoch + 1) % 50 == 0) {
          std::fprintf(stderr, "epoch %zu adv %.5f rec %.5f\n", epoch + 1, b.loss_history.back().adversarial,
                       b.loss_history.back().reconstruction);
        }
      });
      const auto path = out_dir(cfg) / "gan.json";
      bundle.save(path);
      emit({{"gan", path.string()}, {"fingerprint", bundle.fingerprint()},
            {"final", {{"adversarial", bundle.loss_history.back().adversarial},
                       {"reconstruction", bundle.loss_history.back().reconstruction}}}});
    } else if (*train_pred) {
      const auto cfg = resolve_config(f);
      const auto train = resolve_dataset(f, cfg, false);
      const auto gan_bundle = gan::GanBundle::load(gan_path);
      auto pcfg = cfg.predictor;
      pcfg.lambda = cfg.lambda_grid.front();
      pcfg.seed = first_seed(cfg);
      const auto bundle = fair::train_predictor(train, gan_bundle, pcfg);
      const auto path = out_dir(cfg) / ("predictor-" + experiment::lambda_tag(pcfg.lambda) + ".json");
      bundle.save(path);
      emit({{"predictor", path.string()}, {"lambda", pcfg.lambda}, {"lipschitz_cert", bundle.lipschitz_cert},
            {"final", {{"cross_entropy", bundle.loss_history.back().cross_entropy},
                       {"rcm", bundle.loss_history.back().rcm}}}});
    } else if (*evaluate) {
      const auto cfg = resolve_config(f);
      const auto test = resolve_dataset(f, cfg, true);
      const auto bundle = fair::PredictorBundle::load(pred_path);
      const auto gan_bundle = gan::GanBundle::load(gan_path);
      if (bundle.gan_ref != gan_bundle.fingerprint()) {
        throw ValidationError("predictor was trained against a different generator (" + bundle.gan_ref + ")");
      }
      auto m = metrics::evaluate(bundle, gan_bundle.generator, test, cfg.gamma_grid);
      const auto p = fair::predict(bundle.predictor, test.x, test.m);
      const auto hist = metrics::density_export(p, test.a, cfg.density_bins);
      if (hist.empty_groups.empty()) m.values["density.tv"] = metrics::tv_distance(hist);
      const auto dir = out_dir(cfg);
      metrics::write_histogram_csv(hist, dir / "density.csv");
      std::ofstream(dir / "metrics.json") << m.to_json().dump(2) << "\n";
      emit(m.to_json());
    } else if (*predict) {
      const auto bundle = fair::PredictorBundle::load(pred_path);
      const auto n = fair::predict_csv(bundle, in_csv, out_csv);
      emit({{"rows", n}, {"out", out_csv}});
    } else if (*sweep) {
      const auto cfg = resolve_config(f);
      const auto result = experiment::run_experiment(cfg);
      json summary = json::array();
      for (double l : cfg.lambda_grid) {
        const auto rep = result.report(l);
        const std::string ck = rep.n_runs() && rep.runs.front().get("cf_true") ? "cf_true" : "cf_gen";
        summary.push_back({{"lambda", l},
                           {"n_runs", rep.n_runs()},
                           {"accuracy", rep.mean("accuracy").value_or(NAN)},
                           {ck, rep.mean(ck).value_or(NAN)}});
      }
      emit({{"out", cfg.output_dir.string()}, {"summary", summary}});
      for (const auto& m : result.manifests) {
        if (m.status != "ok") return fail("run", "seed " + std::to_string(m.seed) + " failed: " + m.error, 1);
      }
    } else if (*compare) {
      experiment::ExperimentResult result;
      fs::path dir;
      if (run_first) {
        const auto cfg = resolve_config(f);
        result = experiment::run_experiment(cfg);
        dir = cfg.output_dir;
      } else {
        if (f.out.empty()) throw UsageError("compare needs --out <sweep dir> (or --run with --config)");
        dir = f.out;
        result = experiment::load_results(dir);
      }
      json all = json::array();
      for (double l : result.config.lambda_grid) {
        if (l == baseline || (alt && l != *alt)) continue;
        all.push_back(experiment::compare_baseline(result, baseline, l));
      }
      if (all.empty()) throw ValidationError("compare: no lambda to compare against the baseline");
      std::ofstream(dir / "compare.json") << all.dump(2) << "\n";
      emit(all);
    } else if (*report) {
      const auto result = experiment::load_results(report_dir);
      experiment::write_reports(result, report_dir);
      json out = {{"report", (fs::path(report_dir) / "report.json").string()}};
      if (verify) {
        bool all_ok = true;
        json checks = json::array();
        for (const auto& m : result.manifests) {
          const auto scratch = fs::path(report_dir) / "replay" / ("seed-" + std::to_string(m.seed));
          const auto c = experiment::replay_manifest(m, scratch);
          all_ok = all_ok && c.identical;
          checks.push_back({{"seed", m.seed}, {"identical", c.identical}, {"mismatched", c.mismatched}});
        }
        out["replay"] = checks;
        emit(out);
        if (!all_ok) return fail("replay", "re-run artifacts differ from the manifest", 1);
        return 0;
      }
      emit(out);
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
