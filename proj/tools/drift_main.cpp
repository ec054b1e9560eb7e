#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "drift/io.hpp"

namespace fs = std::filesystem;
using namespace drift;

namespace {

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 int reps_override, long long seed_override) {
  RunConfig rc = load_run_config(config_path);
  if (reps_override > 0) rc.sim.reps = reps_override;
  if (seed_override >= 0) rc.sim.seed = std::uint64_t(seed_override);

  StudyReport report = run_study(rc.sim, rc.sweep);
  fs::create_directories(out_dir);
  write_study_csv(report, fs::path(out_dir) / "metrics.csv");
  write_summary_csv(report, fs::path(out_dir) / "summary.csv");
  std::ofstream echo(fs::path(out_dir) / "config.json", std::ios::binary);
  echo << rc.raw_json;

  std::cout << "simulate: " << report.records.size() << " records, "
            << report.failures << "/" << report.total_runs
            << " replications failed\n";
  for (const auto& msg : report.failure_messages)
    std::cerr << "  failed replication: " << msg << "\n";
  return 0;
}

int cmd_fit(const std::string& data_path, const std::string& schema_path,
            const std::string& config_path, const std::string& out_path,
            const std::string& geo, const std::string& method,
            const std::string& delta_opt) {
  ResponseDataset data = load_dataset_csv(data_path, schema_path);
  std::cout << "loaded " << data.n() << " rows, " << data.j() << " items, p="
            << data.p() << (data.O ? ", GEO observed" : ", GEO absent") << "\n";

  FactorConfig fc;
  std::uint64_t seed = 0;
  if (!config_path.empty()) {
    RunConfig rc = load_run_config(config_path);
    fc = rc.sim.factor;
    seed = rc.sim.seed;
  }

  DriftOptions opts;
  if (geo == "observed") opts.geo = GeoSource::observed;
  else if (geo == "unobserved") opts.geo = GeoSource::minimax_center;
  else throw CLI::ValidationError("--geo must be observed or unobserved");
  if (method == "randomized") opts.method = IteMethod::randomized_ols;
  else if (method == "dr") opts.method = IteMethod::dr_learner;
  else throw CLI::ValidationError("--method must be randomized or dr");
  if (delta_opt != "auto") {
    opts.delta_auto = false;
    opts.delta = std::stod(delta_opt);
  }
  if (opts.geo == GeoSource::observed && !data.O)
    throw CLI::ValidationError("dataset has no 'o' column; use --geo unobserved");

  DriftModel model = run_drift(data, fc, opts);
  save_model_artifact(model, data.schema, seed, out_path);
  std::cout << "fit: delta=" << model.delta << " objective="
            << model.solution.objective << " -> " << out_path << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& cov_path,
                const std::string& out_path) {
  LoadedModel lm = load_model_artifact(model_path);
  auto [ids, X] = load_covariates_csv(cov_path);
  if (X.cols() != lm.model.ite.B.rows())
    throw std::runtime_error("covariate dimension does not match model");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "id,tau_hat,itr\n";
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector x = X.row(i).transpose();
    const double tau = drift_predict(lm.model, x);
    out << ids[i] << ',' << nlohmann::json(tau).dump() << ','
        << itr_assign(lm.model, x) << '\n';
  }
  std::cout << "predict: " << X.rows() << " subjects -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRIFT: multi-domain robust individualized treatment effects"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path, schema_path, out_path;
  std::string model_path, cov_path;
  std::string geo = "observed", method = "randomized", delta_opt = "auto";
  int reps = -1;
  long long seed = -1;

  auto* sim = app.add_subcommand("simulate", "run the simulation study");
  sim->add_option("--config", config_path, "run config JSON")->required();
  sim->add_option("--out", out_dir, "output directory")->required();
  sim->add_option("--reps", reps, "override replication count");
  sim->add_option("--seed", seed, "override base seed");

  auto* fit = app.add_subcommand("fit", "fit a DRIFT model from CSV data");
  fit->add_option("--data", data_path, "data CSV (id,a,x1..xp,y1..yJ[,o])")->required();
  fit->add_option("--schema", schema_path, "item schema CSV (name,kind)")->required();
  fit->add_option("--config", config_path, "run config JSON (optional)");
  fit->add_option("--out", out_path, "model artifact path")->required();
  fit->add_option("--geo", geo, "observed|unobserved");
  fit->add_option("--method", method, "randomized|dr");
  fit->add_option("--delta", delta_opt, "auto or a nonnegative number");

  auto* pred = app.add_subcommand("predict", "predict with a saved model");
  pred->add_option("--model", model_path, "model artifact")->required();
  pred->add_option("--covariates", cov_path, "covariates CSV (id,x1..xp)")->required();
  pred->add_option("--out", out_path, "predictions CSV")->required();

  auto* bench = app.add_subcommand("benchmark",
                                   "run all methods with worst-case metric tables");
  bench->add_option("--config", config_path, "run config JSON")->required();
  bench->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(config_path, out_dir, reps, seed);
    if (fit->parsed())
      return cmd_fit(data_path, schema_path, config_path, out_path, geo, method,
                     delta_opt);
    if (pred->parsed()) return cmd_predict(model_path, cov_path, out_path);
    if (bench->parsed()) return cmd_simulate(config_path, out_dir, -1, -1);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
