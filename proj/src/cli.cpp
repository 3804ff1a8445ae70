#include "damm/cli.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "damm/error.hpp"
#include "damm/evalkit.hpp"
#include "damm/model_io.hpp"

namespace damm::cli {

namespace {

using nlohmann::json;

struct Common {
  double alpha = 1.0;
  double nu = 0.0;
  double kappa = 1.0;
  double psi_scale = 0.2;
  double dir_var_prior = 0.1;
  int launch_scans = 5;
  int iters = 100;
  std::uint64_t seed = 0;
  double velocity_floor = -1.0;
  double dt = 0.0;
  std::vector<double> attractor;
  int workers = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--alpha", c.alpha, "DP concentration")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--nu", c.nu, "NIW degrees of freedom (0: D+3)")->capture_default_str();
  cmd->add_option("--kappa", c.kappa, "NIW mean precision")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--psi-scale", c.psi_scale, "NIW scale as a fraction of the empirical covariance")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--dir-var-prior", c.dir_var_prior, "prior mean of the directional variance (rad^2)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--launch-scans", c.launch_scans, "refinement scans of the split/merge launch state")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--iters", c.iters, "sampler iterations")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--velocity-floor", c.velocity_floor, "minimum speed carrying a direction (<0: default)");
  cmd->add_option("--dt", c.dt, "sampling period of the input when velocities are absent")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--attractor", c.attractor, "attractor x,y[,z,...]")->delimiter(',');
  cmd->add_option("--workers", c.workers, "worker threads (default: DAMM_WORKERS or all cores)")
      ->check(CLI::NonNegativeNumber);
}

LearnConfig learn_config(const Common& c, Method method) {
  LearnConfig cfg;
  cfg.method = method;
  cfg.prior.alpha = c.alpha;
  cfg.prior.nu = c.nu;
  cfg.prior.kappa = c.kappa;
  cfg.prior.psi_scale = c.psi_scale;
  cfg.prior.dir_var_prior = c.dir_var_prior;
  cfg.sampler.iterations = c.iters;
  cfg.sampler.launch_scans = c.launch_scans;
  cfg.sampler.seed = c.seed;
  cfg.sampler.workers = c.workers;
  cfg.fit.workers = c.workers;
  cfg.velocity_floor = c.velocity_floor;
  return cfg;
}

Shape parse_shape(const std::string& name) {
  for (Shape s : {Shape::kLine, Shape::kSCurve, Shape::kMultiBehavior})
    if (name == shape_name(s)) return s;
  throw UsageError("unknown synthetic shape '" + name + "'; valid: line, s-curve, multi-behavior");
}

Demonstration load_demo(const std::string& path, const Common& c) {
  Demonstration demo;
  const std::string prefix = "synthetic:";
  if (path.rfind(prefix, 0) == 0) {
    demo = synthetic_demo(parse_shape(path.substr(prefix.size())));
  } else {
    demo = load_trajectories(path, TrajectoryFormat::kAuto, c.dt > 0.0 ? std::optional<double>(c.dt) : std::nullopt);
  }
  if (!c.attractor.empty()) {
    if (static_cast<Eigen::Index>(c.attractor.size()) != demo.dim())
      throw UsageError("--attractor needs " + std::to_string(demo.dim()) + " values");
    demo.attractor = Eigen::Map<const Eigen::VectorXd>(c.attractor.data(), demo.dim());
  }
  demo.validate();
  return demo;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

json summary_json(const LearnResult& r, const Demonstration& demo) {
  json j;
  j["K"] = r.partition.num_components();
  j["objective"] = r.fit.objective;
  j["initial_objective"] = r.fit.initial_objective;
  j["fit_iterations"] = r.fit.iterations;
  j["fit_converged"] = r.fit.converged;
  j["rmse"] = rmse(r.model, demo);
  j["edot"] = edot(r.model, demo);
  j["wall_time_cluster_s"] = r.wall_time_cluster_s;
  j["wall_time_fit_s"] = r.wall_time_fit_s;
  return j;
}

int cmd_learn(const std::string& input, const std::string& output, const std::string& method, const Common& c,
              std::ostream& out) {
  const LearnConfig cfg = learn_config(c, parse_method(method));
  const Demonstration demo = load_demo(input, c);
  const LearnResult result = learn(demo, cfg);
  save_model(make_model_file(result, demo, cfg), output);
  json j = summary_json(result, demo);
  j["command"] = "learn";
  j["method"] = method;
  j["seed"] = c.seed;
  j["output"] = output;
  out << j.dump() << std::endl;
  return 0;
}

int cmd_incremental(const std::string& model_in, const std::string& old_path, const std::string& new_path,
                    const std::string& output, const Common& c, std::ostream& out) {
  const ModelFile previous = load_model(model_in);
  if (previous.method != "damm") throw UsageError("incremental learning needs a damm model");
  Common cc = c;
  if (cc.attractor.empty()) cc.attractor.assign(previous.attractor.data(), previous.attractor.data() + previous.dim());
  const Demonstration old_demo = load_demo(old_path, cc);
  const Demonstration new_demo = load_demo(new_path, cc);
  if (old_demo.dim() != previous.dim() || new_demo.dim() != previous.dim())
    throw UsageError("data dimension does not match the model");
  if (static_cast<Eigen::Index>(previous.assignments.size()) != old_demo.size())
    throw UsageError("old data has " + std::to_string(old_demo.size()) + " samples but the model stores " +
                     std::to_string(previous.assignments.size()) + " assignments");

  const auto t0 = std::chrono::steady_clock::now();
  const auto old_obs = build_observations(old_demo, previous.velocity_floor);
  for (std::size_t i = 0; i < old_obs.size(); ++i)
    if (old_obs[i].valid() != (previous.assignments[i] >= 0))
      throw UsageError("old data does not match the model's assignments at sample " + std::to_string(i));
  const double floor = c.velocity_floor >= 0.0 ? c.velocity_floor : previous.velocity_floor;
  const auto new_obs = build_observations(new_demo, floor);

  SamplerConfig sc;
  sc.iterations = c.iters;
  sc.launch_scans = c.launch_scans;
  sc.seed = c.seed;
  sc.workers = c.workers;
  MixtureState state = run_incremental(previous.partition(), old_obs, new_obs, previous.prior, sc);
  const double cluster_s = seconds_since(t0);

  Demonstration all = concatenate(old_demo, new_demo);
  const auto t1 = std::chrono::steady_clock::now();
  FitOptions fo;
  fo.workers = c.workers;
  FitReport report;
  LpvDsModel model = fit(state, all, fo, &report);
  const double fit_s = seconds_since(t1);

  std::vector<Eigen::Index> index;
  for (std::size_t i = 0; i < old_obs.size(); ++i)
    if (old_obs[i].valid()) index.push_back(static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < new_obs.size(); ++i)
    if (new_obs[i].valid()) index.push_back(old_demo.size() + static_cast<Eigen::Index>(i));
  LearnResult result{std::move(state), std::move(index), previous.prior, std::move(model), report, cluster_s, fit_s};

  ModelFile file;
  file.method = "damm";
  file.attractor = result.model.attractor();
  file.components = result.partition.components;
  file.a = result.model.a();
  file.assignments = result.sample_assignments(all.size());
  file.prior = previous.prior;
  file.seed = c.seed;
  file.iterations = sc.iterations;
  file.launch_scans = sc.launch_scans;
  file.velocity_floor = previous.velocity_floor;
  file.objective = report.objective;
  file.fit_iterations = report.iterations;
  save_model(file, output);

  json j = summary_json(result, all);
  j["command"] = "incremental";
  j["K_previous"] = previous.num_components();
  j["seed"] = c.seed;
  j["output"] = output;
  out << j.dump() << std::endl;
  return 0;
}

struct RolloutArgs {
  std::string model;
  std::vector<double> start;
  std::string data;
  std::string output;
  double dt = 0.01;
  int steps = 10000;
  double tol = 1e-3;
  std::string integrator = "rk4";
  double data_dt = 0.0;
};

int cmd_rollout(const RolloutArgs& a, std::ostream& out, std::ostream& err) {
  const ModelFile file = load_model(a.model);
  const LpvDsModel model = file.model();
  RolloutOptions ro;
  ro.dt = a.dt;
  ro.max_steps = a.steps;
  ro.convergence_tolerance = a.tol;
  if (a.integrator == "rk4") ro.integrator = Integrator::kRk4;
  else if (a.integrator == "euler") ro.integrator = Integrator::kEuler;
  else throw UsageError("unknown integrator '" + a.integrator + "'; valid: rk4, euler");

  std::vector<Eigen::VectorXd> starts;
  if (!a.start.empty()) {
    if (static_cast<Eigen::Index>(a.start.size()) != model.dim())
      throw UsageError("--start needs " + std::to_string(model.dim()) + " values");
    starts.push_back(Eigen::Map<const Eigen::VectorXd>(a.start.data(), model.dim()));
  } else if (!a.data.empty()) {
    Common c;
    c.dt = a.data_dt;
    const Demonstration demo = load_demo(a.data, c);
    if (demo.dim() != model.dim()) throw UsageError("data dimension does not match the model");
    for (std::size_t k = 0; k < demo.trajectory_count(); ++k)
      starts.push_back(demo.positions.row(demo.trajectory_begin(k)).transpose());
  } else {
    throw UsageError("rollout needs --start or --data");
  }

  Demonstration traces;
  traces.trajectory_starts.clear();
  std::vector<RolloutTrace> results;
  json converged = json::array(), lengths = json::array();
  Eigen::Index rows = 0;
  for (const auto& s : starts) {
    results.push_back(rollout(model, s, ro));
    converged.push_back(results.back().converged);
    lengths.push_back(results.back().states.rows());
    rows += results.back().states.rows();
  }
  traces.positions.resize(rows, model.dim());
  traces.velocities.resize(rows, model.dim());
  Eigen::Index r = 0;
  for (const auto& t : results) {
    traces.trajectory_starts.push_back(r);
    traces.positions.middleRows(r, t.states.rows()) = t.states;
    traces.velocities.middleRows(r, t.states.rows()) = t.velocities;
    r += t.states.rows();
  }
  traces.attractor = model.attractor();
  traces.dt = a.dt;

  json j;
  j["command"] = "rollout";
  j["converged"] = converged;
  j["steps"] = lengths;
  std::string csv = format_trajectories_csv(traces);
  if (a.output.empty()) {
    out << csv;
    err << j.dump() << std::endl;
  } else {
    write_file_atomic(a.output, csv);
    j["output"] = a.output;
    out << j.dump() << std::endl;
  }
  return 0;
}

json report_json(const EvalReport& r) {
  return json{{"method", r.method},
              {"seed", r.seed},
              {"rmse", r.rmse},
              {"edot", r.edot},
              {"dtwd", r.dtwd},
              {"K_final", r.K_final},
              {"objective", r.objective},
              {"rollouts_converged", r.rollouts_converged},
              {"wall_time_cluster_s", r.wall_time_cluster_s},
              {"wall_time_fit_s", r.wall_time_fit_s}};
}

int cmd_benchmark(const std::string& input, const std::vector<std::string>& methods, int seeds, const Common& c,
                  std::ostream& out) {
  std::vector<Method> parsed;
  for (const auto& m : methods) parsed.push_back(parse_method(m));
  const Demonstration demo = load_demo(input, c);
  json reports = json::array();
  std::ostringstream table;
  table << "method   metric   mean        std\n";
  for (Method m : parsed) {
    std::vector<EvalReport> rs;
    for (int s = 0; s < seeds; ++s) {
      LearnConfig cfg = learn_config(c, m);
      cfg.sampler.seed = c.seed + static_cast<std::uint64_t>(s);
      rs.push_back(benchmark(demo, cfg));
      reports.push_back(report_json(rs.back()));
    }
    auto stat = [&](const char* name, auto get) {
      double mean = 0.0, sq = 0.0;
      for (const auto& r : rs) mean += get(r);
      mean /= static_cast<double>(rs.size());
      for (const auto& r : rs) sq += (get(r) - mean) * (get(r) - mean);
      const double sd = rs.size() > 1 ? std::sqrt(sq / static_cast<double>(rs.size() - 1)) : 0.0;
      char line[128];
      std::snprintf(line, sizeof line, "%-8s %-8s %-11.5g %.5g\n", method_name(m), name, mean, sd);
      table << line;
    };
    stat("rmse", [](const EvalReport& r) { return r.rmse; });
    stat("edot", [](const EvalReport& r) { return r.edot; });
    stat("dtwd", [](const EvalReport& r) { return r.dtwd; });
    stat("K", [](const EvalReport& r) { return static_cast<double>(r.K_final); });
    stat("time_s", [](const EvalReport& r) { return r.wall_time_cluster_s + r.wall_time_fit_s; });
  }
  out << reports.dump() << "\n" << table.str() << std::flush;
  return 0;
}

int cmd_generate(const std::string& shape, const std::string& output, std::uint64_t seed, std::ostream& out) {
  const Demonstration demo = synthetic_demo(parse_shape(shape), seed);
  save_trajectories(demo, output);
  out << json{{"command", "generate"}, {"shape", shape}, {"samples", demo.size()}, {"output", output}}.dump()
      << std::endl;
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Directionality-aware mixture models and stable LPV dynamical systems"};
  app.require_subcommand(1);

  Common learn_flags;
  std::string learn_in, learn_out, learn_method = "damm";
  auto* learn_cmd = app.add_subcommand("learn", "cluster a demonstration and fit a stable LPV-DS");
  learn_cmd->add_option("input", learn_in, "trajectory file (.csv/.json) or synthetic:<shape>")->required();
  learn_cmd->add_option("-o,--output", learn_out, "model file to write")->required();
  learn_cmd->add_option("--method", learn_method, "damm | gmm-p | gmm-pv")->capture_default_str();
  add_common(learn_cmd, learn_flags);

  Common inc_flags;
  std::string inc_model, inc_old, inc_new, inc_out;
  auto* inc_cmd = app.add_subcommand("incremental", "cluster a new batch against a learned model and refit");
  inc_cmd->add_option("model", inc_model, "previous model file")->required();
  inc_cmd->add_option("old_data", inc_old, "data the previous model was learned from")->required();
  inc_cmd->add_option("new_data", inc_new, "new demonstration batch")->required();
  inc_cmd->add_option("-o,--output", inc_out, "model file to write")->required();
  add_common(inc_cmd, inc_flags);

  RolloutArgs ro;
  auto* ro_cmd = app.add_subcommand("rollout", "integrate a learned model and write the trace as CSV");
  ro_cmd->add_option("model", ro.model, "model file")->required();
  ro_cmd->add_option("--start", ro.start, "initial state x,y[,...]")->delimiter(',');
  ro_cmd->add_option("--data", ro.data, "roll out from the first sample of each trajectory in this file");
  ro_cmd->add_option("--data-dt", ro.data_dt, "sampling period of --data when it has no velocities")
      ->check(CLI::PositiveNumber);
  ro_cmd->add_option("-o,--output", ro.output, "CSV file (default: standard output)");
  ro_cmd->add_option("--dt", ro.dt, "integration step")->capture_default_str()->check(CLI::PositiveNumber);
  ro_cmd->add_option("--steps", ro.steps, "maximum steps")->capture_default_str()->check(CLI::NonNegativeNumber);
  ro_cmd->add_option("--tol", ro.tol, "convergence radius around the attractor")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  ro_cmd->add_option("--integrator", ro.integrator, "rk4 | euler")->capture_default_str();

  Common bench_flags;
  std::string bench_in;
  std::vector<std::string> bench_methods{"damm"};
  int bench_seeds = 5;
  auto* bench_cmd = app.add_subcommand("benchmark", "evaluate methods over several seeds");
  bench_cmd->add_option("input", bench_in, "trajectory file (.csv/.json) or synthetic:<shape>")->required();
  bench_cmd->add_option("--method", bench_methods, "damm | gmm-p | gmm-pv (repeatable or comma separated)")
      ->delimiter(',');
  bench_cmd->add_option("--seeds", bench_seeds, "number of seeds, starting at --seed")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_common(bench_cmd, bench_flags);

  std::string gen_shape, gen_out;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("generate", "write a synthetic demonstration");
  gen_cmd->add_option("shape", gen_shape, "line | s-curve | multi-behavior")->required();
  gen_cmd->add_option("-o,--output", gen_out, "trajectory file to write (.csv/.json)")->required();
  gen_cmd->add_option("--seed", gen_seed, "perturbation seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*learn_cmd) return cmd_learn(learn_in, learn_out, learn_method, learn_flags, out);
    if (*inc_cmd) return cmd_incremental(inc_model, inc_old, inc_new, inc_out, inc_flags, out);
    if (*ro_cmd) return cmd_rollout(ro, out, err);
    if (*bench_cmd) return cmd_benchmark(bench_in, bench_methods, bench_seeds, bench_flags, out);
    if (*gen_cmd) return cmd_generate(gen_shape, gen_out, gen_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace damm::cli
