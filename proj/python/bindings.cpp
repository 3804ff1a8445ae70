#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "damm/cli.hpp"
#include "damm/error.hpp"
#include "damm/evalkit.hpp"
#include "damm/model_io.hpp"
#include "damm/sphere.hpp"

namespace py = pybind11;
using namespace damm;

namespace {

sphere::UnitVector unit(const Eigen::VectorXd& v) { return sphere::UnitVector(v); }

std::vector<sphere::UnitVector> unit_rows(const Eigen::MatrixXd& points) {
  std::vector<sphere::UnitVector> out;
  out.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) out.emplace_back(points.row(i).transpose());
  return out;
}

LearnConfig make_config(const std::string& method, std::uint64_t seed, int iterations, int workers,
                        double alpha, double dir_var_prior, double psi_scale, int launch_scans) {
  LearnConfig cfg;
  cfg.method = parse_method(method);
  cfg.sampler.seed = seed;
  cfg.sampler.iterations = iterations;
  cfg.sampler.workers = workers;
  cfg.sampler.launch_scans = launch_scans;
  cfg.fit.workers = workers;
  cfg.prior.alpha = alpha;
  cfg.prior.dir_var_prior = dir_var_prior;
  cfg.prior.psi_scale = psi_scale;
  return cfg;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["method"] = r.method;
  d["rmse"] = r.rmse;
  d["edot"] = r.edot;
  d["dtwd"] = r.dtwd;
  d["wall_time_cluster_s"] = r.wall_time_cluster_s;
  d["wall_time_fit_s"] = r.wall_time_fit_s;
  d["K_final"] = r.K_final;
  d["seed"] = r.seed;
  d["objective"] = r.objective;
  d["rollouts_converged"] = r.rollouts_converged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_damm, m) {
  m.doc() = "Directionality-aware mixture models and stable LPV dynamical systems";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  // ---- sphere geometry
  auto sp = m.def_submodule("sphere", "Geometry of the unit sphere");
  sp.def("geodesic_distance", [](const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    return sphere::geodesic_distance(unit(p), unit(q));
  }, py::arg("p"), py::arg("q"));
  sp.def("log_map", [](const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    return Eigen::VectorXd(sphere::log_map(unit(p), unit(q)).coords());
  }, py::arg("p"), py::arg("q"));
  sp.def("exp_map", [](const Eigen::VectorXd& p, const Eigen::VectorXd& v) {
    const auto base = unit(p);
    return Eigen::VectorXd(sphere::exp_map(base, sphere::TangentVector(v, base)).coords());
  }, py::arg("p"), py::arg("v"));
  sp.def("frechet_mean", [](const Eigen::MatrixXd& points, const std::vector<double>& weights) {
    const auto units = unit_rows(points);
    const auto r = sphere::frechet_mean(units, weights);
    return py::make_tuple(Eigen::VectorXd(r.mean.coords()), r.iterations, r.converged);
  }, py::arg("points"), py::arg("weights") = std::vector<double>{},
     "Rows of `points` are unit vectors. Returns (mean, iterations, converged).");
  sp.def("directional_variance", [](const Eigen::MatrixXd& points, const Eigen::VectorXd& mean) {
    return sphere::directional_variance(unit_rows(points), unit(mean));
  }, py::arg("points"), py::arg("mean"));

  // ---- demonstrations
  py::class_<Demonstration>(m, "Demonstration")
      .def(py::init([](const Eigen::MatrixXd& positions, std::optional<Eigen::MatrixXd> velocities,
                       std::vector<Eigen::Index> trajectory_starts, std::optional<Eigen::VectorXd> attractor,
                       double dt) {
             Demonstration d;
             d.positions = positions;
             d.trajectory_starts = trajectory_starts.empty() ? std::vector<Eigen::Index>{0} : trajectory_starts;
             d.dt = dt;
             if (velocities) {
               d.velocities = *velocities;
             } else {
               if (!(dt > 0.0)) throw UsageError("Demonstration: velocities or a positive dt are required");
               d.velocities = finite_difference_velocities(positions, d.trajectory_starts, dt);
             }
             if (attractor) {
               d.attractor = *attractor;
             } else {
               d.attractor = Eigen::VectorXd::Zero(positions.cols());
               for (std::size_t k = 0; k < d.trajectory_count(); ++k)
                 d.attractor += positions.row(d.trajectory_end(k) - 1).transpose();
               d.attractor /= static_cast<double>(d.trajectory_count());
             }
             d.validate();
             return d;
           }),
           py::arg("positions"), py::arg("velocities") = py::none(),
           py::arg("trajectory_starts") = std::vector<Eigen::Index>{}, py::arg("attractor") = py::none(),
           py::arg("dt") = 0.0)
      .def_readonly("positions", &Demonstration::positions)
      .def_readonly("velocities", &Demonstration::velocities)
      .def_readonly("trajectory_starts", &Demonstration::trajectory_starts)
      .def_readonly("attractor", &Demonstration::attractor)
      .def_readonly("dt", &Demonstration::dt)
      .def("__len__", &Demonstration::size)
      .def("save", [](const Demonstration& d, const std::string& path) { save_trajectories(d, path); },
           py::arg("path"));

  m.def("load_trajectories", [](const std::string& path, std::optional<double> dt) {
    return load_trajectories(path, TrajectoryFormat::kAuto, dt);
  }, py::arg("path"), py::arg("dt") = py::none());
  m.def("synthetic_demo", [](const std::string& shape, std::uint64_t seed, int samples) {
    for (Shape s : {Shape::kLine, Shape::kSCurve, Shape::kMultiBehavior})
      if (shape == shape_name(s)) return synthetic_demo(s, seed, samples);
    throw UsageError("unknown shape '" + shape + "' (line, s-curve, multi-behavior)");
  }, py::arg("shape"), py::arg("seed") = 0, py::arg("samples_per_trajectory") = 150);

  // ---- dynamical system
  py::class_<RolloutTrace>(m, "RolloutTrace")
      .def_readonly("states", &RolloutTrace::states)
      .def_readonly("velocities", &RolloutTrace::velocities)
      .def_readonly("dt", &RolloutTrace::dt)
      .def_readonly("converged", &RolloutTrace::converged);

  py::class_<LpvDsModel>(m, "LpvDsModel")
      .def_property_readonly("num_components", &LpvDsModel::num_components)
      .def_property_readonly("dim", &LpvDsModel::dim)
      .def_property_readonly("attractor", &LpvDsModel::attractor)
      .def_property_readonly("A", py::overload_cast<>(&LpvDsModel::a, py::const_))
      .def_property_readonly("b", py::overload_cast<>(&LpvDsModel::b, py::const_))
      .def("evaluate", [](const LpvDsModel& model, const Eigen::VectorXd& xi) { return model.evaluate(xi); },
           py::arg("xi"))
      .def("mixing_weights",
           [](const LpvDsModel& model, const Eigen::VectorXd& xi) { return model.mixing_weights(xi); },
           py::arg("xi"))
      .def("max_symmetric_eigenvalue", &LpvDsModel::max_symmetric_eigenvalue, py::arg("k"))
      .def("rollout",
           [](const LpvDsModel& model, const Eigen::VectorXd& xi0, double dt, int max_steps, double tol,
              const std::string& integrator) {
             RolloutOptions ro;
             ro.dt = dt;
             ro.max_steps = max_steps;
             ro.convergence_tolerance = tol;
             if (integrator == "euler") ro.integrator = Integrator::kEuler;
             else if (integrator != "rk4") throw UsageError("integrator must be 'rk4' or 'euler'");
             py::gil_scoped_release release;
             return rollout(model, xi0, ro);
           },
           py::arg("xi0"), py::arg("dt") = 0.01, py::arg("max_steps") = 10000, py::arg("tol") = 1e-3,
           py::arg("integrator") = "rk4");

  py::class_<ModelFile>(m, "Model")
      .def_readonly("method", &ModelFile::method)
      .def_readonly("assignments", &ModelFile::assignments)
      .def_readonly("seed", &ModelFile::seed)
      .def_readonly("objective", &ModelFile::objective)
      .def_property_readonly("num_components", &ModelFile::num_components)
      .def_property_readonly("dynamics", &ModelFile::model)
      .def("save", [](const ModelFile& f, const std::string& path) { save_model(f, path); }, py::arg("path"))
      .def("to_json", &serialize_model)
      .def_static("from_json", &deserialize_model, py::arg("text"));

  m.def("load_model", &load_model, py::arg("path"));

  m.def("learn",
        [](const Demonstration& demo, const std::string& method, std::uint64_t seed, int iterations, int workers,
           double alpha, double dir_var_prior, double psi_scale, int launch_scans) {
          const LearnConfig cfg =
              make_config(method, seed, iterations, workers, alpha, dir_var_prior, psi_scale, launch_scans);
          py::gil_scoped_release release;
          return make_model_file(learn(demo, cfg), demo, cfg);
        },
        py::arg("demo"), py::arg("method") = "damm", py::arg("seed") = 0, py::arg("iterations") = 100,
        py::arg("workers") = 0, py::arg("alpha") = 1.0, py::arg("dir_var_prior") = 0.1,
        py::arg("psi_scale") = 0.2, py::arg("launch_scans") = 5);

  m.def("benchmark",
        [](const Demonstration& demo, const std::string& method, std::uint64_t seed, int iterations, int workers) {
          const LearnConfig cfg = make_config(method, seed, iterations, workers, 1.0, 0.1, 0.2, 5);
          EvalReport r;
          {
            py::gil_scoped_release release;
            r = benchmark(demo, cfg);
          }
          return report_dict(r);
        },
        py::arg("demo"), py::arg("method") = "damm", py::arg("seed") = 0, py::arg("iterations") = 100,
        py::arg("workers") = 0);

  // ---- metrics
  m.def("rmse", &rmse, py::arg("model"), py::arg("demo"));
  m.def("edot", &edot, py::arg("model"), py::arg("demo"));
  m.def("dtwd", &dtwd, py::arg("a"), py::arg("b"));
  m.def("reproduction_dtwd",
        [](const LpvDsModel& model, const Demonstration& demo) { return reproduction_dtwd(model, demo); },
        py::arg("model"), py::arg("demo"));

  m.def("cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"damm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the damm command line; returns (exit code, stdout, stderr).");
}
