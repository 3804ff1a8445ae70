#include "damm/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "damm/error.hpp"

namespace damm {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

const char* method_name(Method method) {
  switch (method) {
    case Method::kDamm:
      return "damm";
    case Method::kGmmP:
      return "gmm-p";
    case Method::kGmmPV:
      return "gmm-pv";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "damm") return Method::kDamm;
  if (name == "gmm-p") return Method::kGmmP;
  if (name == "gmm-pv") return Method::kGmmPV;
  throw UsageError("unknown method '" + name + "'; valid methods: damm, gmm-p, gmm-pv");
}

std::vector<int> LearnResult::sample_assignments(Eigen::Index n) const {
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (std::size_t j = 0; j < sample_index.size(); ++j)
    out[static_cast<std::size_t>(sample_index[j])] = partition.assignments[j];
  return out;
}

ClusterData baseline_data(const Demonstration& demo, Method method) {
  demo.validate();
  ClusterData data;
  data.position_dims = demo.dim();
  switch (method) {
    case Method::kGmmP:
      data.features = demo.positions.transpose();
      break;
    case Method::kGmmPV:
      data.features.resize(2 * demo.dim(), demo.size());
      data.features << demo.positions.transpose(), demo.velocities.transpose();
      break;
    case Method::kDamm:
      throw UsageError("baseline_data: damm is not a baseline");
  }
  return data;
}

MixtureState gmm_baseline(const Demonstration& demo, Method method, const PriorOptions& prior,
                          const SamplerConfig& config) {
  ClusterData data = baseline_data(demo, method);
  NiwPrior p = default_prior(data.features, prior);
  return Sampler(std::move(data), std::move(p), config).run();
}

LearnResult learn(const Demonstration& demo, const LearnConfig& config) {
  demo.validate();
  config.sampler.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ClusterData data;
  std::vector<Eigen::Index> index;
  if (config.method == Method::kDamm) {
    const auto obs = build_observations(demo, config.velocity_floor);
    for (std::size_t i = 0; i < obs.size(); ++i)
      if (obs[i].valid()) index.push_back(static_cast<Eigen::Index>(i));
    data = make_cluster_data(obs);
  } else {
    data = baseline_data(demo, config.method);
    for (Eigen::Index i = 0; i < demo.size(); ++i) index.push_back(i);
  }
  NiwPrior prior = default_prior(data.features, config.prior);
  const Sampler sampler(std::move(data), prior, config.sampler);
  MixtureState partition = sampler.run();
  const double cluster_s = seconds_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  FitOptions fit_options = config.fit;
  if (fit_options.workers == 0) fit_options.workers = config.sampler.workers;
  FitReport report;
  LpvDsModel model = fit(partition, demo, fit_options, &report);
  const double fit_s = seconds_since(t1);
  return LearnResult{std::move(partition), std::move(index), std::move(prior), std::move(model), report,
                     cluster_s, fit_s};
}

double rmse(const LpvDsModel& model, const Demonstration& demo) {
  if (model.dim() != demo.dim()) throw UsageError("rmse: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < demo.size(); ++i) {
    const Eigen::VectorXd x = demo.positions.row(i).transpose();
    total += (demo.velocities.row(i).transpose() - model.evaluate(x)).norm();
  }
  return demo.size() ? total / static_cast<double>(demo.size()) : 0.0;
}

double edot(const LpvDsModel& model, const Demonstration& demo) {
  if (model.dim() != demo.dim()) throw UsageError("edot: dimension mismatch");
  double total = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < demo.size(); ++i) {
    const Eigen::VectorXd ref = demo.velocities.row(i).transpose();
    const double ref_norm = ref.norm();
    if (!(ref_norm > 0.0)) continue;
    ++count;
    const Eigen::VectorXd f = model.evaluate(demo.positions.row(i).transpose());
    const double f_norm = f.norm();
    if (!(f_norm > 0.0)) {
      total += 1.0;
      continue;
    }
    const double cosine = std::clamp(f.dot(ref) / (f_norm * ref_norm), -1.0, 1.0);
    total += std::abs(1.0 - cosine);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double dtwd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0 || b.rows() == 0) throw UsageError("dtwd: series must be nonempty");
  if (a.cols() != b.cols()) throw UsageError("dtwd: series differ in dimension");
  const Eigen::Index n = a.rows(), m = b.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(static_cast<std::size_t>(m), kInf), cur(static_cast<std::size_t>(m), kInf);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double cost = (a.row(i) - b.row(j)).norm();
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = kInf;
        if (i > 0) best = std::min(best, prev[static_cast<std::size_t>(j)]);
        if (j > 0) best = std::min(best, cur[static_cast<std::size_t>(j - 1)]);
        if (i > 0 && j > 0) best = std::min(best, prev[static_cast<std::size_t>(j - 1)]);
      }
      cur[static_cast<std::size_t>(j)] = best + cost;
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m - 1)];
}

double reproduction_dtwd(const LpvDsModel& model, const Demonstration& demo, bool* all_converged) {
  const Eigen::VectorXd lo = demo.positions.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = demo.positions.colwise().maxCoeff().transpose();
  RolloutOptions ro;
  ro.dt = demo.time_step();
  ro.convergence_tolerance = 1e-3 * std::max(1e-12, (hi - lo).norm());
  double total = 0.0;
  bool converged = true;
  for (std::size_t k = 0; k < demo.trajectory_count(); ++k) {
    const Eigen::Index b = demo.trajectory_begin(k), e = demo.trajectory_end(k);
    ro.max_steps = static_cast<int>(3 * (e - b)) - 1;
    const RolloutTrace trace = rollout(model, demo.positions.row(b).transpose(), ro);
    converged = converged && trace.converged;
    total += dtwd(trace.states, demo.positions.middleRows(b, e - b));
  }
  if (all_converged) *all_converged = converged;
  return total / static_cast<double>(demo.trajectory_count());
}

EvalReport benchmark(const Demonstration& demo, const LearnConfig& config) {
  const LearnResult result = learn(demo, config);
  EvalReport report;
  report.method = method_name(config.method);
  report.rmse = rmse(result.model, demo);
  report.edot = edot(result.model, demo);
  report.dtwd = reproduction_dtwd(result.model, demo, &report.rollouts_converged);
  report.wall_time_cluster_s = result.wall_time_cluster_s;
  report.wall_time_fit_s = result.wall_time_fit_s;
  report.K_final = result.partition.num_components();
  report.seed = config.sampler.seed;
  report.objective = result.fit.objective;
  return report;
}

}  // namespace damm
