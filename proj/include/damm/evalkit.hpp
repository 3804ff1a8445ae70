#pragma once

// Trajectory I/O, the end-to-end learning pipeline, accuracy metrics and the
// benchmark harness comparing DAMM with Euclidean GMM baselines.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "damm/lpvds.hpp"
#include "damm/model.hpp"
#include "damm/sampler.hpp"

namespace damm {

// ---- trajectory files ------------------------------------------------------

enum class TrajectoryFormat { kAuto, kCsv, kJson };

// CSV: header x1..xd[,v1..vd], one row per sample, trajectories separated by
// a blank line or a `---` row. JSON: {"positions": [[...]...] or
// [[[...]...]...], "velocities"?, "dt"?, "attractor"?}. Missing velocities
// are computed by finite differences and then need dt. Throws ParseError
// (with the line number for CSV) or UsageError.
Demonstration load_trajectories(const std::string& path, TrajectoryFormat format = TrajectoryFormat::kAuto,
                                std::optional<double> dt = std::nullopt);
Demonstration parse_trajectories_csv(const std::string& text, std::optional<double> dt = std::nullopt);
Demonstration parse_trajectories_json(const std::string& text, std::optional<double> dt = std::nullopt);

// Writes positions and velocities with 17 significant digits (JSON also
// keeps dt and the attractor). Atomic: written to a temporary file first.
void save_trajectories(const Demonstration& demo, const std::string& path,
                       TrajectoryFormat format = TrajectoryFormat::kAuto);

std::string format_trajectories_csv(const Demonstration& demo);
std::string format_trajectories_json(const Demonstration& demo);

// Central differences inside each trajectory, one-sided at its ends.
Eigen::MatrixXd finite_difference_velocities(const Eigen::MatrixXd& positions,
                                             const std::vector<Eigen::Index>& trajectory_starts, double dt);

// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

// ---- synthetic demonstrations ---------------------------------------------

enum class Shape { kLine, kSCurve, kMultiBehavior };

const char* shape_name(Shape shape);

// Three planar demonstrations of the shape, sampled at dt = 0.01 with speed
// decaying to zero at the attractor. `seed` perturbs the demonstrations.
Demonstration synthetic_demo(Shape shape, std::uint64_t seed = 0, int samples_per_trajectory = 150);

// ---- learning pipeline -----------------------------------------------------

enum class Method { kDamm, kGmmP, kGmmPV };

const char* method_name(Method method);
// Throws UsageError listing the valid names.
Method parse_method(const std::string& name);

struct LearnConfig {
  Method method = Method::kDamm;
  PriorOptions prior;
  SamplerConfig sampler;
  FitOptions fit;
  double velocity_floor = -1.0;  // < 0: default
};

struct LearnResult {
  MixtureState partition;
  // Observations the sampler saw (DAMM: samples with a direction; baselines: all).
  std::vector<Eigen::Index> sample_index;
  NiwPrior prior;
  LpvDsModel model;
  FitReport fit;
  double wall_time_cluster_s = 0.0;
  double wall_time_fit_s = 0.0;

  // Component of every demo sample, -1 for samples the sampler did not see.
  std::vector<int> sample_assignments(Eigen::Index n) const;
};

// Cluster data for the Euclidean baselines: positions, or [positions;
// velocities] with position_dims = d.
ClusterData baseline_data(const Demonstration& demo, Method method);

// The same sampler on Euclidean vectors without directional augmentation.
MixtureState gmm_baseline(const Demonstration& demo, Method method, const PriorOptions& prior,
                          const SamplerConfig& config);

LearnResult learn(const Demonstration& demo, const LearnConfig& config);

// ---- metrics ---------------------------------------------------------------

// (1/N) Σ ‖ξ̇_i - f(ξ_i)‖: the mean of the error norms.
double rmse(const LpvDsModel& model, const Demonstration& demo);

// (1/N) Σ |1 - cos∠(f(ξ_i), ξ̇_i)| over samples with nonzero reference
// velocity; zero predictions contribute 1.
double edot(const LpvDsModel& model, const Demonstration& demo);

// Dynamic time warping distance with Euclidean point cost.
double dtwd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// ---- benchmark -------------------------------------------------------------

struct EvalReport {
  std::string method;
  double rmse = 0.0;
  double edot = 0.0;
  double dtwd = 0.0;
  double wall_time_cluster_s = 0.0;
  double wall_time_fit_s = 0.0;
  int K_final = 0;
  std::uint64_t seed = 0;
  double objective = 0.0;
  bool rollouts_converged = false;
};

// Learns with `config`, then evaluates rmse/edot on the demo and dtwd
// averaged over rollouts from each trajectory's first sample (demo time
// step, at most 3× the reference length).
EvalReport benchmark(const Demonstration& demo, const LearnConfig& config);

// Mean dtwd between each trajectory and the model's rollout from its start.
double reproduction_dtwd(const LpvDsModel& model, const Demonstration& demo, bool* all_converged = nullptr);

}  // namespace damm
