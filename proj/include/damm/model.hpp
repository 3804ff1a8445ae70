#pragma once

// The directionality-aware mixture model: augmented observations, Gaussian
// components over [position; ‖log_{μ_dir}(direction)‖], and their conjugate
// bookkeeping.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "damm/conjugate.hpp"
#include "damm/random.hpp"
#include "damm/sphere.hpp"

namespace damm {

// One or more demonstrated trajectories. Rows are samples.
struct Demonstration {
  Eigen::MatrixXd positions;   // N×d
  Eigen::MatrixXd velocities;  // N×d
  std::vector<Eigen::Index> trajectory_starts{0};
  Eigen::VectorXd attractor;   // d
  double dt = 0.0;             // sampling period in seconds; 0 when unknown

  Eigen::Index size() const noexcept { return positions.rows(); }
  Eigen::Index dim() const noexcept { return positions.cols(); }
  std::size_t trajectory_count() const noexcept { return trajectory_starts.size(); }
  Eigen::Index trajectory_begin(std::size_t k) const { return trajectory_starts[k]; }
  Eigen::Index trajectory_end(std::size_t k) const {
    return k + 1 < trajectory_starts.size() ? trajectory_starts[k + 1] : size();
  }

  // Throws UsageError when shapes or boundaries are inconsistent.
  void validate() const;

  // Median of ‖Δposition‖/‖velocity‖ over consecutive samples when dt is
  // unknown; dt otherwise.
  double time_step() const;
};

// Mean of the final position of every trajectory.
Eigen::VectorXd default_attractor(const Demonstration& demo);

// Concatenates demonstrations of equal dimension; the attractor of `a` is kept.
Demonstration concatenate(const Demonstration& a, const Demonstration& b);

struct AugmentedObservation {
  Eigen::VectorXd position;
  std::optional<sphere::UnitVector> direction;  // empty when no directional signal

  bool valid() const noexcept { return direction.has_value(); }
};

// Default velocity floor: 1e-6 × median speed.
double default_velocity_floor(const Demonstration& demo);

// One observation per sample. Samples slower than `velocity_floor` take the
// previous valid direction of the same trajectory, or are invalid if there is
// none. A negative floor selects the default. Throws UsageError when no
// sample carries a direction.
std::vector<AugmentedObservation> build_observations(const Demonstration& demo,
                                                     double velocity_floor = -1.0);

// Gaussian component of the mixture. The augmented mean is [mean_pos; 0] and
// the augmented covariance is block-diag(cov_pos, dir_var). Components of the
// Euclidean baselines carry no directional block (dir_mean empty).
struct DammComponent {
  Eigen::VectorXd mean_pos;
  Eigen::MatrixXd cov_pos;
  std::optional<sphere::UnitVector> dir_mean;
  double dir_var = 0.0;
  double weight = 0.0;
  long count = 0;

  bool directional() const noexcept { return dir_mean.has_value(); }
};

// ‖log_{dir_mean}(direction)‖ = geodesic distance to the component's mean direction.
double augmented_coordinate(const AugmentedObservation& obs, const DammComponent& comp);

// (d+1)-dimensional Gaussian log-density of the augmented observation.
double component_loglik(const AugmentedObservation& obs, const DammComponent& comp);

// Draws component parameters from the posterior given its members: the
// direction mean is the Fréchet mean of member directions, (mean_pos,
// cov_pos) come from the NIW posterior and dir_var from the inverse-gamma
// posterior. weight and count are left for the caller.
DammComponent posterior_sample_component(std::span<const AugmentedObservation> members,
                                         const NiwPrior& prior, Rng& rng);

// log p(obs | members) with parameters integrated out: Student-t over the
// position block times a Student-t over the augmented coordinate. The
// coordinate is measured against the Fréchet mean of the members'
// directions; with no members it is zero.
double posterior_predictive_loglik(const AugmentedObservation& obs,
                                   std::span<const AugmentedObservation> members,
                                   const NiwPrior& prior);

struct PriorOptions {
  double alpha = 1.0;
  double kappa = 1.0;
  double nu = 0.0;              // <= 0 selects D + 3
  double psi_scale = 0.2;       // psi = psi_scale · diag(empirical covariance)
  double dir_var_prior = 0.1;   // prior mean of the directional variance (rad²)
  double dir_var_shape = 2.0;
};

// Data-driven hyperparameters from the columns of `features` (D×N).
NiwPrior default_prior(const Eigen::Ref<const Eigen::MatrixXd>& features, const PriorOptions& options = {});

// Observations packed column-wise for the sampler. `directions` is empty for
// the Euclidean baselines.
struct ClusterData {
  Eigen::MatrixXd features;    // D×N
  Eigen::MatrixXd directions;  // d×N or 0×0
  Eigen::Index position_dims = 0;  // leading feature rows that are positions

  Eigen::Index size() const noexcept { return features.cols(); }
  bool directional() const noexcept { return directions.size() > 0; }
};

// Packs the valid observations in order.
ClusterData make_cluster_data(std::span<const AugmentedObservation> obs);

}  // namespace damm
