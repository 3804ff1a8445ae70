#pragma once

// Column-index based kernels shared by the model, the sampler and the
// LPV-DS mixing function.

#include <Eigen/Dense>

#include <span>

#include "damm/model.hpp"

namespace damm::detail {

struct ComponentSummary {
  GaussianStats stats;
  Eigen::VectorXd dir_mean;  // empty for Euclidean data
  double dir_sum_squares = 0.0;
};

// Fréchet mean of the selected directions; tolerant of antipodal
// configurations (falls back to the normalized Euclidean mean).
Eigen::VectorXd robust_direction_mean(const Eigen::Ref<const Eigen::MatrixXd>& directions,
                                      std::span<const Eigen::Index> members);

ComponentSummary summarize(const ClusterData& data, std::span<const Eigen::Index> members);

// log marginal likelihood of the members: NIW block times inverse-gamma block.
double log_marginal(const ClusterData& data, const NiwPrior& prior, std::span<const Eigen::Index> members);

DammComponent sample_component(const ClusterData& data, const NiwPrior& prior,
                               std::span<const Eigen::Index> members, Rng& rng);

// Posterior-mean parameters of the members.
DammComponent posterior_mean_component(const ClusterData& data, const NiwPrior& prior,
                                       std::span<const Eigen::Index> members);

// Gaussian density prepared for repeated evaluation.
struct Density {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;  // lower Cholesky factor of the covariance
  double log_norm = 0.0;
  bool directional = false;
  Eigen::VectorXd dir_mean;
  double dir_var = 1.0;
  double dir_log_norm = 0.0;
};

Density make_density(const DammComponent& comp);

// out[j] = log density of column begin + j.
void loglik_columns(const ClusterData& data, const Density& density, Eigen::Index begin, Eigen::Index end,
                    double* out);

// Log-density of a single position block.
double gaussian_loglik(const Density& density, const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace damm::detail

namespace damm::detail {

// out[j] = log density of column columns[j].
void loglik_indices(const ClusterData& data, const Density& density, std::span<const Eigen::Index> columns,
                    double* out);

}  // namespace damm::detail
