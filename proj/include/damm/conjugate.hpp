#pragma once

// Conjugate Bayesian building blocks: Normal-Inverse-Wishart over a Euclidean
// block and an inverse-gamma over the variance of a zero-mean scalar
// coordinate. All densities are returned in log space.

#include <Eigen/Dense>

#include <span>

#include "damm/random.hpp"

namespace damm {

// Hyperparameters of the DAMM prior. The NIW part (psi, nu, mu0, kappa)
// covers the Euclidean block; (dir_var_shape, dir_var_scale) is the
// inverse-gamma prior on the directional variance; alpha is the DP
// concentration.
struct NiwPrior {
  Eigen::MatrixXd psi;
  double nu = 0.0;
  Eigen::VectorXd mu0;
  double kappa = 1.0;
  double dir_var_shape = 2.0;
  double dir_var_scale = 0.1;
  double alpha = 1.0;

  Eigen::Index dim() const noexcept { return mu0.size(); }

  // Throws UsageError on shape mismatch, non-SPD psi, nu <= D + 1,
  // dir_var_shape <= 1, or non-positive kappa/scale/alpha.
  void validate() const;
};

// Centered sufficient statistics of a set of column vectors.
struct GaussianStats {
  double n = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scatter;  // Σ (x - mean)(x - mean)ᵀ
};

// Stats of the selected columns of `x` (D×N); empty `columns` selects all.
GaussianStats gaussian_stats(const Eigen::Ref<const Eigen::MatrixXd>& x,
                             std::span<const Eigen::Index> columns = {});

GaussianStats empty_stats(Eigen::Index dim);

struct NiwPosterior {
  Eigen::MatrixXd psi;
  double nu = 0.0;
  Eigen::VectorXd mu;
  double kappa = 0.0;
};

NiwPosterior niw_posterior(const NiwPrior& prior, const GaussianStats& stats);

// log p(X) with (μ, Σ) integrated out.
double niw_log_marginal(const NiwPrior& prior, const GaussianStats& stats);

// log p(x | X): multivariate Student-t with nu_n - D + 1 degrees of freedom.
double niw_log_predictive(const NiwPrior& prior, const GaussianStats& stats,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

struct GaussianDraw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Σ ~ IW(psi_n, nu_n) by the Bartlett decomposition, then μ ~ N(mu_n, Σ/kappa_n).
GaussianDraw niw_sample(const NiwPosterior& post, Rng& rng);

// Adds 1e-10 * trace(cov)/D to the diagonal.
Eigen::MatrixXd regularize_covariance(Eigen::MatrixXd cov);

// Inverse-gamma over σ² for r_i ~ N(0, σ²).
struct InvGammaPosterior {
  double shape = 0.0;
  double scale = 0.0;

  double mean() const noexcept { return scale / (shape - 1.0); }
};

InvGammaPosterior ig_posterior(double shape, double scale, double n, double sum_squares) noexcept;

double ig_log_marginal(double shape, double scale, double n, double sum_squares) noexcept;

// log p(r | data): Student-t with 2·shape dof and squared scale scale/shape.
double ig_log_predictive(const InvGammaPosterior& post, double r) noexcept;

double ig_sample(const InvGammaPosterior& post, Rng& rng);

// log Γ_D(a).
double log_multigamma(double a, int dim) noexcept;

}  // namespace damm
