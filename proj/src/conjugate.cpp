#include "damm/conjugate.hpp"

#include <cmath>
#include <numbers>

#include "damm/error.hpp"

namespace damm {

namespace {

constexpr double kLogPi = 1.1447298858494002;  // log(π)

double log_det_spd(const Eigen::MatrixXd& m, Eigen::LLT<Eigen::MatrixXd>* out = nullptr) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
  const double ld = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  if (out) *out = std::move(llt);
  return ld;
}

}  // namespace

void NiwPrior::validate() const {
  const Eigen::Index d = mu0.size();
  if (d < 1) throw UsageError("prior: empty mean");
  if (psi.rows() != d || psi.cols() != d) throw UsageError("prior: psi shape mismatch");
  if (!(nu > static_cast<double>(d) + 1.0)) throw UsageError("prior: nu must exceed D + 1");
  if (!(kappa > 0.0)) throw UsageError("prior: kappa must be positive");
  if (!(dir_var_shape > 1.0)) throw UsageError("prior: directional variance shape must exceed 1");
  if (!(dir_var_scale > 0.0)) throw UsageError("prior: directional variance scale must be positive");
  if (!(alpha > 0.0)) throw UsageError("prior: alpha must be positive");
  if (!psi.isApprox(psi.transpose(), 1e-12)) throw UsageError("prior: psi must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(psi);
  if (llt.info() != Eigen::Success) throw UsageError("prior: psi must be positive definite");
}

GaussianStats gaussian_stats(const Eigen::Ref<const Eigen::MatrixXd>& x,
                             std::span<const Eigen::Index> columns) {
  const Eigen::Index d = x.rows();
  const std::size_t n = columns.empty() ? static_cast<std::size_t>(x.cols()) : columns.size();
  GaussianStats s = empty_stats(d);
  s.n = static_cast<double>(n);
  if (n == 0) return s;
  auto col = [&](std::size_t i) {
    return x.col(columns.empty() ? static_cast<Eigen::Index>(i) : columns[i]);
  };
  for (std::size_t i = 0; i < n; ++i) s.mean += col(i);
  s.mean /= s.n;
  Eigen::VectorXd c(d);
  for (std::size_t i = 0; i < n; ++i) {
    c = col(i) - s.mean;
    s.scatter.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  s.scatter = s.scatter.selfadjointView<Eigen::Lower>();
  return s;
}

GaussianStats empty_stats(Eigen::Index dim) {
  return {0.0, Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim)};
}

NiwPosterior niw_posterior(const NiwPrior& prior, const GaussianStats& s) {
  NiwPosterior p;
  p.kappa = prior.kappa + s.n;
  p.nu = prior.nu + s.n;
  if (s.n == 0.0) {
    p.mu = prior.mu0;
    p.psi = prior.psi;
    return p;
  }
  p.mu = (prior.kappa * prior.mu0 + s.n * s.mean) / p.kappa;
  const Eigen::VectorXd diff = s.mean - prior.mu0;
  p.psi = prior.psi + s.scatter + (prior.kappa * s.n / p.kappa) * diff * diff.transpose();
  return p;
}

double log_multigamma(double a, int dim) noexcept {
  double r = 0.25 * dim * (dim - 1) * kLogPi;
  for (int j = 0; j < dim; ++j) r += std::lgamma(a - 0.5 * j);
  return r;
}

double niw_log_marginal(const NiwPrior& prior, const GaussianStats& s) {
  if (s.n == 0.0) return 0.0;
  const int d = static_cast<int>(prior.dim());
  const NiwPosterior p = niw_posterior(prior, s);
  return -0.5 * s.n * d * kLogPi + log_multigamma(0.5 * p.nu, d) - log_multigamma(0.5 * prior.nu, d) +
         0.5 * prior.nu * log_det_spd(prior.psi) - 0.5 * p.nu * log_det_spd(p.psi) +
         0.5 * d * (std::log(prior.kappa) - std::log(p.kappa));
}

double niw_log_predictive(const NiwPrior& prior, const GaussianStats& s,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double d = static_cast<double>(prior.dim());
  const NiwPosterior p = niw_posterior(prior, s);
  const double dof = p.nu - d + 1.0;
  const Eigen::MatrixXd shape = p.psi * ((p.kappa + 1.0) / (p.kappa * dof));
  Eigen::LLT<Eigen::MatrixXd> llt;
  const double log_det = log_det_spd(shape, &llt);
  const double maha = llt.matrixL().solve(x - p.mu).squaredNorm();
  return std::lgamma(0.5 * (dof + d)) - std::lgamma(0.5 * dof) - 0.5 * d * (std::log(dof) + kLogPi) -
         0.5 * log_det - 0.5 * (dof + d) * std::log1p(maha / dof);
}

GaussianDraw niw_sample(const NiwPosterior& post, Rng& rng) {
  const Eigen::Index d = post.mu.size();
  Eigen::LLT<Eigen::MatrixXd> llt(post.psi);
  if (llt.info() != Eigen::Success) throw NumericalError("niw_sample: psi_n not positive definite");
  // Bartlett factor of a Wishart(I, nu) draw.
  Eigen::MatrixXd bartlett = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    bartlett(i, i) = std::sqrt(rng.chi_squared(post.nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  // Σ = M Mᵀ with M = C A^{-T}, where psi = C Cᵀ.
  Eigen::MatrixXd m = bartlett.triangularView<Eigen::Lower>()
                          .transpose()
                          .solve<Eigen::OnTheRight>(Eigen::MatrixXd(llt.matrixL()));
  GaussianDraw draw;
  draw.cov = regularize_covariance(m * m.transpose());
  Eigen::LLT<Eigen::MatrixXd> cov_llt(draw.cov);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
  draw.mean = post.mu + cov_llt.matrixL() * z / std::sqrt(post.kappa);
  return draw;
}

Eigen::MatrixXd regularize_covariance(Eigen::MatrixXd cov) {
  cov = 0.5 * (cov + cov.transpose()).eval();
  const double d = static_cast<double>(cov.rows());
  const double jitter = 1e-10 * cov.trace() / d;
  cov.diagonal().array() += jitter > 0.0 ? jitter : 1e-300;
  return cov;
}

InvGammaPosterior ig_posterior(double shape, double scale, double n, double sum_squares) noexcept {
  return {shape + 0.5 * n, scale + 0.5 * sum_squares};
}

double ig_log_marginal(double shape, double scale, double n, double sum_squares) noexcept {
  if (n == 0.0) return 0.0;
  const auto p = ig_posterior(shape, scale, n, sum_squares);
  return -0.5 * n * std::log(2.0 * std::numbers::pi) + shape * std::log(scale) -
         p.shape * std::log(p.scale) + std::lgamma(p.shape) - std::lgamma(shape);
}

double ig_log_predictive(const InvGammaPosterior& post, double r) noexcept {
  const double dof = 2.0 * post.shape;
  const double s2 = post.scale / post.shape;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * std::numbers::pi * s2) -
         0.5 * (dof + 1.0) * std::log1p(r * r / (dof * s2));
}

double ig_sample(const InvGammaPosterior& post, Rng& rng) {
  return post.scale / rng.gamma(post.shape);
}

}  // namespace damm
