#include "damm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "damm/error.hpp"
#include "damm_internal.hpp"

namespace damm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

ClusterData pack_members(std::span<const AugmentedObservation> members, bool with_obs,
                         const AugmentedObservation* obs) {
  const std::size_t n = members.size() + (with_obs ? 1 : 0);
  const Eigen::Index d = members.empty() ? obs->position.size() : members.front().position.size();
  ClusterData data;
  data.features.resize(d, static_cast<Eigen::Index>(n));
  data.directions.resize(d, static_cast<Eigen::Index>(n));
  data.position_dims = d;
  Eigen::Index c = 0;
  auto put = [&](const AugmentedObservation& o) {
    if (!o.valid()) throw UsageError("observation has no direction");
    if (o.position.size() != d || o.direction->dim() != d) throw UsageError("observation dimension mismatch");
    data.features.col(c) = o.position;
    data.directions.col(c) = o.direction->coords();
    ++c;
  };
  for (const auto& m : members) put(m);
  if (with_obs) put(*obs);
  return data;
}

}  // namespace

void Demonstration::validate() const {
  const Eigen::Index n = positions.rows(), d = positions.cols();
  if (n < 2) throw UsageError("demonstration needs at least 2 samples");
  if (d < 2) throw UsageError("demonstration needs dimension at least 2");
  if (velocities.rows() != n || velocities.cols() != d)
    throw UsageError("positions and velocities differ in shape");
  if (attractor.size() != d) throw UsageError("attractor dimension mismatch");
  if (trajectory_starts.empty() || trajectory_starts.front() != 0)
    throw UsageError("trajectory boundaries must start at 0");
  for (std::size_t k = 1; k < trajectory_starts.size(); ++k)
    if (trajectory_starts[k] <= trajectory_starts[k - 1]) throw UsageError("trajectory boundaries must increase");
  if (trajectory_starts.back() >= n) throw UsageError("trajectory boundary out of range");
  if (!positions.allFinite() || !velocities.allFinite() || !attractor.allFinite())
    throw UsageError("demonstration contains non-finite values");
  if (dt < 0.0) throw UsageError("negative time step");
}

double Demonstration::time_step() const {
  if (dt > 0.0) return dt;
  std::vector<double> ratios;
  for (std::size_t k = 0; k < trajectory_count(); ++k) {
    for (Eigen::Index i = trajectory_begin(k); i + 1 < trajectory_end(k); ++i) {
      const double v = velocities.row(i).norm();
      if (v > 0.0) ratios.push_back((positions.row(i + 1) - positions.row(i)).norm() / v);
    }
  }
  const double m = median(std::move(ratios));
  return m > 0.0 ? m : 0.01;
}

Eigen::VectorXd default_attractor(const Demonstration& demo) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(demo.dim());
  for (std::size_t k = 0; k < demo.trajectory_count(); ++k)
    a += demo.positions.row(demo.trajectory_end(k) - 1).transpose();
  return a / static_cast<double>(demo.trajectory_count());
}

Demonstration concatenate(const Demonstration& a, const Demonstration& b) {
  if (a.dim() != b.dim()) throw UsageError("cannot concatenate demonstrations of different dimension");
  Demonstration out;
  out.positions.resize(a.size() + b.size(), a.dim());
  out.positions << a.positions, b.positions;
  out.velocities.resize(a.size() + b.size(), a.dim());
  out.velocities << a.velocities, b.velocities;
  out.trajectory_starts = a.trajectory_starts;
  for (auto s : b.trajectory_starts) out.trajectory_starts.push_back(s + a.size());
  out.attractor = a.attractor;
  out.dt = a.dt > 0.0 ? a.dt : b.dt;
  return out;
}

double default_velocity_floor(const Demonstration& demo) {
  std::vector<double> speeds(static_cast<std::size_t>(demo.size()));
  for (Eigen::Index i = 0; i < demo.size(); ++i) speeds[static_cast<std::size_t>(i)] = demo.velocities.row(i).norm();
  return 1e-6 * median(std::move(speeds));
}

std::vector<AugmentedObservation> build_observations(const Demonstration& demo, double velocity_floor) {
  demo.validate();
  if (velocity_floor < 0.0) velocity_floor = default_velocity_floor(demo);
  std::vector<AugmentedObservation> out;
  out.reserve(static_cast<std::size_t>(demo.size()));
  bool any = false;
  for (std::size_t k = 0; k < demo.trajectory_count(); ++k) {
    std::optional<sphere::UnitVector> last;
    for (Eigen::Index i = demo.trajectory_begin(k); i < demo.trajectory_end(k); ++i) {
      const Eigen::VectorXd v = demo.velocities.row(i).transpose();
      const double speed = v.norm();
      if (speed >= velocity_floor && speed > 0.0) last = sphere::UnitVector(v / speed);
      out.push_back({demo.positions.row(i).transpose(), last});
      any = any || last.has_value();
    }
  }
  if (!any) throw UsageError("no sample exceeds the velocity floor; no directional signal");
  return out;
}

double augmented_coordinate(const AugmentedObservation& obs, const DammComponent& comp) {
  if (!obs.valid()) throw UsageError("augmented_coordinate: observation has no direction");
  if (!comp.directional()) throw UsageError("augmented_coordinate: component has no directional block");
  return sphere::geodesic_distance(*comp.dir_mean, *obs.direction);
}

double component_loglik(const AugmentedObservation& obs, const DammComponent& comp) {
  if (obs.position.size() != comp.mean_pos.size()) throw UsageError("component_loglik: dimension mismatch");
  const auto density = detail::make_density(comp);
  double ll = detail::gaussian_loglik(density, obs.position);
  if (comp.directional()) {
    const double r = augmented_coordinate(obs, comp);
    ll += density.dir_log_norm - 0.5 * r * r / comp.dir_var;
  }
  return ll;
}

DammComponent posterior_sample_component(std::span<const AugmentedObservation> members, const NiwPrior& prior,
                                         Rng& rng) {
  if (members.empty()) throw UsageError("posterior_sample_component: no members");
  const ClusterData data = pack_members(members, false, nullptr);
  std::vector<Eigen::Index> idx(members.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  return detail::sample_component(data, prior, idx, rng);
}

double posterior_predictive_loglik(const AugmentedObservation& obs, std::span<const AugmentedObservation> members,
                                   const NiwPrior& prior) {
  if (!obs.valid()) throw UsageError("posterior_predictive_loglik: observation has no direction");
  const ClusterData data = pack_members(members, true, &obs);
  std::vector<Eigen::Index> idx(members.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  const auto stats = members.empty() ? empty_stats(prior.dim()) : gaussian_stats(data.features, idx);
  double ll = niw_log_predictive(prior, stats, obs.position);
  double r = 0.0, sum_sq = 0.0;
  if (!members.empty()) {
    const Eigen::VectorXd mu = detail::robust_direction_mean(data.directions, idx);
    for (auto i : idx) {
      const double ri = sphere::detail::distance(mu, data.directions.col(i));
      sum_sq += ri * ri;
    }
    r = sphere::detail::distance(mu, obs.direction->coords());
  }
  const auto post = ig_posterior(prior.dir_var_shape, prior.dir_var_scale, static_cast<double>(members.size()), sum_sq);
  return ll + ig_log_predictive(post, r);
}

NiwPrior default_prior(const Eigen::Ref<const Eigen::MatrixXd>& features, const PriorOptions& options) {
  const Eigen::Index d = features.rows();
  if (d < 1 || features.cols() < 1) throw UsageError("default_prior: empty data");
  const auto stats = gaussian_stats(features);
  NiwPrior p;
  p.mu0 = stats.mean;
  Eigen::VectorXd var = stats.n > 1 ? Eigen::VectorXd(stats.scatter.diagonal() / (stats.n - 1.0))
                                    : Eigen::VectorXd::Ones(d);
  const double fallback = var.maxCoeff() > 0.0 ? var.maxCoeff() * 1e-3 : 1.0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(var[i] > 0.0)) var[i] = fallback;
  p.psi = (options.psi_scale * var).asDiagonal();
  p.nu = options.nu > 0.0 ? options.nu : static_cast<double>(d) + 3.0;
  p.kappa = options.kappa;
  p.alpha = options.alpha;
  p.dir_var_shape = options.dir_var_shape;
  p.dir_var_scale = (options.dir_var_shape - 1.0) * options.dir_var_prior;
  p.validate();
  return p;
}

ClusterData make_cluster_data(std::span<const AugmentedObservation> obs) {
  std::size_t n = 0;
  for (const auto& o : obs) n += o.valid() ? 1 : 0;
  if (n == 0) throw UsageError("no valid observations");
  std::vector<AugmentedObservation> valid;
  valid.reserve(n);
  for (const auto& o : obs)
    if (o.valid()) valid.push_back(o);
  return pack_members(valid, false, nullptr);
}

namespace detail {

Eigen::VectorXd robust_direction_mean(const Eigen::Ref<const Eigen::MatrixXd>& directions,
                                      std::span<const Eigen::Index> members) {
  try {
    return sphere::detail::frechet_mean(directions, members).mean;
  } catch (const DegenerateInputError&) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(directions.rows());
    for (auto i : members) m += directions.col(i);
    if (m.norm() < 1e-12) return directions.col(members.front());
    return m.normalized();
  }
}

ComponentSummary summarize(const ClusterData& data, std::span<const Eigen::Index> members) {
  ComponentSummary s;
  s.stats = members.empty() ? empty_stats(data.features.rows()) : gaussian_stats(data.features, members);
  if (data.directional() && !members.empty()) {
    s.dir_mean = robust_direction_mean(data.directions, members);
    for (auto i : members) {
      const double r = sphere::detail::distance(s.dir_mean, data.directions.col(i));
      s.dir_sum_squares += r * r;
    }
  }
  return s;
}

double log_marginal(const ClusterData& data, const NiwPrior& prior, std::span<const Eigen::Index> members) {
  if (members.empty()) return 0.0;
  const auto s = summarize(data, members);
  double lm = niw_log_marginal(prior, s.stats);
  if (data.directional())
    lm += ig_log_marginal(prior.dir_var_shape, prior.dir_var_scale, s.stats.n, s.dir_sum_squares);
  return lm;
}

DammComponent sample_component(const ClusterData& data, const NiwPrior& prior, std::span<const Eigen::Index> members,
                               Rng& rng) {
  const auto s = summarize(data, members);
  const auto draw = niw_sample(niw_posterior(prior, s.stats), rng);
  DammComponent c;
  c.mean_pos = draw.mean;
  c.cov_pos = draw.cov;
  c.count = static_cast<long>(members.size());
  if (data.directional()) {
    c.dir_mean = sphere::UnitVector(s.dir_mean);
    c.dir_var = ig_sample(ig_posterior(prior.dir_var_shape, prior.dir_var_scale, s.stats.n, s.dir_sum_squares), rng);
  }
  return c;
}

DammComponent posterior_mean_component(const ClusterData& data, const NiwPrior& prior,
                                       std::span<const Eigen::Index> members) {
  const auto s = summarize(data, members);
  const auto post = niw_posterior(prior, s.stats);
  DammComponent c;
  c.mean_pos = post.mu;
  c.cov_pos = regularize_covariance(post.psi / (post.nu - static_cast<double>(prior.dim()) - 1.0));
  c.count = static_cast<long>(members.size());
  if (data.directional()) {
    c.dir_mean = sphere::UnitVector(s.dir_mean);
    c.dir_var = ig_posterior(prior.dir_var_shape, prior.dir_var_scale, s.stats.n, s.dir_sum_squares).mean();
  }
  return c;
}

Density make_density(const DammComponent& comp) {
  Density d;
  d.mean = comp.mean_pos;
  Eigen::LLT<Eigen::MatrixXd> llt(comp.cov_pos);
  if (llt.info() != Eigen::Success) throw NumericalError("component covariance is not positive definite");
  d.chol = llt.matrixL();
  const double dim = static_cast<double>(comp.mean_pos.size());
  d.log_norm = -0.5 * dim * kLog2Pi - d.chol.diagonal().array().log().sum();
  if (comp.directional()) {
    if (!(comp.dir_var > 0.0)) throw NumericalError("component directional variance must be positive");
    d.directional = true;
    d.dir_mean = comp.dir_mean->coords();
    d.dir_var = comp.dir_var;
    d.dir_log_norm = -0.5 * (kLog2Pi + std::log(comp.dir_var));
  }
  return d;
}

void loglik_columns(const ClusterData& data, const Density& density, Eigen::Index begin, Eigen::Index end,
                    double* out) {
  const Eigen::Index n = end - begin;
  if (n <= 0) return;
  Eigen::MatrixXd centered = data.features.middleCols(begin, n).colwise() - density.mean;
  density.chol.triangularView<Eigen::Lower>().solveInPlace(centered);
  const Eigen::VectorXd maha = centered.colwise().squaredNorm().transpose();
  for (Eigen::Index j = 0; j < n; ++j) out[j] = density.log_norm - 0.5 * maha[j];
  if (density.directional && data.directional()) {
    const auto dirs = data.directions.middleCols(begin, n);
    const Eigen::RowVectorXd c = density.dir_mean.transpose() * dirs;
    const double inv = 0.5 / density.dir_var;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double s = (dirs.col(j) - c[j] * density.dir_mean).norm();
      const double r = std::atan2(s, c[j]);
      out[j] += density.dir_log_norm - inv * r * r;
    }
  }
}

double gaussian_loglik(const Density& density, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd z = density.chol.triangularView<Eigen::Lower>().solve(x - density.mean);
  return density.log_norm - 0.5 * z.squaredNorm();
}

}  // namespace detail

}  // namespace damm

namespace damm::detail {

void loglik_indices(const ClusterData& data, const Density& density, std::span<const Eigen::Index> columns,
                    double* out) {
  ClusterData sub;
  const auto m = static_cast<Eigen::Index>(columns.size());
  sub.features.resize(data.features.rows(), m);
  if (data.directional()) sub.directions.resize(data.directions.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    sub.features.col(j) = data.features.col(columns[static_cast<std::size_t>(j)]);
    if (data.directional()) sub.directions.col(j) = data.directions.col(columns[static_cast<std::size_t>(j)]);
  }
  loglik_columns(sub, density, 0, m, out);
}

}  // namespace damm::detail
