#include "damm/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "damm/error.hpp"

namespace damm::sphere {

namespace {

constexpr int kFrechetMaxIterations = 100;
constexpr double kFrechetStepTolerance = 1e-9;
// Rotation applied to the base point when an input is antipodal to it. Must
// exceed sqrt(2 * kAntipodalTolerance) to leave the antipodal band.
constexpr double kAntipodalPerturbation = 1e-4;

void check_dims(Eigen::Index a, Eigen::Index b) {
  if (a != b)
    throw UsageError("sphere: dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
}

// Rotates p by a small angle towards the first basis axis not parallel to it.
Eigen::VectorXd perturb(const Eigen::VectorXd& p) {
  Eigen::Index axis = std::abs(p[0]) < 0.9 ? 0 : 1;
  Eigen::VectorXd e = Eigen::VectorXd::Unit(p.size(), axis);
  Eigen::VectorXd t = e - p.dot(e) * p;
  t.normalize();
  return detail::exp_map(p, kAntipodalPerturbation * t);
}

}  // namespace

UnitVector::UnitVector(Eigen::VectorXd coords) : coords_(std::move(coords)) {
  if (coords_.size() < 2) throw UsageError("UnitVector: dimension must be at least 2");
  const double n = coords_.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitTolerance)
    throw UsageError("UnitVector: coordinates are not unit norm");
}

UnitVector UnitVector::normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 1e-300) || !std::isfinite(n))
    throw DegenerateInputError("UnitVector: cannot normalize a zero or non-finite vector");
  return UnitVector(v / n);
}

UnitVector UnitVector::basis(Eigen::Index dim, Eigen::Index i) {
  return UnitVector(Eigen::VectorXd::Unit(dim, i));
}

TangentVector::TangentVector(Eigen::VectorXd coords, UnitVector base)
    : coords_(std::move(coords)), base_(std::move(base)) {
  check_dims(coords_.size(), base_.dim());
  if (std::abs(coords_.dot(base_.coords())) > kTangentTolerance)
    throw UsageError("TangentVector: coordinates not orthogonal to the base point");
}

TangentVector TangentVector::zero(const UnitVector& base) {
  return TangentVector(Eigen::VectorXd::Zero(base.dim()), base);
}

double geodesic_distance(const UnitVector& p, const UnitVector& q) {
  check_dims(p.dim(), q.dim());
  return detail::distance(p.coords(), q.coords());
}

TangentVector log_map(const UnitVector& p, const UnitVector& q) {
  check_dims(p.dim(), q.dim());
  Eigen::VectorXd out(p.dim());
  if (!detail::log_map(p.coords(), q.coords(), out))
    throw DegenerateInputError("log_map: points are antipodal");
  return TangentVector(std::move(out), p);
}

UnitVector exp_map(const UnitVector& p, const TangentVector& v) {
  check_dims(p.dim(), v.coords().size());
  return UnitVector(detail::exp_map(p.coords(), v.coords()));
}

FrechetMeanResult frechet_mean(std::span<const UnitVector> points, std::span<const double> weights) {
  if (points.empty()) throw UsageError("frechet_mean: empty input");
  if (!weights.empty() && weights.size() != points.size())
    throw UsageError("frechet_mean: weight count differs from point count");
  const Eigen::Index d = points.front().dim();
  Eigen::MatrixXd m(d, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    check_dims(points[i].dim(), d);
    m.col(static_cast<Eigen::Index>(i)) = points[i].coords();
  }
  for (double w : weights)
    if (!(w >= 0.0)) throw UsageError("frechet_mean: weights must be nonnegative");
  auto raw = detail::frechet_mean(m, {}, weights);
  return {UnitVector(std::move(raw.mean)), raw.iterations, raw.converged};
}

double directional_variance(std::span<const UnitVector> points, const UnitVector& mean) {
  if (points.size() < 2) throw UsageError("directional_variance: needs at least 2 points");
  double sum = 0.0;
  for (const auto& q : points) {
    const double r = geodesic_distance(mean, q);
    sum += r * r;
  }
  return sum / static_cast<double>(points.size() - 1);
}

Eigen::MatrixXd riemannian_covariance(std::span<const UnitVector> points, const UnitVector& mean) {
  if (points.size() < 2) throw UsageError("riemannian_covariance: needs at least 2 points");
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mean.dim(), mean.dim());
  for (const auto& q : points) {
    const auto v = log_map(mean, q);
    cov.noalias() += v.coords() * v.coords().transpose();
  }
  return cov / static_cast<double>(points.size() - 1);
}

namespace detail {

double distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  // Fixed argument order makes the result exactly symmetric.
  const bool swap = std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
  const auto& p = swap ? b : a;
  const auto& q = swap ? a : b;
  const double c = p.dot(q);
  const double s = (q - c * p).norm();
  return std::atan2(s, c);
}

bool log_map(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q,
             Eigen::Ref<Eigen::VectorXd> out) {
  const double c = p.dot(q);
  if (c <= -1.0 + kAntipodalTolerance) return false;
  out = q - c * p;
  const double s = out.norm();
  if (s == 0.0) {
    out.setZero();
    return true;
  }
  out *= std::atan2(s, c) / s;
  return true;
}

Eigen::VectorXd exp_map(const Eigen::Ref<const Eigen::VectorXd>& p,
                        const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double n = v.norm();
  if (n < 1e-12) return p;
  Eigen::VectorXd q = std::cos(n) * p + (std::sin(n) / n) * v;
  q.normalize();
  return q;
}

RawFrechet frechet_mean(const Eigen::Ref<const Eigen::MatrixXd>& points,
                        std::span<const Eigen::Index> columns, std::span<const double> weights) {
  const Eigen::Index d = points.rows();
  const std::size_t n = columns.empty() ? static_cast<std::size_t>(points.cols()) : columns.size();
  if (n == 0) throw UsageError("frechet_mean: empty input");
  auto col = [&](std::size_t i) {
    return points.col(columns.empty() ? static_cast<Eigen::Index>(i) : columns[i]);
  };
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double total = 0.0;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < n; ++i) {
    mu += weight(i) * col(i);
    total += weight(i);
  }
  if (!(total > 0.0)) throw UsageError("frechet_mean: weights sum to zero");
  const double norm = mu.norm() / total;
  if (norm < 1e-6) {
    mu = col(0);
  }
  mu.normalize();

  RawFrechet result;
  Eigen::VectorXd step(d), v(d);
  bool perturbed = false;
  for (int it = 0; it < kFrechetMaxIterations; ++it) {
    step.setZero();
    bool antipodal = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (weight(i) == 0.0) continue;
      if (!log_map(mu, col(i), v)) {
        antipodal = true;
        break;
      }
      step += weight(i) * v;
    }
    if (antipodal) {
      if (perturbed) throw DegenerateInputError("frechet_mean: antipodal point after perturbation");
      perturbed = true;
      mu = perturb(mu);
      --it;
      continue;
    }
    step /= total;
    mu = exp_map(mu, step);
    result.iterations = it + 1;
    if (step.norm() <= kFrechetStepTolerance) {
      result.converged = true;
      break;
    }
  }
  result.mean = std::move(mu);
  return result;
}

}  // namespace detail

}  // namespace damm::sphere
