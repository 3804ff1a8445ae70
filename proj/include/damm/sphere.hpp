#pragma once

// Geometry of the unit sphere S^{d-1} embedded in R^d.

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace damm::sphere {

inline constexpr double kUnitTolerance = 1e-9;
inline constexpr double kTangentTolerance = 1e-8;
// Inner products at or below -1 + kAntipodalTolerance have no unique log map.
inline constexpr double kAntipodalTolerance = 1e-9;

class UnitVector {
 public:
  // Throws UsageError unless |‖coords‖ - 1| <= 1e-9 and dim >= 2.
  explicit UnitVector(Eigen::VectorXd coords);

  // Normalizes `v`; throws DegenerateInputError for (near) zero vectors.
  static UnitVector normalized(const Eigen::VectorXd& v);

  // i-th standard basis vector of R^dim.
  static UnitVector basis(Eigen::Index dim, Eigen::Index i);

  const Eigen::VectorXd& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  double operator[](Eigen::Index i) const { return coords_[i]; }

  bool operator==(const UnitVector& other) const { return coords_ == other.coords_; }

 private:
  Eigen::VectorXd coords_;
};

class TangentVector {
 public:
  // Throws UsageError if coords is not orthogonal to base (|c·p| > 1e-8).
  TangentVector(Eigen::VectorXd coords, UnitVector base);

  static TangentVector zero(const UnitVector& base);

  const Eigen::VectorXd& coords() const noexcept { return coords_; }
  const UnitVector& base() const noexcept { return base_; }
  double norm() const { return coords_.norm(); }

 private:
  Eigen::VectorXd coords_;
  UnitVector base_;
};

double geodesic_distance(const UnitVector& p, const UnitVector& q);

// log_p(q). Throws DegenerateInputError when p·q <= -1 + 1e-9.
TangentVector log_map(const UnitVector& p, const UnitVector& q);

UnitVector exp_map(const UnitVector& p, const TangentVector& v);

struct FrechetMeanResult {
  UnitVector mean;
  int iterations = 0;
  bool converged = false;
};

// Weighted Fréchet mean by the fixed point mu <- exp_mu(mean of log_mu(q_i)).
// `weights` may be empty (uniform). Stops when the step norm is <= 1e-9 or
// after 100 iterations; `converged` reports which.
FrechetMeanResult frechet_mean(std::span<const UnitVector> points,
                               std::span<const double> weights = {});

// (1/(N-1)) Σ ‖log_mean(q_i)‖².
double directional_variance(std::span<const UnitVector> points, const UnitVector& mean);

// (1/(N-1)) Σ log_mean(q_i) log_mean(q_i)ᵀ. Its trace equals directional_variance.
Eigen::MatrixXd riemannian_covariance(std::span<const UnitVector> points, const UnitVector& mean);

namespace detail {

// Raw-vector kernels used on hot paths. Inputs are assumed unit length.

// atan2(‖q - (p·q)p‖, p·q), equal to arccos(clamp(p·q, -1, 1)) but accurate
// near 0 and π.
double distance(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q);

// Writes log_p(q) into out. Returns false (out untouched) for antipodal input.
bool log_map(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q,
             Eigen::Ref<Eigen::VectorXd> out);

Eigen::VectorXd exp_map(const Eigen::Ref<const Eigen::VectorXd>& p,
                        const Eigen::Ref<const Eigen::VectorXd>& v);

struct RawFrechet {
  Eigen::VectorXd mean;
  int iterations = 0;
  bool converged = false;
};

// Fréchet mean of the selected columns of `points` (d×N). Empty `columns`
// means all columns. Empty `weights` means uniform.
RawFrechet frechet_mean(const Eigen::Ref<const Eigen::MatrixXd>& points,
                        std::span<const Eigen::Index> columns = {},
                        std::span<const double> weights = {});

}  // namespace detail

}  // namespace damm::sphere
