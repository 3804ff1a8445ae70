#pragma once

// Linear-parameter-varying dynamical system
//   ξ̇ = Σ_k γ_k(ξ) (A_k ξ + b_k),  b_k = -A_k ξ*,
// with every A_k having a negative definite symmetric part, so that
// V(ξ) = ‖ξ - ξ*‖² is a Lyapunov function.

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "damm/error.hpp"
#include "damm/model.hpp"
#include "damm/sampler.hpp"

namespace damm {

inline constexpr double kStabilityMargin = 1e-6;

struct MixingComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::optional<sphere::UnitVector> dir_mean;
  double dir_var = 0.0;
};

// Position blocks of the state's components (leading `dim` coordinates).
std::vector<MixingComponent> mixing_from_state(const MixtureState& state, Eigen::Index dim);

enum class MixingMode { kPosition, kAugmented };

struct MixingDiagnostics {
  bool fallback = false;  // densities underflowed; nearest component used
};

class LpvDsModel {
 public:
  // b_k is derived from A_k and the attractor. Throws UsageError on shape
  // mismatch or when some A_k violates λ_max((A+Aᵀ)/2) <= -1e-6.
  LpvDsModel(std::vector<MixingComponent> mixing, std::vector<Eigen::MatrixXd> a, Eigen::VectorXd attractor);

  int num_components() const noexcept { return static_cast<int>(a_.size()); }
  Eigen::Index dim() const noexcept { return attractor_.size(); }
  const Eigen::MatrixXd& a(int k) const { return a_[static_cast<std::size_t>(k)]; }
  const Eigen::VectorXd& b(int k) const { return b_[static_cast<std::size_t>(k)]; }
  const std::vector<Eigen::MatrixXd>& a() const noexcept { return a_; }
  const std::vector<Eigen::VectorXd>& b() const noexcept { return b_; }
  const std::vector<MixingComponent>& mixing() const noexcept { return mixing_; }
  const Eigen::VectorXd& attractor() const noexcept { return attractor_; }

  // γ(ξ): softmax of log π_k + log N(ξ | μ_k, Σ_k) (position mode) or of the
  // augmented-state log-density (augmented mode, requires ‖ξ̇‖ > 0).
  Eigen::VectorXd mixing_weights(const Eigen::VectorXd& xi, MixingMode mode = MixingMode::kPosition,
                                 const Eigen::VectorXd* xi_dot = nullptr, MixingDiagnostics* diag = nullptr) const;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& xi, MixingMode mode = MixingMode::kPosition,
                           const Eigen::VectorXd* xi_dot = nullptr) const;

  // Largest eigenvalue of the symmetric part of A_k.
  double max_symmetric_eigenvalue(int k) const;

 private:
  std::vector<MixingComponent> mixing_;
  std::vector<Eigen::MatrixXd> a_;
  std::vector<Eigen::VectorXd> b_;
  Eigen::VectorXd attractor_;
  std::vector<Eigen::MatrixXd> chol_;
  std::vector<double> log_norm_;
};

// Squared-error objective over the free parameters of
//   A_k = S_k - (L_k L_kᵀ + ε I)
// with L_k lower triangular and S_k skew-symmetric; the mixing weights are
// held fixed. Parameter layout per component: the d(d+1)/2 lower-triangular
// entries of L_k (row-major), then the d(d-1)/2 strictly upper entries of S_k.
class LpvObjective {
 public:
  // gammas: N×K; positions, velocities: N×d.
  LpvObjective(const Eigen::MatrixXd& gammas, const Eigen::MatrixXd& positions, const Eigen::MatrixXd& velocities,
               const Eigen::VectorXd& attractor, int workers = 1);

  int num_components() const noexcept { return k_; }
  Eigen::Index dim() const noexcept { return d_; }
  Eigen::Index num_parameters() const noexcept { return static_cast<Eigen::Index>(k_) * per_component(); }
  Eigen::Index per_component() const noexcept { return d_ * (d_ + 1) / 2 + d_ * (d_ - 1) / 2; }

  // Parameters of A_k = -(1 + ε) I for every k.
  Eigen::VectorXd initial_parameters() const;

  std::vector<Eigen::MatrixXd> matrices(const Eigen::VectorXd& params) const;

  // J and, when grad is non-null, ∇J.
  double value(const Eigen::VectorXd& params, Eigen::VectorXd* grad = nullptr) const;

  // J and, when grad is non-null, dJ/dA_k for given matrices, from the
  // second-moment statistics of the data.
  double value(const std::vector<Eigen::MatrixXd>& a, std::vector<Eigen::MatrixXd>* grad = nullptr) const;

  // The same quantities by direct summation over the samples.
  double direct_value(const std::vector<Eigen::MatrixXd>& a, std::vector<Eigen::MatrixXd>* grad = nullptr) const;

  // ε used in the parameterization: the stability margin plus a rounding allowance.
  static constexpr double kEpsilon = kStabilityMargin + 1e-9;

 private:
  int k_;
  Eigen::Index d_;
  Eigen::MatrixXd gammas_;      // K×N
  Eigen::MatrixXd y_;           // d×N, positions relative to the attractor
  Eigen::MatrixXd velocities_;  // d×N
  int workers_;
  // With z_i = γ_i ⊗ y_i: m_ = Σ z zᵀ, c_ = Σ ẋ zᵀ, c0_ = Σ ‖ẋ‖².
  Eigen::MatrixXd m_, c_;
  double c0_ = 0.0;
};

struct FitOptions {
  int max_iterations = 5000;
  double gradient_tolerance = 1e-6;
  int workers = 0;
};

struct FitReport {
  double initial_objective = 0.0;
  double objective = 0.0;
  double gradient_inf_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Fits A_k to the demonstration with γ from the mixing components. Throws
// UsageError on non-finite objective.
LpvDsModel fit(const std::vector<MixingComponent>& mixing, const Demonstration& demo, const FitOptions& options = {},
               FitReport* report = nullptr);

inline LpvDsModel fit(const MixtureState& partition, const Demonstration& demo, const FitOptions& options = {},
                      FitReport* report = nullptr) {
  return fit(mixing_from_state(partition, demo.dim()), demo, options, report);
}

enum class Integrator { kEuler, kRk4 };

struct RolloutOptions {
  double dt = 0.01;
  int max_steps = 10000;
  double convergence_tolerance = 1e-3;
  Integrator integrator = Integrator::kRk4;
  MixingMode mode = MixingMode::kPosition;
};

struct RolloutTrace {
  Eigen::MatrixXd states;      // T×d
  Eigen::MatrixXd velocities;  // T×d
  double dt = 0.0;
  bool converged = false;
};

class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, RolloutTrace partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const RolloutTrace& partial() const noexcept { return partial_; }

 private:
  RolloutTrace partial_;
};

// Integrates from xi0 until ‖ξ - ξ*‖ <= tolerance or max_steps steps. Each RK4
// step of length dt is taken as ceil(dt·max_k ‖A_k‖₂) equal substeps.
RolloutTrace rollout(const LpvDsModel& model, const Eigen::VectorXd& xi0, const RolloutOptions& options = {});

}  // namespace damm
