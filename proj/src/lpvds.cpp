#include "damm/lpvds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "damm/parallel.hpp"
#include "optimize.hpp"

namespace damm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2π)
constexpr std::size_t kChunk = 256;

struct Accum {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> grad;
};

}  // namespace

std::vector<MixingComponent> mixing_from_state(const MixtureState& state, Eigen::Index dim) {
  std::vector<MixingComponent> out;
  out.reserve(state.components.size());
  for (const auto& c : state.components) {
    if (c.mean_pos.size() < dim) throw UsageError("mixing_from_state: component dimension is smaller than the demo");
    MixingComponent m;
    m.weight = c.weight;
    m.mean = c.mean_pos.head(dim);
    m.cov = c.cov_pos.topLeftCorner(dim, dim);
    m.dir_mean = c.dir_mean;
    m.dir_var = c.dir_var;
    out.push_back(std::move(m));
  }
  return out;
}

LpvDsModel::LpvDsModel(std::vector<MixingComponent> mixing, std::vector<Eigen::MatrixXd> a, Eigen::VectorXd attractor)
    : mixing_(std::move(mixing)), a_(std::move(a)), attractor_(std::move(attractor)) {
  const Eigen::Index d = attractor_.size();
  if (d == 0) throw UsageError("LpvDsModel: empty attractor");
  if (a_.empty() || a_.size() != mixing_.size())
    throw UsageError("LpvDsModel: need one matrix per mixing component");
  if (!attractor_.allFinite()) throw UsageError("LpvDsModel: attractor is not finite");
  double total = 0.0;
  for (std::size_t k = 0; k < a_.size(); ++k) {
    const auto& m = mixing_[k];
    if (a_[k].rows() != d || a_[k].cols() != d || !a_[k].allFinite())
      throw UsageError("LpvDsModel: A_" + std::to_string(k) + " must be a finite d×d matrix");
    if (m.mean.size() != d || m.cov.rows() != d || m.cov.cols() != d)
      throw UsageError("LpvDsModel: mixing component " + std::to_string(k) + " has the wrong dimension");
    if (!(m.weight > 0.0) || !std::isfinite(m.weight))
      throw UsageError("LpvDsModel: mixing weight " + std::to_string(k) + " must be positive");
    if (m.dir_mean && (m.dir_mean->dim() != d || !(m.dir_var > 0.0)))
      throw UsageError("LpvDsModel: directional block of component " + std::to_string(k) + " is invalid");
    total += m.weight;
    Eigen::LLT<Eigen::MatrixXd> llt(m.cov);
    if (llt.info() != Eigen::Success || !m.cov.isApprox(m.cov.transpose(), 1e-12))
      throw UsageError("LpvDsModel: covariance " + std::to_string(k) + " is not symmetric positive definite");
    chol_.push_back(llt.matrixL());
    log_norm_.push_back(-0.5 * static_cast<double>(d) * kLog2Pi - chol_.back().diagonal().array().log().sum());
    const double lmax = max_symmetric_eigenvalue(static_cast<int>(k));
    if (!(lmax <= -kStabilityMargin))
      throw UsageError("LpvDsModel: A_" + std::to_string(k) + " is not stable (largest symmetric eigenvalue " +
                       std::to_string(lmax) + ")");
    b_.push_back(-a_[k] * attractor_);
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("LpvDsModel: mixing weights must sum to one");
}

double LpvDsModel::max_symmetric_eigenvalue(int k) const {
  const Eigen::MatrixXd& a = a_.at(static_cast<std::size_t>(k));
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Eigen::VectorXd LpvDsModel::mixing_weights(const Eigen::VectorXd& xi, MixingMode mode, const Eigen::VectorXd* xi_dot,
                                           MixingDiagnostics* diag) const {
  const int k_count = num_components();
  if (xi.size() != dim()) throw UsageError("mixing_weights: state dimension mismatch");
  Eigen::VectorXd dir;
  if (mode == MixingMode::kAugmented) {
    if (!xi_dot || xi_dot->size() != dim()) throw UsageError("mixing_weights: augmented mode needs a velocity");
    const double speed = xi_dot->norm();
    if (!(speed > 0.0)) throw UsageError("mixing_weights: augmented mode needs a nonzero velocity");
    dir = *xi_dot / speed;
  }
  if (diag) diag->fallback = false;
  Eigen::VectorXd logp(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Eigen::VectorXd z = chol_[ks].triangularView<Eigen::Lower>().solve(xi - mixing_[ks].mean);
    double lp = std::log(mixing_[ks].weight) + log_norm_[ks] - 0.5 * z.squaredNorm();
    if (mode == MixingMode::kAugmented && mixing_[ks].dir_mean) {
      const Eigen::VectorXd& mu = mixing_[ks].dir_mean->coords();
      const double c = mu.dot(dir);
      const double r = std::atan2((dir - c * mu).norm(), c);
      const double var = mixing_[ks].dir_var;
      lp += -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
    }
    logp[k] = lp;
  }
  const double mx = logp.maxCoeff();
  Eigen::VectorXd gamma(k_count);
  if (!std::isfinite(mx)) {
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
      const double dist = (xi - mixing_[static_cast<std::size_t>(k)].mean).squaredNorm();
      if (dist < best) {
        best = dist;
        nearest = k;
      }
    }
    gamma.setZero();
    gamma[nearest] = 1.0;
    if (diag) diag->fallback = true;
    return gamma;
  }
  gamma = (logp.array() - mx).exp();
  return gamma / gamma.sum();
}

Eigen::VectorXd LpvDsModel::evaluate(const Eigen::VectorXd& xi, MixingMode mode, const Eigen::VectorXd* xi_dot) const {
  const Eigen::VectorXd gamma = mixing_weights(xi, mode, xi_dot);
  const Eigen::VectorXd y = xi - attractor_;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
  for (int k = 0; k < num_components(); ++k) {
    if (gamma[k] == 0.0) continue;
    out.noalias() += gamma[k] * (a_[static_cast<std::size_t>(k)] * y);
  }
  return out;
}

LpvObjective::LpvObjective(const Eigen::MatrixXd& gammas, const Eigen::MatrixXd& positions,
                           const Eigen::MatrixXd& velocities, const Eigen::VectorXd& attractor, int workers)
    : k_(static_cast<int>(gammas.cols())), d_(positions.cols()), workers_(resolve_workers(workers)) {
  if (gammas.rows() != positions.rows() || velocities.rows() != positions.rows() || velocities.cols() != d_ ||
      attractor.size() != d_)
    throw UsageError("LpvObjective: inconsistent shapes");
  if (k_ == 0 || d_ == 0) throw UsageError("LpvObjective: empty problem");
  gammas_ = gammas.transpose();
  y_ = (positions.rowwise() - attractor.transpose()).transpose();
  velocities_ = velocities.transpose();

  struct Moments {
    Eigen::MatrixXd m, c;
    double c0 = 0.0;
  };
  const Eigen::Index kd = k_ * d_;
  const Moments zero{Eigen::MatrixXd::Zero(kd, kd), Eigen::MatrixXd::Zero(d_, kd), 0.0};
  Moments total = chunked_reduce(
      static_cast<std::size_t>(y_.cols()), kChunk, workers_, zero,
      [&](std::size_t begin, std::size_t end) {
        const auto cols = static_cast<Eigen::Index>(end - begin);
        const auto b = static_cast<Eigen::Index>(begin);
        Eigen::MatrixXd z(kd, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
          for (int k = 0; k < k_; ++k) z.block(k * d_, j, d_, 1) = gammas_(k, b + j) * y_.col(b + j);
        const auto v = velocities_.middleCols(b, cols);
        return Moments{z * z.transpose(), v * z.transpose(), v.squaredNorm()};
      },
      [](Moments lhs, const Moments& rhs) {
        lhs.m += rhs.m;
        lhs.c += rhs.c;
        lhs.c0 += rhs.c0;
        return lhs;
      });
  m_ = std::move(total.m);
  c_ = std::move(total.c);
  c0_ = total.c0;
}

Eigen::VectorXd LpvObjective::initial_parameters() const {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(num_parameters());
  for (int k = 0; k < k_; ++k) {
    Eigen::Index off = k * per_component();
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) p[off++] = r == c ? 1.0 : 0.0;
  }
  return p;
}

std::vector<Eigen::MatrixXd> LpvObjective::matrices(const Eigen::VectorXd& params) const {
  if (params.size() != num_parameters()) throw UsageError("LpvObjective: parameter vector has the wrong size");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(k_));
  for (int k = 0; k < k_; ++k) {
    Eigen::Index off = k * per_component();
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d_, d_);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d_, d_);
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) l(r, c) = params[off++];
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = r + 1; c < d_; ++c) {
        s(r, c) = params[off];
        s(c, r) = -params[off];
        ++off;
      }
    Eigen::MatrixXd a = s - l * l.transpose();
    a.diagonal().array() -= kEpsilon;
    out.push_back(std::move(a));
  }
  return out;
}

double LpvObjective::value(const std::vector<Eigen::MatrixXd>& a, std::vector<Eigen::MatrixXd>* grad) const {
  Eigen::MatrixXd a_cat(d_, k_ * d_);
  for (int k = 0; k < k_; ++k) a_cat.middleCols(k * d_, d_) = a[static_cast<std::size_t>(k)];
  const Eigen::MatrixXd am = a_cat * m_;
  const double j = c0_ - 2.0 * (a_cat.array() * c_.array()).sum() + (a_cat.array() * am.array()).sum();
  if (grad) {
    grad->resize(static_cast<std::size_t>(k_));
    for (int k = 0; k < k_; ++k)
      (*grad)[static_cast<std::size_t>(k)] = 2.0 * (am.middleCols(k * d_, d_) - c_.middleCols(k * d_, d_));
  }
  return std::max(0.0, j);
}

double LpvObjective::direct_value(const std::vector<Eigen::MatrixXd>& a, std::vector<Eigen::MatrixXd>* grad) const {
  const auto n = static_cast<std::size_t>(y_.cols());
  const bool want_grad = grad != nullptr;
  Accum init;
  if (want_grad) init.grad.assign(static_cast<std::size_t>(k_), Eigen::MatrixXd::Zero(d_, d_));
  Accum total = chunked_reduce(
      n, kChunk, workers_, init,
      [&](std::size_t begin, std::size_t end) {
        Accum acc;
        if (want_grad) acc.grad.assign(static_cast<std::size_t>(k_), Eigen::MatrixXd::Zero(d_, d_));
        Eigen::VectorXd f(d_), r(d_);
        std::vector<Eigen::VectorXd> ay(static_cast<std::size_t>(k_));
        for (std::size_t i = begin; i < end; ++i) {
          const auto col = static_cast<Eigen::Index>(i);
          f.setZero();
          for (int k = 0; k < k_; ++k) {
            const double g = gammas_(k, col);
            if (g == 0.0) continue;
            f.noalias() += g * (a[static_cast<std::size_t>(k)] * y_.col(col));
          }
          r = velocities_.col(col) - f;
          acc.value += r.squaredNorm();
          if (want_grad) {
            for (int k = 0; k < k_; ++k) {
              const double g = gammas_(k, col);
              if (g == 0.0) continue;
              acc.grad[static_cast<std::size_t>(k)].noalias() -= (2.0 * g) * r * y_.col(col).transpose();
            }
          }
        }
        return acc;
      },
      [&](Accum lhs, const Accum& rhs) {
        lhs.value += rhs.value;
        for (std::size_t k = 0; k < lhs.grad.size(); ++k) lhs.grad[k] += rhs.grad[k];
        return lhs;
      });
  if (want_grad) *grad = std::move(total.grad);
  return total.value;
}

double LpvObjective::value(const Eigen::VectorXd& params, Eigen::VectorXd* grad) const {
  const auto a = matrices(params);
  if (!grad) return value(a, nullptr);
  std::vector<Eigen::MatrixXd> ga;
  const double j = value(a, &ga);
  grad->resize(num_parameters());
  for (int k = 0; k < k_; ++k) {
    Eigen::Index off = k * per_component();
    const auto ks = static_cast<std::size_t>(k);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d_, d_);
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) l(r, c) = params[off++];
    const Eigen::MatrixXd gl = -(ga[ks] + ga[ks].transpose()) * l;
    off = k * per_component();
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) (*grad)[off++] = gl(r, c);
    for (Eigen::Index r = 0; r < d_; ++r)
      for (Eigen::Index c = r + 1; c < d_; ++c) (*grad)[off++] = ga[ks](r, c) - ga[ks](c, r);
  }
  return j;
}

LpvDsModel fit(const std::vector<MixingComponent>& mixing, const Demonstration& demo, const FitOptions& options,
               FitReport* report) {
  demo.validate();
  if (mixing.empty()) throw UsageError("fit: no mixing components");
  if (options.max_iterations < 0 || !(options.gradient_tolerance >= 0.0))
    throw UsageError("fit: invalid optimizer options");
  const Eigen::Index d = demo.dim();
  const Eigen::Index n = demo.size();
  const int k_count = static_cast<int>(mixing.size());
  const int workers = resolve_workers(options.workers);

  // Mixing weights from a provisional model (matrices are irrelevant to γ).
  std::vector<Eigen::MatrixXd> placeholder(mixing.size(), -Eigen::MatrixXd::Identity(d, d));
  const LpvDsModel gating(mixing, placeholder, demo.attractor);
  Eigen::MatrixXd gammas(n, k_count);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    gammas.row(row) = gating.mixing_weights(demo.positions.row(row).transpose()).transpose();
  });

  const LpvObjective objective(gammas, demo.positions, demo.velocities, demo.attractor, workers);
  detail::LbfgsOptions lopt;
  lopt.max_iterations = options.max_iterations;
  lopt.gradient_tolerance = options.gradient_tolerance;
  const Eigen::VectorXd x0 = objective.initial_parameters();
  Eigen::VectorXd g0;
  const double j0 = objective.value(x0, &g0);
  if (!std::isfinite(j0) || !g0.allFinite()) throw UsageError("fit: objective is not finite for this demonstration");
  const auto result = detail::minimize_lbfgs(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return objective.value(x, &g); }, x0, lopt);
  if (!std::isfinite(result.value)) throw UsageError("fit: objective became non-finite");
  const auto matrices = objective.matrices(result.x);

  if (report) {
    report->initial_objective = objective.direct_value(objective.matrices(x0));
    report->objective = objective.direct_value(matrices);
    report->gradient_inf_norm = result.gradient_inf_norm;
    report->iterations = result.iterations;
    report->converged = result.converged;
  }
  return LpvDsModel(mixing, matrices, demo.attractor);
}

RolloutTrace rollout(const LpvDsModel& model, const Eigen::VectorXd& xi0, const RolloutOptions& options) {
  if (!(options.dt > 0.0) || !std::isfinite(options.dt)) throw UsageError("rollout: dt must be positive");
  if (options.max_steps < 0) throw UsageError("rollout: max_steps must be nonnegative");
  if (!(options.convergence_tolerance >= 0.0)) throw UsageError("rollout: tolerance must be nonnegative");
  if (xi0.size() != model.dim()) throw UsageError("rollout: start has the wrong dimension");

  const Eigen::Index d = model.dim();
  std::vector<Eigen::VectorXd> states, velocities;
  auto field = [&](const Eigen::VectorXd& x, const Eigen::VectorXd* prev) {
    if (options.mode == MixingMode::kAugmented) {
      // The augmented mixing needs a heading; use the position-mode field as
      // the heading estimate when no previous velocity is available.
      Eigen::VectorXd heading = prev && prev->norm() > 0.0 ? *prev : model.evaluate(x);
      if (!(heading.norm() > 0.0)) return model.evaluate(x);
      return model.evaluate(x, MixingMode::kAugmented, &heading);
    }
    return model.evaluate(x);
  };
  auto make_trace = [&](bool converged) {
    RolloutTrace t;
    t.dt = options.dt;
    t.converged = converged;
    t.states.resize(static_cast<Eigen::Index>(states.size()), d);
    t.velocities.resize(static_cast<Eigen::Index>(states.size()), d);
    for (std::size_t i = 0; i < states.size(); ++i) {
      t.states.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
      t.velocities.row(static_cast<Eigen::Index>(i)) = velocities[i].transpose();
    }
    return t;
  };

  if (!xi0.allFinite()) throw UsageError("rollout: start is not finite");
  Eigen::VectorXd x = xi0;
  Eigen::VectorXd v = field(x, nullptr);
  states.push_back(x);
  velocities.push_back(v);
  // RK4 steps are subdivided so that h·max‖A_k‖₂ <= 1; larger products leave
  // the region where each substep contracts V for stiff components.
  int substeps = 1;
  if (options.integrator == Integrator::kRk4) {
    double stiffness = 0.0;
    for (int k = 0; k < model.num_components(); ++k)
      stiffness = std::max(stiffness, Eigen::JacobiSVD<Eigen::MatrixXd>(model.a(k)).singularValues()(0));
    substeps = static_cast<int>(std::clamp(std::ceil(options.dt * stiffness), 1.0, 1e6));
  }
  const double h = options.dt / substeps;
  for (int step = 0;; ++step) {
    if ((x - model.attractor()).norm() <= options.convergence_tolerance) return make_trace(true);
    if (step >= options.max_steps) return make_trace(false);
    if (options.integrator == Integrator::kEuler) {
      x = x + h * v;
    } else {
      Eigen::VectorXd k1 = v;
      for (int sub = 0; sub < substeps; ++sub) {
        if (sub > 0) k1 = field(x, &k1);
        const Eigen::VectorXd k2 = field(x + 0.5 * h * k1, &k1);
        const Eigen::VectorXd k3 = field(x + 0.5 * h * k2, &k2);
        const Eigen::VectorXd k4 = field(x + h * k3, &k3);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
    }
    if (!x.allFinite()) throw IntegrationError("rollout: state became non-finite", make_trace(false));
    const Eigen::VectorXd prev = v;
    v = field(x, &prev);
    if (!v.allFinite()) throw IntegrationError("rollout: velocity became non-finite", make_trace(false));
    states.push_back(x);
    velocities.push_back(v);
  }
}

}  // namespace damm
