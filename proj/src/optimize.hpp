#pragma once

#include <Eigen/Dense>

#include <functional>

namespace damm::detail {

// f(x, grad) returns the objective and writes the gradient.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct LbfgsOptions {
  int max_iterations = 5000;
  double gradient_tolerance = 1e-6;  // on ‖∇f‖∞
  int memory = 10;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_inf_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Limited-memory BFGS with Armijo backtracking. Never returns a point with a
// larger objective than the start.
LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options = {});

}  // namespace damm::detail
