#include "optimize.hpp"

#include <cmath>
#include <deque>

namespace damm::detail {

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options) {
  LbfgsResult res;
  res.x = std::move(x0);
  Eigen::VectorXd g(res.x.size());
  res.value = f(res.x, g);
  res.gradient_inf_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd x_new(res.x.size()), g_new(res.x.size());
  int stalls = 0;

  while (res.iterations < options.max_iterations) {
    if (res.gradient_inf_norm <= options.gradient_tolerance) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }

    double step = 1.0;
    if (s_hist.empty()) step = std::min(1.0, 1.0 / std::max(1e-300, dir.cwiseAbs().maxCoeff()));
    double value_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      value_new = f(x_new, g_new);
      if (std::isfinite(value_new) && value_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++res.iterations;
    if (!accepted || value_new > res.value) {
      // Restart from steepest descent once; stop if that fails too.
      if (s_hist.empty() || ++stalls > 1) break;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }
    stalls = 0;

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    res.x = x_new;
    g = g_new;
    res.value = value_new;
    res.gradient_inf_norm = g.cwiseAbs().maxCoeff();
  }
  if (res.gradient_inf_norm <= options.gradient_tolerance) res.converged = true;
  return res;
}

}  // namespace damm::detail
