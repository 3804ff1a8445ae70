#include <algorithm>
#include <cmath>
#include <numbers>

#include "damm/error.hpp"
#include "damm/evalkit.hpp"
#include "damm/random.hpp"

namespace damm {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDt = 0.01;

// Point of the unperturbed planar path at parameter u in [0, 1]; the path ends at the origin.
Eigen::Vector2d path_point(Shape shape, double u) {
  switch (shape) {
    case Shape::kLine:
      return (1.0 - u) * Eigen::Vector2d(-1.0, 0.5);
    case Shape::kSCurve: {
      // Two half circles of radius 0.5, from (0, 2) to (0, 0).
      if (u < 0.5) {
        const double phi = kPi * (2.0 * u);
        return {-0.5 * std::sin(phi), 1.5 + 0.5 * std::cos(phi)};
      }
      const double psi = kPi * (2.0 * u - 1.0);
      return {0.5 * std::sin(psi), 0.5 + 0.5 * std::cos(psi)};
    }
    case Shape::kMultiBehavior: {
      // Outer arc counter-clockwise over the upper half plane, inward step,
      // inner arc clockwise over the same half plane, inward step.
      const double l1 = kPi * 0.95, l2 = 0.4, l3 = kPi * 0.45, l4 = 0.4;
      double s = u * (l1 + l2 + l3 + l4);
      if (s < l1) {
        const double t = s / l1;
        const double r = 1.0 - 0.1 * t;
        return {r * std::cos(kPi * t), r * std::sin(kPi * t)};
      }
      s -= l1;
      if (s < l2) return {-(0.9 - s), 0.0};
      s -= l2;
      if (s < l3) {
        const double t = s / l3;
        const double r = 0.5 - 0.1 * t;
        return {r * std::cos(kPi * (1.0 - t)), r * std::sin(kPi * (1.0 - t))};
      }
      s -= l3;
      return {std::max(0.0, 0.4 - s), 0.0};
    }
  }
  throw UsageError("unknown shape");
}

}  // namespace

const char* shape_name(Shape shape) {
  switch (shape) {
    case Shape::kLine:
      return "line";
    case Shape::kSCurve:
      return "s-curve";
    case Shape::kMultiBehavior:
      return "multi-behavior";
  }
  return "?";
}

Demonstration synthetic_demo(Shape shape, std::uint64_t seed, int samples_per_trajectory) {
  if (samples_per_trajectory < 3) throw UsageError("synthetic_demo: need at least 3 samples per trajectory");
  constexpr int kTrajectories = 3;
  constexpr int kDense = 4000;

  // Arc-length table of the unperturbed path.
  std::vector<Eigen::Vector2d> dense(kDense + 1);
  std::vector<double> arc(kDense + 1, 0.0);
  for (int i = 0; i <= kDense; ++i) {
    dense[static_cast<std::size_t>(i)] = path_point(shape, static_cast<double>(i) / kDense);
    if (i > 0)
      arc[static_cast<std::size_t>(i)] =
          arc[static_cast<std::size_t>(i - 1)] + (dense[static_cast<std::size_t>(i)] - dense[static_cast<std::size_t>(i - 1)]).norm();
  }
  const double length = arc.back();
  auto at_length = [&](double s) -> Eigen::Vector2d {
    const auto it = std::lower_bound(arc.begin(), arc.end(), s);
    if (it == arc.begin()) return dense.front();
    if (it == arc.end()) return dense.back();
    const auto i = static_cast<std::size_t>(it - arc.begin());
    const double w = (s - arc[i - 1]) / std::max(1e-300, arc[i] - arc[i - 1]);
    return (1.0 - w) * dense[i - 1] + w * dense[i];
  };

  const int t_len = samples_per_trajectory;
  Demonstration demo;
  demo.positions.resize(kTrajectories * t_len, 2);
  demo.trajectory_starts.clear();
  Rng rng(stream_seed(seed, {key(Stream::kInit), static_cast<std::uint64_t>(shape)}));
  for (int k = 0; k < kTrajectories; ++k) {
    demo.trajectory_starts.push_back(k * t_len);
    const double angle = 0.05 * (k - 1) + 0.01 * rng.normal();
    const double scale = 1.0 + 0.03 * (k - 1) + 0.005 * rng.normal();
    Eigen::Matrix2d rot;
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    for (int i = 0; i < t_len; ++i) {
      const double t = static_cast<double>(i) / (t_len - 1);
      const double s = length * (1.0 - (1.0 - t) * (1.0 - t));  // speed decays linearly to zero
      demo.positions.row(k * t_len + i) = (scale * (rot * at_length(s))).transpose();
    }
  }
  demo.dt = kDt;
  demo.velocities = finite_difference_velocities(demo.positions, demo.trajectory_starts, kDt);
  demo.attractor = default_attractor(demo);
  return demo;
}

}  // namespace damm
