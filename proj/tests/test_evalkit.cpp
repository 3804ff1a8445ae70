#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <functional>

#include "damm/error.hpp"
#include "damm/evalkit.hpp"
#include "test_util.hpp"

using namespace damm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MixingComponent unit_mix() {
  MixingComponent m;
  m.mean = VectorXd::Zero(2);
  m.cov = MatrixXd::Identity(2, 2);
  return m;
}

LpvDsModel linear_model(const MatrixXd& a, const VectorXd& star) { return LpvDsModel({unit_mix()}, {a}, star); }

// Demo whose velocities are `map` applied to the model's field.
Demonstration field_demo(const LpvDsModel& model, const std::function<VectorXd(const VectorXd&)>& map, int n = 30) {
  Rng rng(1);
  Demonstration d;
  d.positions.resize(n, 2);
  d.velocities.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const VectorXd x = Eigen::Vector2d(3 * rng.normal(), 3 * rng.normal());
    d.positions.row(i) = x.transpose();
    d.velocities.row(i) = map(model.evaluate(x)).transpose();
  }
  d.attractor = model.attractor();
  return d;
}

double brute_dtw(const MatrixXd& a, const MatrixXd& b, Eigen::Index i, Eigen::Index j) {
  const double c = (a.row(i) - b.row(j)).norm();
  if (i == 0 && j == 0) return c;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0) best = std::min(best, brute_dtw(a, b, i - 1, j));
  if (j > 0) best = std::min(best, brute_dtw(a, b, i, j - 1));
  if (i > 0 && j > 0) best = std::min(best, brute_dtw(a, b, i - 1, j - 1));
  return c + best;
}

MatrixXd random_series(Rng& rng, Eigen::Index t) {
  MatrixXd m(t, 2);
  for (Eigen::Index i = 0; i < t; ++i) m.row(i) = Eigen::RowVector2d(rng.normal(), rng.normal());
  return m;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("damm_test_" + std::to_string(::getpid()) + "_" +
                                                     std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

LearnConfig quick_config(Method method, std::uint64_t seed) {
  LearnConfig c;
  c.method = method;
  c.sampler.seed = seed;
  c.sampler.workers = 1;
  return c;
}

}  // namespace

TEST_CASE("rmse") {
  const VectorXd star = Eigen::Vector2d(0.5, 0.5);
  const auto model = linear_model(-MatrixXd::Identity(2, 2), star);
  CHECK(rmse(model, field_demo(model, [](const VectorXd& v) { return v; })) == 0.0);

  // All samples at the attractor: f = 0, so the error is the reference speed.
  Demonstration still;
  still.positions = star.transpose().replicate(3, 1);
  still.velocities.resize(3, 2);
  still.velocities << 3, 4, 0, 1, 1, 0;
  still.attractor = star;
  CHECK(rmse(model, still) == doctest::Approx((5.0 + 1.0 + 1.0) / 3.0).epsilon(1e-15));

  Rng rng(2);
  const auto demo = field_demo(model, [&](const VectorXd& v) { return VectorXd(v + Eigen::Vector2d(rng.normal(), rng.normal())); });
  double manual = 0.0;
  for (Eigen::Index i = 0; i < demo.size(); ++i)
    manual += (demo.velocities.row(i).transpose() - model.evaluate(demo.positions.row(i).transpose())).norm();
  CHECK(rmse(model, demo) == doctest::Approx(manual / static_cast<double>(demo.size())).epsilon(1e-13));
}

TEST_CASE("edot") {
  Eigen::Matrix2d a;
  a << -1.0, 0.5, -0.5, -1.0;
  const auto model = linear_model(a, VectorXd::Zero(2));
  CHECK(edot(model, field_demo(model, [](const VectorXd& v) { return VectorXd(3.0 * v); })) <= 1e-15);
  CHECK(edot(model, field_demo(model, [](const VectorXd& v) { return VectorXd(-0.5 * v); })) ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK(edot(model, field_demo(model, [](const VectorXd& v) { return VectorXd(Eigen::Vector2d(-v[1], v[0])); })) ==
        doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(3);
  const auto noisy = field_demo(model, [&](const VectorXd& v) { return VectorXd(v + Eigen::Vector2d(rng.normal(), rng.normal())); });
  const auto doubled = linear_model(2.0 * a, VectorXd::Zero(2));
  CHECK(edot(model, noisy) == doctest::Approx(edot(doubled, noisy)).epsilon(1e-14));
}

TEST_CASE("dtwd") {
  MatrixXd a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  CHECK(dtwd(a, b) == 5.0);
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto x = random_series(rng, 1 + static_cast<Eigen::Index>(rng.below(10)));
    const auto y = random_series(rng, 1 + static_cast<Eigen::Index>(rng.below(10)));
    CHECK(dtwd(x, x) == 0.0);
    CHECK(dtwd(x, y) == dtwd(y, x));
    CHECK(dtwd(x, y) >= 0.0);
    if (t < 40) CHECK(dtwd(x, y) == doctest::Approx(brute_dtw(x, y, x.rows() - 1, y.rows() - 1)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dtwd(MatrixXd(0, 2), b), UsageError);
  CHECK_THROWS_AS(dtwd(a, MatrixXd::Zero(1, 3)), UsageError);
}

TEST_CASE("csv loading") {
  const std::string positions = "x1,x2\n0,0\n1,0\n3,0\n6,0\n";
  const auto d = parse_trajectories_csv(positions, 0.01);
  CHECK(d.size() == 4);
  CHECK(d.velocities(1, 0) == doctest::Approx((3.0 - 0.0) / 0.02));
  CHECK(d.velocities(2, 0) == doctest::Approx((6.0 - 1.0) / 0.02));
  CHECK(d.velocities(0, 0) == doctest::Approx(100.0));
  CHECK(d.velocities(3, 0) == doctest::Approx(300.0));
  CHECK((d.attractor - Eigen::Vector2d(6, 0)).norm() == 0.0);
  CHECK_THROWS_AS(parse_trajectories_csv(positions), UsageError);

  const auto v = parse_trajectories_csv("x1,x2,v1,v2\n0,0,0.125,3\n1,1,7,-2e-3\n");
  CHECK(v.velocities(0, 0) == 0.125);
  CHECK(v.velocities(1, 1) == -2e-3);

  const auto two = parse_trajectories_csv("x1,x2,v1,v2\n0,0,1,1\n1,1,1,1\n2,2,1,1\n\n5,5,1,1\n6,6,1,1\n");
  REQUIRE(two.trajectory_count() == 2);
  CHECK(two.trajectory_starts[0] == 0);
  CHECK(two.trajectory_starts[1] == 3);
  CHECK((two.attractor - Eigen::Vector2d(4, 4)).norm() == 0.0);

  const auto dashed = parse_trajectories_csv("x1,x2,v1,v2\n0,0,1,1\n1,1,1,1\n---\n5,5,1,1\n");
  CHECK(dashed.trajectory_count() == 2);

  try {
    parse_trajectories_csv("x1,x2,v1,v2\n0,0,1,1\n1,oops,1,1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_trajectories_csv("x1,x2,v1,v2\n0,0,1\n"), ParseError);
  CHECK_THROWS_AS(parse_trajectories_csv("x1,x2,v1,v2\n0,0,1,nan\n"), ParseError);
  CHECK_THROWS_AS(parse_trajectories_csv(""), ParseError);
}

TEST_CASE("json loading") {
  const auto d = parse_trajectories_json(R"({"positions": [[[0,0],[1,1]],[[2,2],[3,3],[4,4]]], "dt": 0.5,
                                             "attractor": [4, 4.5]})");
  CHECK(d.trajectory_count() == 2);
  CHECK(d.size() == 5);
  CHECK(d.dt == 0.5);
  CHECK(d.attractor[1] == 4.5);
  CHECK(d.velocities(3, 0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(parse_trajectories_json(R"({"positions": [[0,0],[1]]})", 0.1), ParseError);
  CHECK_THROWS_AS(parse_trajectories_json("{not json"), ParseError);
}

TEST_CASE("save and load round-trip bit-identically") {
  TempDir dir;
  Rng rng(5);
  Demonstration d;
  d.positions = random_series(rng, 25);
  d.velocities = random_series(rng, 25) * 1e-7;
  d.positions(3, 1) = 1.0 / 3.0;
  d.trajectory_starts = {0, 10, 17};
  d.attractor = Eigen::Vector2d(rng.normal(), rng.normal());
  d.dt = 0.01;
  for (auto fmt : {TrajectoryFormat::kCsv, TrajectoryFormat::kJson}) {
    const std::string path = dir.file(fmt == TrajectoryFormat::kCsv ? "demo.csv" : "demo.json");
    save_trajectories(d, path);
    const auto back = load_trajectories(path);
    CHECK(back.positions == d.positions);
    CHECK(back.velocities == d.velocities);
    CHECK(back.trajectory_starts == d.trajectory_starts);
    if (fmt == TrajectoryFormat::kJson) {
      CHECK(back.attractor == d.attractor);
      CHECK(back.dt == d.dt);
    }
    save_trajectories(back, path + ".again", fmt);
    CHECK(read_file(path) == read_file(path + ".again"));
  }
  CHECK_THROWS_AS(load_trajectories(dir.file("missing.csv")), UsageError);
}

TEST_CASE("synthetic demonstrations") {
  for (auto shape : {Shape::kLine, Shape::kSCurve, Shape::kMultiBehavior}) {
    const auto d = synthetic_demo(shape, 1);
    CHECK_NOTHROW(d.validate());
    CHECK(d.trajectory_count() == 3);
    CHECK(d.dt == 0.01);
    for (std::size_t k = 0; k < 3; ++k) {
      const Eigen::Index last = d.trajectory_end(k) - 1;
      CHECK((d.positions.row(last).transpose() - d.attractor).norm() < 0.05);
    }
    const auto again = synthetic_demo(shape, 1);
    CHECK(again.positions == d.positions);
  }
  CHECK(synthetic_demo(Shape::kLine, 1).positions != synthetic_demo(Shape::kLine, 2).positions);
}

TEST_CASE("method names") {
  CHECK(parse_method("damm") == Method::kDamm);
  CHECK(parse_method("gmm-p") == Method::kGmmP);
  CHECK(parse_method("gmm-pv") == Method::kGmmPV);
  try {
    parse_method("kmeans");
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("damm") != std::string::npos);
    CHECK(msg.find("gmm-pv") != std::string::npos);
  }
}

TEST_CASE("straight line is fitted almost exactly") {
  const auto demo = synthetic_demo(Shape::kLine, 0);
  const auto report = benchmark(demo, quick_config(Method::kDamm, 0));
  CHECK(report.edot <= 0.05);
  for (double v : {report.rmse, report.edot, report.dtwd, report.wall_time_cluster_s, report.wall_time_fit_s,
                   report.objective}) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
  CHECK(report.K_final >= 1);
  CHECK(report.rollouts_converged);
}

TEST_CASE("direction awareness on the S-curve") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto demo = synthetic_demo(Shape::kSCurve, seed);
    const auto damm = benchmark(demo, quick_config(Method::kDamm, seed));
    const auto gmm = benchmark(demo, quick_config(Method::kGmmP, seed));
    wins += damm.edot < gmm.edot ? 1 : 0;
  }
  CHECK(wins >= 8);
}

TEST_CASE("overlapping reversed segments") {
  // Out along the x axis and back on the same path, then down to the attractor.
  Demonstration d;
  const int n = 100;
  d.positions.resize(3 * n, 2);
  d.velocities.resize(3 * n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = i / (n - 1.0);
    d.positions.row(i) = Eigen::RowVector2d(4.0 * t, 0.0);
    d.velocities.row(i) = Eigen::RowVector2d(1.0, 0.0);
    d.positions.row(n + i) = Eigen::RowVector2d(4.0 * (1 - t), 0.02);
    d.velocities.row(n + i) = Eigen::RowVector2d(-1.0, 0.0);
    d.positions.row(2 * n + i) = Eigen::RowVector2d(0.0, -4.0 * t);
    d.velocities.row(2 * n + i) = Eigen::RowVector2d(0.0, -1.0);
  }
  d.attractor = Eigen::Vector2d(0.0, -4.0);
  std::vector<int> leg(3 * n);
  for (int i = 0; i < 3 * n; ++i) leg[i] = i / n;

  // A component mixes the legs when it holds at least 10% of each of the first two.
  auto mixes_legs = [&](const std::vector<int>& z, int k) {
    for (int c = 0; c < k; ++c) {
      int out = 0, back = 0;
      for (int i = 0; i < 2 * n; ++i)
        if (z[i] == c) (leg[i] == 0 ? out : back) += 1;
      if (out >= n / 10 && back >= n / 10) return true;
    }
    return false;
  };
  const auto damm = learn(d, quick_config(Method::kDamm, 1));
  const auto dz = damm.sample_assignments(d.size());
  CHECK_FALSE(mixes_legs(dz, damm.partition.num_components()));
  const auto gmm = learn(d, quick_config(Method::kGmmP, 1));
  const auto gz = gmm.sample_assignments(d.size());
  CHECK(mixes_legs(gz, gmm.partition.num_components()));
}

TEST_CASE("position-velocity baseline on a straight line") {
  Demonstration d;
  const int n = 150;
  d.positions.resize(n, 2);
  d.velocities.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = i / (n - 1.0);
    d.positions.row(i) = Eigen::RowVector2d(-1.0 + t, 0.5 - 0.5 * t);
    d.velocities.row(i) = Eigen::RowVector2d(1.0, -0.5);
  }
  d.attractor = Eigen::Vector2d::Zero();
  const auto data = baseline_data(d, Method::kGmmPV);
  CHECK(data.features.rows() == 4);
  CHECK(data.position_dims == 2);
  SamplerConfig c;
  c.seed = 3;
  c.workers = 1;
  const auto state = gmm_baseline(d, Method::kGmmPV, {}, c);
  CHECK(state.num_components() <= 2);
  CHECK_FALSE(state.components[0].directional());
}

TEST_CASE("learning is deterministic") {
  const auto demo = synthetic_demo(Shape::kSCurve, 4);
  const auto a = learn(demo, quick_config(Method::kDamm, 9));
  auto cfg = quick_config(Method::kDamm, 9);
  cfg.sampler.workers = 2;
  const auto b = learn(demo, cfg);
  CHECK(a.partition.assignments == b.partition.assignments);
  REQUIRE(a.model.num_components() == b.model.num_components());
  for (int k = 0; k < a.model.num_components(); ++k) CHECK(a.model.a(k) == b.model.a(k));
  CHECK(a.fit.objective == b.fit.objective);
}
