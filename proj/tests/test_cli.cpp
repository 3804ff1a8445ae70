#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "damm/cli.hpp"
#include "damm/error.hpp"
#include "damm/evalkit.hpp"
#include "damm/model_io.hpp"

using namespace damm;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "damm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("damm_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator()(const std::string& name) const { return (root / name).string(); }
};

Demonstration shifted(Demonstration d, const Eigen::Vector2d& c) {
  d.positions.rowwise() += c.transpose();
  d.attractor += c;
  return d;
}

}  // namespace

TEST_CASE("learn writes a model and a summary line") {
  Workspace ws;
  save_trajectories(synthetic_demo(Shape::kSCurve, 0), ws("demo.csv"));
  const auto r = run_cli({"learn", ws("demo.csv"), "-o", ws("model.json"), "--seed", "7", "--iters", "100"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ws("model.json")));
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary.at("K").get<int>() >= 1);
  CHECK(summary.at("seed").get<int>() == 7);
  CHECK(summary.contains("wall_time_cluster_s"));
  CHECK(r.out.find('\n') == r.out.size() - 1);

  const auto model = load_model(ws("model.json"));
  CHECK(model.iterations == 100);
  CHECK(model.seed == 7);
  CHECK(static_cast<Eigen::Index>(model.assignments.size()) == synthetic_demo(Shape::kSCurve, 0).size());
  for (int k = 0; k < model.num_components(); ++k) CHECK(model.model().max_symmetric_eigenvalue(k) <= -kStabilityMargin);
}

TEST_CASE("learn is reproducible across runs and worker counts") {
  Workspace ws;
  save_trajectories(synthetic_demo(Shape::kMultiBehavior, 2), ws("demo.csv"));
  REQUIRE(run_cli({"learn", ws("demo.csv"), "-o", ws("a.json"), "--seed", "3", "--workers", "1"}).code == 0);
  REQUIRE(run_cli({"learn", ws("demo.csv"), "-o", ws("b.json"), "--seed", "3", "--workers", "1"}).code == 0);
  REQUIRE(run_cli({"learn", ws("demo.csv"), "-o", ws("c.json"), "--seed", "3", "--workers", "4"}).code == 0);
  CHECK(read_file(ws("a.json")) == read_file(ws("b.json")));
  CHECK(read_file(ws("a.json")) == read_file(ws("c.json")));
  REQUIRE(run_cli({"learn", ws("demo.csv"), "-o", ws("d.json"), "--seed", "4"}).code == 0);
  CHECK(read_file(ws("a.json")) != read_file(ws("d.json")));
}

TEST_CASE("learn failures leave no output") {
  Workspace ws;
  auto r = run_cli({"learn", ws("missing.csv"), "-o", ws("model.json")});
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(ws("model.json")));
  CHECK_FALSE(r.err.empty());
  CHECK(r.out.empty());

  write_file_atomic(ws("bad.csv"), "x1,x2\n0,0\n1,zz\n");
  r = run_cli({"learn", ws("bad.csv"), "-o", ws("model.json"), "--dt", "0.1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK_FALSE(fs::exists(ws("model.json")));

  r = run_cli({"learn", "synthetic:line", "-o", ws("model.json"), "--method", "kmeans"});
  CHECK(r.code == 1);
  CHECK(r.err.find("gmm-p") != std::string::npos);
  CHECK(run_cli({"learn"}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
  for (const auto& e : fs::directory_iterator(ws.root)) CHECK(e.path().filename().string() == "bad.csv");
}

TEST_CASE("incremental keeps old assignments") {
  Workspace ws;
  const auto old_demo = synthetic_demo(Shape::kSCurve, 0);
  save_trajectories(old_demo, ws("old.csv"));
  save_trajectories(synthetic_demo(Shape::kSCurve, 1), ws("overlap.csv"));
  save_trajectories(shifted(synthetic_demo(Shape::kLine, 0), {6.0, 6.0}), ws("far.csv"));
  write_file_atomic(ws("empty.csv"), "x1,x2,v1,v2\n");
  REQUIRE(run_cli({"learn", ws("old.csv"), "-o", ws("m0.json"), "--seed", "1"}).code == 0);
  const auto before = load_model(ws("m0.json"));

  SUBCASE("overlapping batch") {
    const auto r = run_cli({"incremental", ws("m0.json"), ws("old.csv"), ws("overlap.csv"), "-o", ws("m1.json")});
    REQUIRE(r.code == 0);
    const auto after = load_model(ws("m1.json"));
    REQUIRE(after.assignments.size() == 2 * before.assignments.size());
    CHECK(std::equal(before.assignments.begin(), before.assignments.end(), after.assignments.begin()));
  }
  SUBCASE("disjoint batch") {
    const auto r = run_cli({"incremental", ws("m0.json"), ws("old.csv"), ws("far.csv"), "-o", ws("m1.json")});
    REQUIRE(r.code == 0);
    const auto after = load_model(ws("m1.json"));
    CHECK(std::equal(before.assignments.begin(), before.assignments.end(), after.assignments.begin()));
    CHECK(after.num_components() > before.num_components());
  }
  SUBCASE("empty batch") {
    CHECK(run_cli({"incremental", ws("m0.json"), ws("old.csv"), ws("empty.csv"), "-o", ws("m1.json")}).code == 1);
    CHECK_FALSE(fs::exists(ws("m1.json")));
  }
  SUBCASE("mismatched old data") {
    CHECK(run_cli({"incremental", ws("m0.json"), ws("empty.csv"), ws("overlap.csv"), "-o", ws("m1.json")}).code == 1);
  }
}

TEST_CASE("rollout command") {
  Workspace ws;
  const auto demo = synthetic_demo(Shape::kSCurve, 0);
  save_trajectories(demo, ws("demo.csv"));
  REQUIRE(run_cli({"learn", ws("demo.csv"), "-o", ws("model.json")}).code == 0);
  const auto model = load_model(ws("model.json"));
  const std::string star = std::to_string(model.attractor[0]) + "," + std::to_string(model.attractor[1]);

  auto r = run_cli({"rollout", ws("model.json"), "--start", star, "-o", ws("at.csv")});
  REQUIRE(r.code == 0);
  auto trace = load_trajectories(ws("at.csv"));
  CHECK(trace.size() == 1);
  CHECK(nlohmann::json::parse(r.out).at("converged").at(0).get<bool>());

  r = run_cli({"rollout", ws("model.json"), "--start", "1.0,1.5", "-o", ws("one.csv")});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out).at("converged").at(0).get<bool>());
  trace = load_trajectories(ws("one.csv"));
  CHECK((trace.positions.row(trace.size() - 1).transpose() - model.attractor).norm() <= 1e-3);

  r = run_cli({"rollout", ws("model.json"), "--data", ws("demo.csv"), "-o", ws("all.csv")});
  REQUIRE(r.code == 0);
  CHECK(load_trajectories(ws("all.csv")).trajectory_count() == demo.trajectory_count());

  r = run_cli({"rollout", ws("model.json"), "--start", "1.0,1.5", "--integrator", "euler"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("x1,x2", 0) == 0);

  CHECK(run_cli({"rollout", ws("model.json"), "--start", "1,2,3"}).code == 1);
  CHECK(run_cli({"rollout", ws("model.json")}).code == 1);
  CHECK(run_cli({"rollout", ws("model.json"), "--start", "1,2", "--integrator", "leapfrog"}).code == 1);
}

TEST_CASE("benchmark command") {
  Workspace ws;
  save_trajectories(synthetic_demo(Shape::kLine, 0), ws("line.csv"));
  const auto r = run_cli({"benchmark", ws("line.csv"), "--method", "damm", "--seeds", "5"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string first;
  std::getline(lines, first);
  const auto reports = nlohmann::json::parse(first);
  REQUIRE(reports.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(reports[i].at("seed").get<int>() == static_cast<int>(i));
    CHECK(reports[i].at("method").get<std::string>() == "damm");
  }
  CHECK(r.out.find("edot") != std::string::npos);
  const auto bad = run_cli({"benchmark", ws("line.csv"), "--method", "gmm"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("damm") != std::string::npos);
}

TEST_CASE("generate command") {
  Workspace ws;
  CHECK(run_cli({"generate", "s-curve", "-o", ws("s.json"), "--seed", "2"}).code == 0);
  const auto d = load_trajectories(ws("s.json"));
  CHECK(d.positions == synthetic_demo(Shape::kSCurve, 2).positions);
  CHECK(run_cli({"generate", "spiral", "-o", ws("x.csv")}).code == 1);
}

TEST_CASE("model file round trip and validation") {
  LearnConfig cfg;
  cfg.sampler.seed = 5;
  cfg.sampler.workers = 1;
  const auto demo = synthetic_demo(Shape::kLine, 0);
  const auto result = learn(demo, cfg);
  const auto file = make_model_file(result, demo, cfg);
  const std::string text = serialize_model(file);
  const auto back = deserialize_model(text);
  CHECK(serialize_model(back) == text);
  CHECK(back.seed == 5);
  CHECK(back.assignments == file.assignments);
  for (int k = 0; k < file.num_components(); ++k) {
    CHECK(back.a[static_cast<std::size_t>(k)] == file.a[static_cast<std::size_t>(k)]);
    CHECK(back.components[static_cast<std::size_t>(k)].cov_pos == file.components[static_cast<std::size_t>(k)].cov_pos);
    CHECK(back.components[static_cast<std::size_t>(k)].dir_var == file.components[static_cast<std::size_t>(k)].dir_var);
  }
  CHECK(back.prior.psi == file.prior.psi);
  CHECK(back.partition().assignments == result.partition.assignments);

  auto j = nlohmann::json::parse(text);
  j["schema_version"] = 2;
  CHECK_THROWS_AS(deserialize_model(j.dump()), ParseError);
  j = nlohmann::json::parse(text);
  j["components"][0]["A"] = {{1.0, 0.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(deserialize_model(j.dump()), UsageError);
  j = nlohmann::json::parse(text);
  j["components"][0]["b"][0] = j["components"][0]["b"][0].get<double>() + 1.0;
  CHECK_THROWS_AS(deserialize_model(j.dump()), UsageError);
  CHECK_THROWS_AS(deserialize_model("{"), ParseError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), UsageError);
}
