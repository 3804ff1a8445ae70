#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "damm/error.hpp"
#include "damm/sampler.hpp"
#include "test_util.hpp"

using namespace damm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<AugmentedObservation> to_obs(const ClusterData& d) {
  std::vector<AugmentedObservation> out;
  for (Eigen::Index i = 0; i < d.size(); ++i)
    out.push_back({d.features.col(i), sphere::UnitVector(Eigen::VectorXd(d.directions.col(i)))});
  return out;
}

SamplerConfig config(std::uint64_t seed, int iterations = 200, int workers = 1) {
  SamplerConfig c;
  c.seed = seed;
  c.iterations = iterations;
  c.workers = workers;
  return c;
}

bool same_state(const MixtureState& a, const MixtureState& b) {
  if (a.assignments != b.assignments || a.components.size() != b.components.size()) return false;
  for (std::size_t k = 0; k < a.components.size(); ++k) {
    const auto& x = a.components[k];
    const auto& y = b.components[k];
    if (x.mean_pos != y.mean_pos || x.cov_pos != y.cov_pos || x.weight != y.weight || x.count != y.count ||
        x.dir_var != y.dir_var)
      return false;
    if (x.directional() != y.directional()) return false;
    if (x.directional() && x.dir_mean->coords() != y.dir_mean->coords()) return false;
  }
  return true;
}

// Relabels by first occurrence.
std::vector<int> canonical(const std::vector<int>& z) {
  std::map<int, int> m;
  std::vector<int> out;
  for (int v : z) {
    auto it = m.find(v);
    if (it == m.end()) it = m.emplace(v, static_cast<int>(m.size())).first;
    out.push_back(it->second);
  }
  return out;
}

void set_partitions(int n, std::vector<int>& cur, int max_label, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == n) {
    out.push_back(cur);
    return;
  }
  for (int l = 0; l <= max_label + 1; ++l) {
    cur.push_back(l);
    set_partitions(n, cur, std::max(max_label, l), out);
    cur.pop_back();
  }
}

// log p(X_k) as a chain of posterior predictives.
double chain_marginal(const MatrixXd& x, const std::vector<Eigen::Index>& idx, const NiwPrior& prior) {
  double lm = 0.0;
  std::vector<Eigen::Index> seen;
  for (auto i : idx) {
    const auto stats = seen.empty() ? empty_stats(x.rows()) : gaussian_stats(x, seen);
    lm += niw_log_predictive(prior, stats, x.col(i));
    seen.push_back(i);
  }
  return lm;
}

double partition_total_variation(const ClusterData& data, std::uint64_t seed, long iterations) {
  const auto n = static_cast<int>(data.size());
  const auto prior = default_prior(data.features);
  Sampler s(data, prior, config(seed, 1));
  std::vector<std::vector<int>> parts;
  std::vector<int> cur;
  set_partitions(n, cur, -1, parts);
  std::vector<double> lp;
  for (const auto& p : parts) {
    const int k = *std::max_element(p.begin(), p.end()) + 1;
    double v = k * std::log(prior.alpha);
    for (int c = 0; c < k; ++c) {
      std::vector<Eigen::Index> idx;
      for (int i = 0; i < n; ++i)
        if (p[i] == c) idx.push_back(i);
      v += std::lgamma(static_cast<double>(idx.size())) + chain_marginal(data.features, idx, prior);
    }
    lp.push_back(v);
  }
  const double mx = *std::max_element(lp.begin(), lp.end());
  double z = 0.0;
  for (double v : lp) z += std::exp(v - mx);
  std::map<std::vector<int>, double> empirical;
  auto st = s.initial_state();
  for (long t = 0; t < iterations; ++t) {
    st.iteration = t;
    Rng coin(stream_seed(seed, {static_cast<std::uint64_t>(t), 99}));
    if (coin.uniform() < 0.5)
      s.propose_split(st);
    else
      s.propose_merge(st);
    s.gibbs_sweep(st);
    empirical[canonical(st.assignments)] += 1.0 / static_cast<double>(iterations);
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) tv += std::abs(std::exp(lp[i] - mx) / z - empirical[parts[i]]);
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("gibbs sweep keeps a correct two-cluster labeling") {
  const auto b = testutil::make_blobs({{0, 0}, {8, 8}}, {0.0, 2.0}, 50, 0.5, 0.1, 3);
  Sampler s(b.data, default_prior(b.data.features), config(1));
  auto state = s.state_from_assignments(b.labels);
  const auto obs = to_obs(b.data);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    double l[2];
    for (int k = 0; k < 2; ++k)
      l[k] = std::log(state.components[k].weight) + component_loglik(obs[i], state.components[k]);
    const double own = l[b.labels[i]], other = l[1 - b.labels[i]];
    CHECK(1.0 / (1.0 + std::exp(other - own)) >= 0.99);
  }
  s.gibbs_sweep(state);
  CHECK(state.assignments == b.labels);
  CHECK_NOTHROW(state.validate(obs.size()));
}

TEST_CASE("gibbs sweep with one component is a no-op on assignments") {
  const auto b = testutil::make_blobs({{0, 0}, {8, 8}}, {0.0, 2.0}, 20, 0.5, 0.1, 4);
  Sampler s(b.data, default_prior(b.data.features), config(2));
  auto state = s.initial_state();
  s.gibbs_sweep(state);
  CHECK(state.num_components() == 1);
  CHECK(std::all_of(state.assignments.begin(), state.assignments.end(), [](int z) { return z == 0; }));
  CHECK(state.components[0].weight == 1.0);
}

TEST_CASE("sampler output does not depend on the worker count") {
  const auto b = testutil::make_blobs({{0, 0}, {5, 0}, {0, 5}}, {0.0, 1.5, 3.0}, 60, 0.7, 0.2, 5);
  const auto prior = default_prior(b.data.features);
  const auto one = Sampler(b.data, prior, config(11, 50, 1)).run();
  const auto three = Sampler(b.data, prior, config(11, 50, 3)).run();
  const auto again = Sampler(b.data, prior, config(11, 50, 1)).run();
  CHECK(same_state(one, three));
  CHECK(same_state(one, again));
}

TEST_CASE("split separates two sub-blobs") {
  const auto b = testutil::make_blobs({{0, 0}, {10, 10}}, {0.5, 0.5}, 100, 1.0, 0.05, 6);
  const auto prior = default_prior(b.data.features);
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Sampler s(b.data, prior, config(seed));
    auto state = s.initial_state();
    const auto out = s.propose_split(state);
    CHECK(out.proposed);
    CHECK(out.log_q_reverse == 0.0);
    CHECK(out.log_acceptance <= 0.0);
    if (out.accepted) {
      ++accepted;
      CHECK(state.num_components() == 2);
      CHECK_NOTHROW(state.validate(200));
    }
  }
  CHECK(accepted >= 8);
}

TEST_CASE("split of identical points is rejected") {
  ClusterData d;
  d.features = MatrixXd::Ones(2, 40);
  d.directions = MatrixXd::Zero(2, 40);
  d.directions.row(0).setOnes();
  d.position_dims = 2;
  PriorOptions po;
  MatrixXd spread(2, 2);
  spread << 0, 1, 0, 1;
  auto prior = default_prior(spread, po);
  prior.mu0 = VectorXd::Ones(2);
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Sampler s(d, prior, config(seed));
    auto state = s.initial_state();
    const auto before = state;
    const auto out = s.propose_split(state);
    if (out.accepted)
      ++accepted;
    else
      CHECK(same_state(state, before));
  }
  CHECK(accepted <= 5);
}

TEST_CASE("merge of one blob and of far-apart blobs") {
  const auto one = testutil::make_blobs({{0, 0}}, {0.3}, 200, 1.0, 0.05, 7);
  const auto prior = default_prior(one.data.features);
  int accepted = 0;
  // Two components from a 2-means fit of the blob, started from a cut across its principal axis.
  const Eigen::Vector2d centroid = one.data.features.rowwise().mean();
  const MatrixXd centered = one.data.features.colwise() - centroid;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(centered * centered.transpose());
  const VectorXd axis = eig.eigenvectors().col(1);
  std::vector<int> z(200);
  for (int i = 0; i < 200; ++i) z[i] = centered.col(i).dot(axis) < 0.0 ? 0 : 1;
  for (int round = 0; round < 50; ++round) {
    Eigen::Vector2d c[2] = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
    double n[2] = {0, 0};
    for (int i = 0; i < 200; ++i) {
      c[z[i]] += one.data.features.col(i);
      n[z[i]] += 1;
    }
    for (int k = 0; k < 2; ++k) c[k] /= n[k];
    for (int i = 0; i < 200; ++i)
      z[i] = (one.data.features.col(i) - c[1]).squaredNorm() < (one.data.features.col(i) - c[0]).squaredNorm();
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Sampler s(one.data, prior, config(seed));
    auto state = s.state_from_assignments(z);
    const auto out = s.propose_merge(state);
    CHECK(out.proposed);
    if (out.accepted) {
      ++accepted;
      CHECK(state.num_components() == 1);
    }
  }
  CHECK(accepted >= 8);

  const auto two = testutil::make_blobs({{0, 0}, {20, 20}}, {0.3, 0.3}, 100, 1.0, 0.05, 8);
  const auto prior2 = default_prior(two.data.features);
  accepted = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Sampler s(two.data, prior2, config(seed));
    auto state = s.state_from_assignments(two.labels);
    const auto before = state;
    const auto out = s.propose_merge(state);
    if (out.accepted)
      ++accepted;
    else
      CHECK(same_state(state, before));
  }
  CHECK(accepted <= 5);
}

TEST_CASE("merge is not proposed with a single component") {
  const auto b = testutil::make_blobs({{0, 0}}, {0.3}, 30, 1.0, 0.05, 9);
  Sampler s(b.data, default_prior(b.data.features), config(1));
  auto state = s.initial_state();
  const auto before = state;
  const auto out = s.propose_merge(state);
  CHECK_FALSE(out.proposed);
  CHECK_FALSE(out.accepted);
  CHECK(same_state(state, before));
}

TEST_CASE("run recovers three clusters") {
  const auto b = testutil::make_blobs({{0, 0}, {6, 0}, {3, 6}}, {0.0, 2.0, 4.0}, 70, 0.8, 0.05, 10);
  const auto prior = default_prior(b.data.features);
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto state = Sampler(b.data, prior, config(seed)).run();
    CHECK_NOTHROW(state.validate(b.labels.size()));
    if (state.num_components() == 3 && adjusted_rand_index(state.assignments, b.labels) >= 0.9) ++good;
  }
  CHECK(good >= 8);
}

TEST_CASE("merge path reaches one or two components from six") {
  const auto b = testutil::make_blobs({{0, 0}}, {0.3}, 200, 1.0, 0.02, 12);
  const auto prior = default_prior(b.data.features);
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 50);
    std::vector<int> z(200);
    for (int i = 0; i < 200; ++i) z[i] = i < 6 ? i : static_cast<int>(rng.uniform() * 6.0);
    Sampler s(b.data, prior, config(seed));
    const auto state = s.run(s.state_from_assignments(z));
    if (state.num_components() <= 2) ++good;
  }
  CHECK(good >= 8);
}

TEST_CASE("straight line stays one component") {
  ClusterData d;
  const int n = 150;
  d.features.resize(2, n);
  d.directions.resize(2, n);
  d.position_dims = 2;
  for (int i = 0; i < n; ++i) {
    const double t = i / (n - 1.0);
    d.features.col(i) = Eigen::Vector2d(-1.0 + t, 0.5 - 0.5 * t);
    d.directions.col(i) = Eigen::Vector2d(1.0, -0.5).normalized();
  }
  const auto state = Sampler(d, default_prior(d.features), config(3)).run();
  long largest = 0;
  for (const auto& c : state.components) largest = std::max(largest, c.count);
  CHECK(largest >= n * 0.9);
}

TEST_CASE("map option returns a state at least as probable as the last") {
  const auto b = testutil::make_blobs({{0, 0}, {6, 0}}, {0.0, 2.0}, 40, 1.0, 0.2, 13);
  const auto prior = default_prior(b.data.features);
  auto cfg = config(4, 60);
  Sampler last(b.data, prior, cfg);
  cfg.return_map = true;
  Sampler best(b.data, prior, cfg);
  CHECK(best.log_posterior(best.run()) >= last.log_posterior(last.run()));
}

TEST_CASE("incremental learning") {
  const auto old_b = testutil::make_blobs({{0, 0}, {6, 0}}, {0.0, 2.0}, 60, 0.6, 0.02, 14);
  const auto prior = default_prior(old_b.data.features);
  const auto old_obs = to_obs(old_b.data);
  auto previous = Sampler(old_b.data, prior, config(1)).run();
  REQUIRE(previous.num_components() == 2);

  SUBCASE("same distribution joins the existing component") {
    const auto extra = testutil::make_blobs({{0, 0}}, {0.0}, 30, 0.6, 0.02, 15);
    const auto next = run_incremental(previous, old_obs, to_obs(extra.data), prior, config(2));
    CHECK(std::equal(previous.assignments.begin(), previous.assignments.end(), next.assignments.begin()));
    const int home = previous.assignments[0];
    for (std::size_t i = previous.assignments.size(); i < next.assignments.size(); ++i)
      CHECK(next.assignments[i] == home);
    CHECK(next.num_components() == 2);
  }
  SUBCASE("disjoint region forms new components") {
    const auto extra = testutil::make_blobs({{0, 12}}, {4.0}, 40, 0.6, 0.02, 16);
    const auto next = run_incremental(previous, old_obs, to_obs(extra.data), prior, config(2));
    CHECK(std::equal(previous.assignments.begin(), previous.assignments.end(), next.assignments.begin()));
    CHECK(next.num_components() > previous.num_components());
    CHECK_NOTHROW(next.validate(next.assignments.size()));
  }
  SUBCASE("empty batch") {
    const auto next = run_incremental(previous, old_obs, {}, prior, config(2));
    CHECK(same_state(next, previous));
  }
  SUBCASE("inconsistent previous state") {
    auto broken = previous;
    broken.assignments.pop_back();
    CHECK_THROWS_AS(run_incremental(broken, old_obs, old_obs, prior, config(2)), UsageError);
  }
}

TEST_CASE("adjusted rand index") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> b{2, 2, 0, 0, 1, 1};
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(1.0));
  const std::vector<int> c{0, 1, 0, 1, 0, 1};
  CHECK(adjusted_rand_index(a, c) < 0.1);
}

TEST_CASE("partition distribution matches enumeration on one-dimensional data") {
  ClusterData d;
  d.features.resize(1, 5);
  d.features << 0.0, 0.2, 1.5, 1.7, 0.8;
  d.position_dims = 1;
  CHECK(partition_total_variation(d, 3, 20000) <= 0.05);
}
