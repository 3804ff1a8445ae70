#include "damm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "damm/error.hpp"
#include "damm/parallel.hpp"
#include "damm_internal.hpp"

namespace damm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kColumnChunk = 1024;
// Redraws of the parallel assignment step when a component would be emptied.
constexpr int kAssignAttempts = 3;
// Probabilities that a split proposal assigns sides uniformly at random or
// splits off one point instead of scanning from the launch state.
constexpr double kUniformSplit = 0.1;
constexpr double kSingleSplit = 0.1;

using Index = Eigen::Index;

// Index of the categorical draw from unnormalized log-probabilities.
int sample_log_categorical(const double* logp, int k, double u) {
  double mx = kNegInf;
  for (int j = 0; j < k; ++j) mx = std::max(mx, logp[j]);
  double total = 0.0;
  double cumulative[64];
  std::vector<double> heap;
  double* cum = cumulative;
  if (k > 64) {
    heap.resize(static_cast<std::size_t>(k));
    cum = heap.data();
  }
  for (int j = 0; j < k; ++j) {
    total += std::exp(logp[j] - mx);
    cum[j] = total;
  }
  const double target = u * total;
  for (int j = 0; j < k; ++j)
    if (target < cum[j]) return j;
  return k - 1;
}

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Eigen::VectorXd position_mean(const ClusterData& data, std::span<const Index> members) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(data.position_dims);
  for (auto i : members) m += data.features.col(i).head(data.position_dims);
  return m / static_cast<double>(members.size());
}

// Coordinates of a candidate set used to place the launch state: features
// over their RMS spread, stacked with directions over the prior directional
// standard deviation.
Eigen::MatrixXd launch_coordinates(const ClusterData& data, const NiwPrior& prior, std::span<const Index> set) {
  const auto m = static_cast<Index>(set.size());
  const Index dp = data.features.rows();
  const Index dd = data.directional() ? data.directions.rows() : 0;
  Eigen::MatrixXd w(dp + dd, m);
  for (Index j = 0; j < m; ++j) {
    w.col(j).head(dp) = data.features.col(set[static_cast<std::size_t>(j)]);
    if (dd > 0) w.col(j).tail(dd) = data.directions.col(set[static_cast<std::size_t>(j)]);
  }
  auto block = w.topRows(dp);
  const Eigen::VectorXd mean = block.rowwise().mean();
  const double var = (block.colwise() - mean).squaredNorm() / static_cast<double>(m);
  block /= std::sqrt(std::max(var, 1e-300));
  if (dd > 0) w.bottomRows(dd) /= std::sqrt(prior.dir_var_scale / (prior.dir_var_shape - 1.0));
  return w;
}

constexpr int kLaunchRounds = 20;

// 2-means over the columns of `w`, seeded one standard deviation either side
// of the centroid along the principal axis. Pinned columns stay on side 0,
// which then starts from their centroid and faces the farthest free column.
std::vector<char> two_means(const Eigen::MatrixXd& w, const std::vector<char>& pinned) {
  const auto m = static_cast<std::size_t>(w.cols());
  std::vector<char> group(m, 0);
  const bool has_pins = std::any_of(pinned.begin(), pinned.end(), [](char p) { return p != 0; });
  Eigen::VectorXd ref[2];
  if (has_pins) {
    ref[0] = Eigen::VectorXd::Zero(w.rows());
    double count = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (pinned[j]) {
        ref[0] += w.col(static_cast<Index>(j));
        count += 1.0;
      }
    ref[0] /= count;
    Index far = -1;
    double far_d = -1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (pinned[j]) continue;
      const double d = (w.col(static_cast<Index>(j)) - ref[0]).squaredNorm();
      if (d > far_d) {
        far_d = d;
        far = static_cast<Index>(j);
      }
    }
    if (far < 0) return group;
    ref[1] = w.col(far);
  } else {
    const Eigen::VectorXd mean = w.rowwise().mean();
    const Eigen::MatrixXd centered = w.colwise() - mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered * centered.transpose() / static_cast<double>(m));
    const Eigen::Index top = w.rows() - 1;
    const Eigen::VectorXd step = std::sqrt(std::max(eig.eigenvalues()[top], 0.0)) * eig.eigenvectors().col(top);
    ref[0] = mean - step;
    ref[1] = mean + step;
  }
  for (int round = 0; round < kLaunchRounds; ++round) {
    bool changed = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (pinned[j]) continue;
      const auto col = w.col(static_cast<Index>(j));
      const char g = (col - ref[1]).squaredNorm() < (col - ref[0]).squaredNorm() ? 1 : 0;
      changed = changed || g != group[j];
      group[j] = g;
    }
    if (!changed && round > 0) break;
    Eigen::VectorXd sum[2] = {Eigen::VectorXd::Zero(w.rows()), Eigen::VectorXd::Zero(w.rows())};
    double count[2] = {0.0, 0.0};
    for (std::size_t j = 0; j < m; ++j) {
      sum[group[j] ? 1 : 0] += w.col(static_cast<Index>(j));
      count[group[j] ? 1 : 0] += 1.0;
    }
    for (int g = 0; g < 2; ++g)
      if (count[g] > 0.0) ref[g] = sum[g] / count[g];
  }
  return group;
}

// log probability that the final scan reproduces `labels`. Without pinned
// points the two sides are exchangeable and both labelings count.
double partition_log_q(const std::vector<double>& la, const std::vector<double>& lb, const std::vector<char>& labels,
                       const std::vector<char>& pinned) {
  double direct = 0.0, swapped = 0.0;
  bool exchangeable = true;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (pinned[j]) {
      exchangeable = false;
      continue;
    }
    direct += labels[j] == 0 ? la[j] : lb[j];
    swapped += labels[j] == 0 ? lb[j] : la[j];
  }
  return exchangeable ? log_sum_exp2(direct, swapped) : direct;
}

// log probability of any labeling under uniform side assignment of the free points.
double uniform_log_q(const std::vector<char>& pinned) {
  const auto free = std::count(pinned.begin(), pinned.end(), 0);
  const bool exchangeable = free == static_cast<std::ptrdiff_t>(pinned.size());
  return (exchangeable ? std::log(2.0) : 0.0) - static_cast<double>(free) * std::log(2.0);
}

// log probability that moving one uniformly chosen free point to side B
// yields `labels`.
double single_log_q(const std::vector<char>& labels, const std::vector<char>& pinned) {
  const auto free = std::count(pinned.begin(), pinned.end(), 0);
  const auto on_b = std::count(labels.begin(), labels.end(), 1);
  const auto m = static_cast<std::ptrdiff_t>(labels.size());
  if (free == m) {
    const int singles = (on_b == 1 ? 1 : 0) + (m - on_b == 1 ? 1 : 0);
    return singles == 0 ? kNegInf : std::log(static_cast<double>(singles) / static_cast<double>(m));
  }
  if (on_b != 1) return kNegInf;
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j] == 1 && pinned[j]) return kNegInf;
  return -std::log(static_cast<double>(free));
}

// Split proposals mix the launch scan with uniform side assignment and with
// splitting off a single point.
double mixture_log_q(bool degenerate, const std::vector<double>& la, const std::vector<double>& lb,
                     const std::vector<char>& labels, const std::vector<char>& pinned) {
  const double launch =
      degenerate ? kNegInf : std::log1p(-kUniformSplit - kSingleSplit) + partition_log_q(la, lb, labels, pinned);
  const double rest =
      log_sum_exp2(std::log(kUniformSplit) + uniform_log_q(pinned), std::log(kSingleSplit) + single_log_q(labels, pinned));
  return log_sum_exp2(launch, rest);
}
}  // namespace

void MixtureState::validate(std::size_t n) const {
  if (assignments.size() != n) throw UsageError("mixture state: assignment count does not match observations");
  const int k = num_components();
  if (k < 1) throw UsageError("mixture state: no components");
  std::vector<long> counts(static_cast<std::size_t>(k), 0);
  for (int z : assignments) {
    if (z < 0 || z >= k) throw UsageError("mixture state: assignment references a missing component");
    ++counts[static_cast<std::size_t>(z)];
  }
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    const auto& c = components[static_cast<std::size_t>(j)];
    if (counts[static_cast<std::size_t>(j)] < 1) throw UsageError("mixture state: empty component");
    if (c.count != counts[static_cast<std::size_t>(j)]) throw UsageError("mixture state: component count mismatch");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("mixture state: weights do not sum to one");
}

void SamplerConfig::validate() const {
  if (iterations < 1) throw UsageError("sampler: iterations must be at least 1");
  if (launch_scans < 1) throw UsageError("sampler: launch scans must be at least 1");
  if (proposals_per_iteration < 0) throw UsageError("sampler: negative proposal rate");
}

struct Sampler::Launch {
  std::vector<char> group;  // 0 = A, 1 = B, per set position
  bool degenerate = false;  // one side is empty
  detail::Density density[2];
  double log_weight[2] = {0.0, 0.0};
};

Sampler::Sampler(ClusterData data, NiwPrior prior, SamplerConfig config, std::vector<bool> frozen)
    : data_(std::move(data)),
      prior_(std::move(prior)),
      config_(config),
      frozen_(std::move(frozen)),
      workers_(resolve_workers(config.workers)) {
  config_.validate();
  prior_.validate();
  if (data_.size() < 1) throw UsageError("sampler: no observations");
  if (prior_.dim() != data_.features.rows()) throw UsageError("sampler: prior dimension does not match features");
  if (data_.position_dims <= 0 || data_.position_dims > data_.features.rows())
    data_.position_dims = data_.features.rows();
  if (frozen_.empty()) frozen_.assign(static_cast<std::size_t>(data_.size()), false);
  if (frozen_.size() != static_cast<std::size_t>(data_.size())) throw UsageError("sampler: frozen mask size mismatch");
  const auto pos = data_.features.topRows(data_.position_dims);
  const Eigen::VectorXd spread = pos.rowwise().maxCoeff() - pos.rowwise().minCoeff();
  pair_floor_ = spread.squaredNorm() > 0.0 ? 1e-12 * spread.squaredNorm() : 1.0;
}

std::vector<std::vector<Index>> Sampler::members(const MixtureState& state) const {
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(state.num_components()));
  for (std::size_t i = 0; i < state.assignments.size(); ++i)
    groups[static_cast<std::size_t>(state.assignments[i])].push_back(static_cast<Index>(i));
  return groups;
}

bool Sampler::all_new(std::span<const Index> m) const {
  return std::none_of(m.begin(), m.end(), [&](Index i) { return frozen_[static_cast<std::size_t>(i)]; });
}

bool Sampler::split_eligible(std::span<const Index> m) const {
  std::size_t movable = 0;
  for (auto i : m) movable += frozen_[static_cast<std::size_t>(i)] ? 0 : 1;
  const bool pinned = movable < m.size();
  return pinned ? movable >= 1 : movable >= 2;
}

int Sampler::count_split_eligible(const std::vector<std::vector<Index>>& groups) const {
  int e = 0;
  for (const auto& g : groups) e += split_eligible(g) ? 1 : 0;
  return e;
}

bool Sampler::pair_eligible(std::span<const Index> a, std::span<const Index> b) const {
  return all_new(a) || all_new(b);
}

std::vector<std::vector<double>> Sampler::pair_weights(const std::vector<std::vector<Index>>& groups) const {
  const std::size_t k = groups.size();
  std::vector<Eigen::VectorXd> means(k);
  for (std::size_t j = 0; j < k; ++j) means[j] = position_mean(data_, groups[j]);
  std::vector<std::vector<double>> w(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!pair_eligible(groups[i], groups[j])) continue;
      w[i][j] = w[j][i] = 1.0 / ((means[i] - means[j]).squaredNorm() + pair_floor_);
    }
  return w;
}

double Sampler::merge_pair_log_prob(const std::vector<std::vector<double>>& w, int a, int b) const {
  const std::size_t k = w.size();
  std::vector<double> row_sum(k, 0.0);
  std::size_t starters = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (double x : w[i]) row_sum[i] += x;
    starters += row_sum[i] > 0.0 ? 1 : 0;
  }
  const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
  if (starters == 0 || w[ua][ub] <= 0.0) return kNegInf;
  const double p = (w[ua][ub] / row_sum[ua] + w[ub][ua] / row_sum[ub]) / static_cast<double>(starters);
  return std::log(p);
}

bool Sampler::sample_merge_pair(const std::vector<std::vector<double>>& w, Rng& rng, int& a, int& b) const {
  const std::size_t k = w.size();
  std::vector<int> starters;
  for (std::size_t i = 0; i < k; ++i)
    if (std::any_of(w[i].begin(), w[i].end(), [](double x) { return x > 0.0; })) starters.push_back(static_cast<int>(i));
  if (starters.empty()) return false;
  const int first = starters[rng.below(starters.size())];
  const auto& row = w[static_cast<std::size_t>(first)];
  double total = 0.0;
  for (double x : row) total += x;
  double u = rng.uniform() * total;
  int second = -1;
  for (std::size_t j = 0; j < k; ++j) {
    if (row[j] <= 0.0) continue;
    second = static_cast<int>(j);
    if (u < row[j]) break;
    u -= row[j];
  }
  a = std::min(first, second);
  b = std::max(first, second);
  return true;
}

double Sampler::log_cluster(std::span<const Index> m) const {
  return std::lgamma(static_cast<double>(m.size())) + detail::log_marginal(data_, prior_, m);
}

double Sampler::log_posterior(const MixtureState& state) const {
  const auto groups = members(state);
  double lp = static_cast<double>(groups.size()) * std::log(prior_.alpha);
  for (const auto& g : groups) lp += log_cluster(g);
  return lp;
}

MixtureState Sampler::initial_state() const {
  return state_from_assignments(std::vector<int>(static_cast<std::size_t>(data_.size()), 0));
}

MixtureState Sampler::state_from_assignments(std::vector<int> assignments) const {
  if (assignments.size() != static_cast<std::size_t>(data_.size()))
    throw UsageError("sampler: assignment count does not match observations");
  int k = 0;
  for (int z : assignments) {
    if (z < 0) throw UsageError("sampler: negative label");
    k = std::max(k, z + 1);
  }
  MixtureState state;
  state.assignments = std::move(assignments);
  state.components.resize(static_cast<std::size_t>(k));
  state.seed = config_.seed;
  finalize(state);
  return state;
}

void Sampler::finalize(MixtureState& state) const {
  const auto groups = members(state);
  for (const auto& g : groups)
    if (g.empty()) throw UsageError("sampler: labels must be contiguous (empty component)");
  const double n = static_cast<double>(data_.size());
  parallel_for(groups.size(), workers_, [&](std::size_t k) {
    auto c = detail::posterior_mean_component(data_, prior_, groups[k]);
    c.weight = static_cast<double>(groups[k].size()) / n;
    state.components[k] = std::move(c);
  });
}

double Sampler::sweep_log_ratio(const SweepState& cur, const std::vector<double>& dir_var,
                                const std::vector<int>& proposal, SweepState& next) const {
  const auto k = static_cast<std::size_t>(cur.logp.rows());
  const Index n = data_.size();
  next.members.assign(k, {});
  for (Index i = 0; i < n; ++i) next.members[static_cast<std::size_t>(proposal[static_cast<std::size_t>(i)])].push_back(i);
  next.logp = cur.logp;
  next.dir_means = cur.dir_means;
  next.z = proposal;

  // Log-probabilities with the mean directions of the proposed members.
  parallel_for(k, workers_, [&](std::size_t j) {
    if (next.members[j] == cur.members[j]) return;
    next.dir_means[j] = detail::robust_direction_mean(data_.directions, next.members[j]);
    const double inv = 0.5 / dir_var[j];
    for (Index i = 0; i < n; ++i) {
      const auto q = data_.directions.col(i);
      const double r_old = sphere::detail::distance(cur.dir_means[j], q);
      const double r_new = sphere::detail::distance(next.dir_means[j], q);
      next.logp(static_cast<Index>(j), i) += inv * (r_old * r_old - r_new * r_new);
    }
  });

  auto log_norm = [](const Eigen::MatrixXd& m, Index i) {
    const double mx = m.col(i).maxCoeff();
    return mx + std::log((m.col(i).array() - mx).exp().sum());
  };
  double ratio = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto a = static_cast<Index>(cur.z[static_cast<std::size_t>(i)]);
    const auto b = static_cast<Index>(proposal[static_cast<std::size_t>(i)]);
    ratio += next.logp(b, i) - cur.logp(a, i);
    if (frozen_[static_cast<std::size_t>(i)]) continue;
    ratio += (next.logp(a, i) - log_norm(next.logp, i)) - (cur.logp(b, i) - log_norm(cur.logp, i));
  }
  return std::isnan(ratio) ? kNegInf : ratio;
}

void Sampler::gibbs_sweep(MixtureState& state) const {
  const int k = state.num_components();
  const Index n = data_.size();
  const auto groups = members(state);
  const auto iter = static_cast<std::uint64_t>(state.iteration);
  const std::uint64_t seed = config_.seed;

  // Weights.
  std::vector<double> weights(static_cast<std::size_t>(k), 1.0);
  if (k > 1) {
    Rng rng(stream_seed(seed, {iter, key(Stream::kWeights)}));
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      weights[static_cast<std::size_t>(j)] = rng.gamma(static_cast<double>(groups[static_cast<std::size_t>(j)].size()));
      total += weights[static_cast<std::size_t>(j)];
    }
    for (auto& w : weights) w /= total;
  }

  // Parameters.
  std::vector<DammComponent> comps(static_cast<std::size_t>(k));
  std::vector<detail::Density> dens(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), workers_, [&](std::size_t j) {
    Rng rng(stream_seed(seed, {iter, key(Stream::kParams), j}));
    comps[j] = detail::sample_component(data_, prior_, groups[j], rng);
    dens[j] = detail::make_density(comps[j]);
  });

  std::vector<int> z = state.assignments;
  if (k > 1) {
    // Log-probabilities, K×N column-major so each observation is contiguous.
    Eigen::MatrixXd logp(k, n);
    const std::size_t chunks = (static_cast<std::size_t>(n) + kColumnChunk - 1) / kColumnChunk;
    parallel_for(static_cast<std::size_t>(k) * chunks, workers_, [&](std::size_t task) {
      const std::size_t j = task / chunks, c = task % chunks;
      const Index begin = static_cast<Index>(c * kColumnChunk);
      const Index end = std::min<Index>(n, begin + static_cast<Index>(kColumnChunk));
      std::vector<double> buf(static_cast<std::size_t>(end - begin));
      detail::loglik_columns(data_, dens[j], begin, end, buf.data());
      const double lw = std::log(weights[j]);
      for (Index i = begin; i < end; ++i)
        logp(static_cast<Index>(j), i) = lw + buf[static_cast<std::size_t>(i - begin)];
    });

    // Assignments are drawn jointly against the parameter snapshot. A draw
    // that would empty a component is discarded (the restricted conditional
    // keeps the component set fixed). Euclidean data stop at the first kept
    // draw of kAssignAttempts. With directions the mean direction of a
    // component is a function of its members, so every draw is a
    // Metropolis-Hastings proposal corrected for the moved mean directions,
    // and all kAssignAttempts steps are made.
    SweepState cur{std::move(logp), std::move(z), groups, {}}, next;
    std::vector<double> dir_var(static_cast<std::size_t>(k), 1.0);
    if (data_.directional())
      for (int j = 0; j < k; ++j) {
        cur.dir_means.push_back(dens[static_cast<std::size_t>(j)].dir_mean);
        dir_var[static_cast<std::size_t>(j)] = dens[static_cast<std::size_t>(j)].dir_var;
      }
    std::vector<int> proposal(cur.z);
    for (int attempt = 0; attempt < kAssignAttempts; ++attempt) {
      parallel_for(static_cast<std::size_t>(n), workers_, [&](std::size_t i) {
        if (frozen_[i]) return;
        Rng rng(stream_seed(seed, {iter, key(Stream::kAssign), static_cast<std::uint64_t>(attempt), i}));
        proposal[i] = sample_log_categorical(cur.logp.col(static_cast<Index>(i)).data(), k, rng.uniform());
      });
      std::vector<long> counts(static_cast<std::size_t>(k), 0);
      for (int zi : proposal) ++counts[static_cast<std::size_t>(zi)];
      if (!std::all_of(counts.begin(), counts.end(), [](long c) { return c > 0; })) continue;
      if (!data_.directional()) {
        cur.z = proposal;
        break;
      }
      if (proposal == cur.z) continue;
      Rng rng(stream_seed(seed, {iter, key(Stream::kSweepAccept), static_cast<std::uint64_t>(attempt)}));
      const double log_u = std::log(rng.uniform());
      if (log_u < sweep_log_ratio(cur, dir_var, proposal, next)) std::swap(cur, next);
      proposal = cur.z;
    }
    z = std::move(cur.z);
  }

  std::vector<long> counts(static_cast<std::size_t>(k), 0);
  for (int zi : z) ++counts[static_cast<std::size_t>(zi)];
  for (int j = 0; j < k; ++j) {
    comps[static_cast<std::size_t>(j)].weight = weights[static_cast<std::size_t>(j)];
    comps[static_cast<std::size_t>(j)].count = counts[static_cast<std::size_t>(j)];
  }
  state.assignments = std::move(z);
  state.components = std::move(comps);
}

Sampler::Launch Sampler::build_launch(std::span<const Index> set, const std::vector<char>& pinned, long iteration,
                                      std::uint64_t tag) const {
  const std::size_t m = set.size();
  const auto iter = static_cast<std::uint64_t>(iteration);
  const std::uint64_t seed = config_.seed;
  Launch launch;
  launch.group = two_means(launch_coordinates(data_, prior_, set), pinned);

  std::vector<Index> side[2];
  auto collect = [&] {
    side[0].clear();
    side[1].clear();
    for (std::size_t j = 0; j < m; ++j) side[launch.group[j] ? 1 : 0].push_back(set[j]);
    return !side[0].empty() && !side[1].empty();
  };
  // Hard-assignment refinement under posterior-mean parameters.
  std::vector<double> la, lb;
  for (int scan = 0; scan < config_.launch_scans; ++scan) {
    if (!collect()) break;
    for (int g = 0; g < 2; ++g) {
      launch.density[g] = detail::make_density(detail::posterior_mean_component(data_, prior_, side[g]));
      launch.log_weight[g] = std::log(static_cast<double>(side[g].size()) / static_cast<double>(m));
    }
    launch_log_probs(launch, set, la, lb);
    bool changed = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (pinned[j]) continue;
      const char g = lb[j] > la[j] ? 1 : 0;
      changed = changed || g != launch.group[j];
      launch.group[j] = g;
    }
    if (!changed) break;
  }
  launch.degenerate = !collect();
  if (launch.degenerate) return launch;

  // Parameters of the final scan, drawn given the launch state.
  Rng wrng(stream_seed(seed, {iter, key(Stream::kProposal), tag, key(Stream::kFinalParams), 2}));
  const double ga = wrng.gamma(static_cast<double>(side[0].size()));
  const double gb = wrng.gamma(static_cast<double>(side[1].size()));
  launch.log_weight[0] = std::log(ga / (ga + gb));
  launch.log_weight[1] = std::log(gb / (ga + gb));
  for (int g = 0; g < 2; ++g) {
    Rng rng(stream_seed(seed, {iter, key(Stream::kProposal), tag, key(Stream::kFinalParams), static_cast<std::uint64_t>(g)}));
    launch.density[g] = detail::make_density(detail::sample_component(data_, prior_, side[g], rng));
  }
  return launch;
}

// Normalized log-probabilities of joining A or B under the launch's parameters.
void Sampler::launch_log_probs(const Launch& launch, std::span<const Index> set, std::vector<double>& log_a,
                               std::vector<double>& log_b) const {
  const std::size_t m = set.size();
  log_a.resize(m);
  log_b.resize(m);
  detail::loglik_indices(data_, launch.density[0], set, log_a.data());
  detail::loglik_indices(data_, launch.density[1], set, log_b.data());
  for (std::size_t j = 0; j < m; ++j) {
    const double a = launch.log_weight[0] + log_a[j];
    const double b = launch.log_weight[1] + log_b[j];
    const double norm = log_sum_exp2(a, b);
    log_a[j] = a - norm;
    log_b[j] = b - norm;
  }
}

ProposalOutcome Sampler::propose_split(MixtureState& state, std::uint64_t tag) const {
  ProposalOutcome out;
  out.kind = ProposalKind::kSplit;
  const auto groups = members(state);
  std::vector<int> eligible;
  for (std::size_t j = 0; j < groups.size(); ++j)
    if (split_eligible(groups[j])) eligible.push_back(static_cast<int>(j));
  if (eligible.empty()) return out;
  out.proposed = true;

  const auto iter = static_cast<std::uint64_t>(state.iteration);
  Rng rng(stream_seed(config_.seed, {iter, key(Stream::kProposal), tag, 1}));
  const int c = eligible[rng.below(eligible.size())];
  out.targets = {c};
  const auto& set = groups[static_cast<std::size_t>(c)];
  const std::size_t n = set.size();
  std::vector<char> pinned(n, 0);
  for (std::size_t j = 0; j < n; ++j) pinned[j] = frozen_[static_cast<std::size_t>(set[j])] ? 1 : 0;

  const Launch launch = build_launch(set, pinned, state.iteration, tag);
  Rng mode(stream_seed(config_.seed, {iter, key(Stream::kProposal), tag, 3}));
  const double u = mode.uniform();
  const bool uniform = u < kUniformSplit, single = !uniform && u < kUniformSplit + kSingleSplit;
  if (launch.degenerate && !uniform && !single) return out;
  std::vector<double> la, lb;
  if (!launch.degenerate) launch_log_probs(launch, set, la, lb);

  // Final scan.
  std::vector<char> split(n, 0);
  if (single) {
    std::vector<std::size_t> free;
    for (std::size_t j = 0; j < n; ++j)
      if (!pinned[j]) free.push_back(j);
    split[free[mode.below(free.size())]] = 1;
  } else {
    parallel_for(n, workers_, [&](std::size_t j) {
      if (pinned[j]) return;
      Rng r(stream_seed(config_.seed, {iter, key(Stream::kProposal), tag, key(Stream::kFinalAssign), j}));
      split[j] = std::log(r.uniform()) < (uniform ? -std::log(2.0) : la[j]) ? 0 : 1;
    });
  }
  std::vector<Index> side_a, side_b;
  for (std::size_t j = 0; j < n; ++j) (split[j] == 0 ? side_a : side_b).push_back(set[j]);
  if (side_a.empty() || side_b.empty()) return out;

  out.log_target_ratio = std::log(prior_.alpha) + log_cluster(side_a) + log_cluster(side_b) - log_cluster(set);
  out.log_q_forward = mixture_log_q(launch.degenerate, la, lb, split, pinned);
  out.log_q_reverse = 0.0;  // the two groups merge back in exactly one way

  // Reverse move: the merge must pick the new pair.
  auto split_groups = groups;
  split_groups[static_cast<std::size_t>(c)] = side_a;
  split_groups.push_back(side_b);
  const int new_label = static_cast<int>(groups.size());
  out.log_selection_ratio = merge_pair_log_prob(pair_weights(split_groups), c, new_label) +
                            std::log(static_cast<double>(eligible.size()));
  const double log_ratio = out.log_target_ratio + out.log_selection_ratio + out.log_q_reverse - out.log_q_forward;
  out.log_acceptance = std::isnan(log_ratio) ? kNegInf : std::min(0.0, log_ratio);
  out.accepted = std::log(rng.uniform()) < out.log_acceptance;
  if (!out.accepted) return out;

  for (auto i : side_b) state.assignments[static_cast<std::size_t>(i)] = new_label;
  const double total = static_cast<double>(data_.size());
  state.components[static_cast<std::size_t>(c)] = detail::posterior_mean_component(data_, prior_, side_a);
  state.components.push_back(detail::posterior_mean_component(data_, prior_, side_b));
  for (std::size_t j = 0; j < state.components.size(); ++j)
    state.components[j].weight = static_cast<double>(state.components[j].count) / total;
  return out;
}

ProposalOutcome Sampler::propose_merge(MixtureState& state, std::uint64_t tag) const {
  ProposalOutcome out;
  out.kind = ProposalKind::kMerge;
  const auto groups = members(state);
  if (groups.size() < 2) return out;
  const auto iter = static_cast<std::uint64_t>(state.iteration);
  Rng rng(stream_seed(config_.seed, {iter, key(Stream::kProposal), tag, 2}));
  const auto weights = pair_weights(groups);
  int c1 = -1, c2 = -1;
  if (!sample_merge_pair(weights, rng, c1, c2)) return out;
  out.proposed = true;
  out.targets = {c1, c2};
  const auto& g1 = groups[static_cast<std::size_t>(c1)];
  const auto& g2 = groups[static_cast<std::size_t>(c2)];

  // Side A keeps the pinned component (if any); its label survives the merge.
  int side_a_label = c1, side_b_label = c2;
  if (!all_new(g2)) std::swap(side_a_label, side_b_label);

  std::vector<Index> set;
  set.reserve(g1.size() + g2.size());
  std::merge(g1.begin(), g1.end(), g2.begin(), g2.end(), std::back_inserter(set));
  const std::size_t n = set.size();
  std::vector<char> pinned(n, 0), current(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto i = static_cast<std::size_t>(set[j]);
    pinned[j] = frozen_[i] ? 1 : 0;
    current[j] = state.assignments[i] == side_a_label ? 0 : 1;
  }

  const Launch launch = build_launch(set, pinned, state.iteration, tag);
  std::vector<double> la, lb;
  if (!launch.degenerate) launch_log_probs(launch, set, la, lb);
  out.log_target_ratio = log_cluster(set) - log_cluster(g1) - log_cluster(g2) - std::log(prior_.alpha);
  out.log_q_forward = 0.0;  // merging is deterministic
  out.log_q_reverse = mixture_log_q(launch.degenerate, la, lb, current, pinned);

  auto merged_groups = groups;
  merged_groups[static_cast<std::size_t>(side_a_label)] = set;
  merged_groups.erase(merged_groups.begin() + side_b_label);
  out.log_selection_ratio = -std::log(static_cast<double>(count_split_eligible(merged_groups))) -
                            merge_pair_log_prob(weights, c1, c2);
  const double log_ratio = out.log_target_ratio + out.log_selection_ratio + out.log_q_reverse - out.log_q_forward;
  out.log_acceptance = std::isnan(log_ratio) ? kNegInf : std::min(0.0, log_ratio);
  out.accepted = std::log(rng.uniform()) < out.log_acceptance;
  if (!out.accepted) return out;

  for (auto& z : state.assignments) {
    if (z == side_b_label) z = side_a_label;
    if (z > side_b_label) --z;
  }
  state.components[static_cast<std::size_t>(side_a_label)] = detail::posterior_mean_component(data_, prior_, set);
  state.components.erase(state.components.begin() + side_b_label);
  const double total = static_cast<double>(data_.size());
  for (auto& comp : state.components) comp.weight = static_cast<double>(comp.count) / total;
  return out;
}

MixtureState Sampler::run(MixtureState state) const {
  state.validate(static_cast<std::size_t>(data_.size()));
  state.seed = config_.seed;
  MixtureState best;
  double best_score = kNegInf;
  for (int t = 0; t < config_.iterations; ++t) {
    state.iteration = t;
    for (int p = 0; p < config_.proposals_per_iteration; ++p) {
      Rng coin(stream_seed(config_.seed, {static_cast<std::uint64_t>(t), key(Stream::kProposal),
                                          static_cast<std::uint64_t>(p), 0}));
      if (coin.uniform() < 0.5) propose_split(state, static_cast<std::uint64_t>(p));
      else propose_merge(state, static_cast<std::uint64_t>(p));
    }
    gibbs_sweep(state);
    if (config_.return_map) {
      const double score = log_posterior(state);
      if (score > best_score) {
        best_score = score;
        best = state;
      }
    }
  }
  if (config_.return_map) state = std::move(best);
  finalize(state);
  return state;
}

MixtureState run_damm(std::span<const AugmentedObservation> obs, const NiwPrior& prior, const SamplerConfig& config) {
  Sampler sampler(make_cluster_data(obs), prior, config);
  return sampler.run();
}

MixtureState run_incremental(const MixtureState& previous, std::span<const AugmentedObservation> old_obs,
                             std::span<const AugmentedObservation> new_obs, const NiwPrior& prior,
                             const SamplerConfig& config) {
  std::size_t old_valid = 0, new_valid = 0;
  for (const auto& o : old_obs) old_valid += o.valid() ? 1 : 0;
  for (const auto& o : new_obs) new_valid += o.valid() ? 1 : 0;
  previous.validate(old_valid);
  if (new_valid == 0) return previous;
  for (const auto& c : previous.components)
    if (!c.directional()) throw UsageError("run_incremental: previous components lack a directional block");

  std::vector<AugmentedObservation> all;
  all.reserve(old_valid + new_valid);
  for (const auto& o : old_obs)
    if (o.valid()) all.push_back(o);
  for (const auto& o : new_obs)
    if (o.valid()) all.push_back(o);

  std::vector<detail::Density> dens;
  std::vector<double> log_w;
  for (const auto& c : previous.components) {
    dens.push_back(detail::make_density(c));
    log_w.push_back(std::log(c.weight));
  }
  std::vector<int> z = previous.assignments;
  std::vector<bool> frozen(all.size(), false);
  std::fill(frozen.begin(), frozen.begin() + static_cast<std::ptrdiff_t>(old_valid), true);
  for (std::size_t i = old_valid; i < all.size(); ++i) {
    int best = 0;
    double best_ll = kNegInf;
    for (std::size_t k = 0; k < previous.components.size(); ++k) {
      const auto& c = previous.components[k];
      double ll = detail::gaussian_loglik(dens[k], all[i].position);
      const double r = sphere::detail::distance(c.dir_mean->coords(), all[i].direction->coords());
      ll += dens[k].dir_log_norm - 0.5 * r * r / c.dir_var;
      if (ll > best_ll) {
        best_ll = ll;
        best = static_cast<int>(k);
      }
    }
    z.push_back(best);
  }

  Sampler sampler(make_cluster_data(all), prior, config, std::move(frozen));
  auto state = sampler.state_from_assignments(std::move(z));
  return sampler.run(std::move(state));
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw UsageError("adjusted_rand_index: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  const int ka = *std::max_element(a.begin(), a.end()) + 1;
  const int kb = *std::max_element(b.begin(), b.end()) + 1;
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
  for (std::size_t i = 0; i < n; ++i) table(a[i], b[i]) += 1.0;
  auto pairs = [](double x) { return 0.5 * x * (x - 1.0); };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) index += pairs(table(i, j));
  for (int i = 0; i < ka; ++i) sum_a += pairs(table.row(i).sum());
  for (int j = 0; j < kb; ++j) sum_b += pairs(table.col(j).sum());
  const double expected = sum_a * sum_b / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace damm
