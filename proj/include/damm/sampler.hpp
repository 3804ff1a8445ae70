#pragma once

// Hybrid MCMC for the mixture: instantiated-weight Gibbs sweeps whose
// assignment step runs in parallel, combined with split/merge
// Metropolis-Hastings proposals. A split launch state is a deterministic
// 2-means cut of the component refined by restricted hard-assignment scans;
// one random restricted scan from it produces the proposal. A small fraction
// of split proposals instead assign sides uniformly at random or split off a
// single point, so that every partition can be proposed.
//
// Target: p(z | data) ∝ α^K Π_k Γ(N_k) · M(X_k), the Dirichlet-process
// partition posterior with M the conjugate marginal likelihood.

#include <cstdint>
#include <span>
#include <vector>

#include "damm/model.hpp"

namespace damm {

struct MixtureState {
  std::vector<int> assignments;  // component index per (valid) observation
  std::vector<DammComponent> components;
  long iteration = 0;
  std::uint64_t seed = 0;

  int num_components() const noexcept { return static_cast<int>(components.size()); }

  // Throws UsageError unless every assignment names a live component, counts
  // match, and weights sum to one within 1e-9.
  void validate(std::size_t n) const;
};

enum class ProposalKind { kSplit, kMerge };

struct ProposalOutcome {
  ProposalKind kind = ProposalKind::kSplit;
  bool proposed = false;  // false when no eligible component/pair existed
  bool accepted = false;
  double log_acceptance = -1.0 / 0.0;  // min(0, log ratio)
  double log_target_ratio = 0.0;       // log π(z*) - log π(z)
  double log_q_forward = 0.0;          // log q(z* | z)
  double log_q_reverse = 0.0;          // log q(z | z*)
  // log of the reverse/forward probabilities of choosing the component(s)
  // and anchor observations; completes the Metropolis-Hastings ratio.
  double log_selection_ratio = 0.0;
  std::vector<int> targets;            // labels in the state before the move
};

struct SamplerConfig {
  int iterations = 100;
  int launch_scans = 5;  // refinement scans of the launch state
  int proposals_per_iteration = 1;
  std::uint64_t seed = 0;
  int workers = 0;          // 0: DAMM_WORKERS or hardware concurrency
  bool return_map = false;  // return the best-scoring visited state instead of the last

  void validate() const;
};

class Sampler {
 public:
  // `frozen` (optional) marks observations whose assignment may never change.
  Sampler(ClusterData data, NiwPrior prior, SamplerConfig config, std::vector<bool> frozen = {});

  const ClusterData& data() const noexcept { return data_; }
  const NiwPrior& prior() const noexcept { return prior_; }
  const SamplerConfig& config() const noexcept { return config_; }

  // Every observation in one component.
  MixtureState initial_state() const;

  // State from labels in [0, K); components get posterior-mean parameters.
  MixtureState state_from_assignments(std::vector<int> assignments) const;

  // One instantiated-weight sweep: π ~ Dir(N_1..N_K), parameters from their
  // posteriors (parallel over components), assignments from the categorical
  // (parallel over observations, per-index streams).
  void gibbs_sweep(MixtureState& state) const;

  // Split/merge Metropolis-Hastings moves. `tag` separates the random
  // streams of several proposals within one iteration. A rejected proposal
  // leaves `state` untouched.
  ProposalOutcome propose_split(MixtureState& state, std::uint64_t tag = 0) const;
  ProposalOutcome propose_merge(MixtureState& state, std::uint64_t tag = 0) const;

  // Algorithm loop from `state`: per iteration one split-or-merge coin flip
  // and one Gibbs sweep.
  MixtureState run(MixtureState state) const;
  MixtureState run() const { return run(initial_state()); }

  // log π(z) up to an additive constant.
  double log_posterior(const MixtureState& state) const;

  // Replaces component parameters with posterior means and weights with N_k/N.
  void finalize(MixtureState& state) const;

 private:
  struct Launch;

  std::vector<std::vector<Eigen::Index>> members(const MixtureState& state) const;
  bool all_new(std::span<const Eigen::Index> members) const;
  bool split_eligible(std::span<const Eigen::Index> members) const;
  int count_split_eligible(const std::vector<std::vector<Eigen::Index>>& groups) const;
  // Merge pairs are drawn by picking a component uniformly, then a partner
  // with probability proportional to 1 / (squared distance of empirical means).
  std::vector<std::vector<double>> pair_weights(const std::vector<std::vector<Eigen::Index>>& groups) const;
  double merge_pair_log_prob(const std::vector<std::vector<double>>& weights, int a, int b) const;
  bool sample_merge_pair(const std::vector<std::vector<double>>& weights, Rng& rng, int& a, int& b) const;
  Launch build_launch(std::span<const Eigen::Index> set, const std::vector<char>& pinned, long iteration,
                      std::uint64_t tag) const;
  void launch_log_probs(const Launch& launch, std::span<const Eigen::Index> set, std::vector<double>& log_a,
                        std::vector<double>& log_b) const;
  bool pair_eligible(std::span<const Eigen::Index> a, std::span<const Eigen::Index> b) const;
  double log_cluster(std::span<const Eigen::Index> members) const;
  // Assignment log-probabilities (K×N) of a sweep with the mean directions
  // of the current members.
  struct SweepState {
    Eigen::MatrixXd logp;
    std::vector<int> z;
    std::vector<std::vector<Eigen::Index>> members;
    std::vector<Eigen::VectorXd> dir_means;
  };
  // Log Metropolis-Hastings ratio of a directional sweep proposal; fills
  // `next` with the proposal's log-probabilities.
  double sweep_log_ratio(const SweepState& cur, const std::vector<double>& dir_var, const std::vector<int>& proposal,
                         SweepState& next) const;

  ClusterData data_;
  NiwPrior prior_;
  SamplerConfig config_;
  std::vector<bool> frozen_;
  int workers_;
  double pair_floor_ = 0.0;  // keeps pair weights finite for coincident means
};

// DAMM clustering of the valid observations.
MixtureState run_damm(std::span<const AugmentedObservation> obs, const NiwPrior& prior, const SamplerConfig& config);

// Clusters `new_obs` against a previous state over `old_obs`: old assignments
// are frozen, new points start at the most likely existing component, and
// only components containing new points are split or merged. Returns a state
// over old followed by new valid observations.
MixtureState run_incremental(const MixtureState& previous, std::span<const AugmentedObservation> old_obs,
                             std::span<const AugmentedObservation> new_obs, const NiwPrior& prior,
                             const SamplerConfig& config);

// Adjusted Rand index between two labelings of equal length.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace damm
