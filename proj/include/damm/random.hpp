#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace damm {

// SplitMix64 finalizer; also used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed of the stream identified by (master, keys...). Streams are keyed by
// position in the computation (iteration, phase, index), never by thread,
// so results do not depend on the worker count.
std::uint64_t stream_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept;

// Tags separating the random streams consumed by the sampler.
enum class Stream : std::uint64_t {
  kWeights = 1,
  kParams,
  kAssign,
  kProposal,
  kFinalParams,
  kFinalAssign,
  kInit,
  kSweepAccept,
};

constexpr std::uint64_t key(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

// Counter-based generator (SplitMix64 sequence). Satisfies
// UniformRandomBitGenerator, so std:: distributions can be driven by it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this); }

  double normal() { return normal_(*this); }

  // Gamma with the given shape and unit scale.
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(*this); }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace damm
