#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmou/chain.hpp"
#include "mmou/linalg.hpp"

namespace mmou {

/// Law of M(0): Normal(mean, sd^2); sd == 0 is a point mass at `mean`.
struct InitialLaw {
  double mean = 0.0;
  double sd = 0.0;

  bool is_point() const { return sd == 0.0; }
  /// E M(0)^k.
  double moment(int k) const;
};

/// Per-state OU parameters of a Markov-modulated OU process:
///   dM = (alpha_X - gamma_X M) dt + sigma_X dB.
struct MmouSpec {
  MmouSpec(GeneratorMatrix chain, Vector alpha, Vector gamma, Vector sigma2, InitialLaw initial,
           Vector p0);

  /// Same parameters with the chain started from its stationary law.
  static MmouSpec stationary_start(GeneratorMatrix chain, Vector alpha, Vector gamma,
                                   Vector sigma2, InitialLaw initial = {});

  int states() const { return chain.states(); }
  bool equal_gamma(double rel_tol = 1e-12) const;

  GeneratorMatrix chain;
  Vector alpha;
  Vector gamma;
  Vector sigma2;
  InitialLaw initial;
  Vector p0;
};

/// J OU coordinates modulated by one chain, driven by independent Brownian motions.
struct MultiOuSpec {
  struct Coordinate {
    Vector alpha;
    Vector gamma;
    Vector sigma2;
    InitialLaw initial;
  };

  MultiOuSpec(GeneratorMatrix chain, std::vector<Coordinate> coords, Vector p0);

  int states() const { return chain.states(); }
  int dimension() const { return static_cast<int>(coords.size()); }
  /// Marginal single-coordinate spec of coordinate j (zero-based).
  MmouSpec coordinate(int j) const;

  GeneratorMatrix chain;
  std::vector<Coordinate> coords;
  Vector p0;
};

/// Law of M(t) given the chain path: Normal(mean, variance).
struct ConditionalGaussian {
  double mean = 0.0;
  double variance = 0.0;
};

/// Law of (M(t1), M(t2)) given the chain path.
struct ConditionalJoint {
  ConditionalGaussian first;
  ConditionalGaussian second;
  double covariance = 0.0;
};

ConditionalGaussian conditional_moments(const MmouSpec& spec, const CtmcPath& path, double t);
ConditionalJoint conditional_joint(const MmouSpec& spec, const CtmcPath& path, double t1,
                                   double t2);

struct TerminalSamples {
  std::vector<double> values;
  std::vector<int> states;  ///< X(t) per sample, zero-based
};

/// Exact draws of M(t) on given paths; path k uses Gaussian substream k of `seed`.
TerminalSamples sample_terminal(const MmouSpec& spec, std::span<const CtmcPath> paths, double t,
                                std::uint64_t seed);

/// Samples n chain paths and exact terminal values. Path k uses substreams k of `seed`.
TerminalSamples simulate_terminal(const MmouSpec& spec, double t, std::size_t n,
                                  std::uint64_t seed, int threads);

/// Exact joint draws of (M(t_1), ..., M(t_T)) along n paths; rows are paths.
struct PathSamples {
  std::vector<double> times;
  Matrix values;                          ///< n x T
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> states;  ///< n x T
};
PathSamples simulate_paths(const MmouSpec& spec, std::span<const double> times, std::size_t n,
                           std::uint64_t seed, int threads);

/// Euler-Maruyama with the chain sampled exactly and its jump epochs inserted
/// into the time grid. Requires 0 < dt < 0.5 / max gamma_i.
TerminalSamples simulate_euler(const MmouSpec& spec, double t, double dt, std::size_t n,
                               std::uint64_t seed, int threads);

struct MultiTerminalSamples {
  Matrix values;  ///< n x J
  std::vector<int> states;
};

/// Coordinates are drawn independently given the path (conditional covariance is zero).
MultiTerminalSamples sample_multi_terminal(const MultiOuSpec& spec,
                                           std::span<const CtmcPath> paths, double t,
                                           std::uint64_t seed);
MultiTerminalSamples simulate_multi_terminal(const MultiOuSpec& spec, double t, std::size_t n,
                                             std::uint64_t seed, int threads);

namespace detail {

/// Flow of the conditional mean/variance over [from, to] along `path`, starting
/// from `state`. Returns Gamma(to) - Gamma(from) through `log_decay`.
ConditionalGaussian propagate(const Vector& alpha, const Vector& gamma, const Vector& sigma2,
                              const CtmcPath& path, double from, double to,
                              ConditionalGaussian state, double* log_decay = nullptr);

}  // namespace detail

}  // namespace mmou
