#pragma once

#include <string>
#include <vector>

#include "mmou/linalg.hpp"
#include "mmou/random.hpp"

namespace mmou {

/// Validated rate matrix of a finite continuous-time Markov chain.
///
/// Off-diagonal entries must be nonnegative. The diagonal is always
/// recomputed as minus the off-diagonal row sum; a row whose input sum
/// deviated by more than 1e-12 * max|q_ij| is recorded in warnings().
/// Irreducibility is required unless the chain is built with
/// `allow_absorbing`, which only the absorbing two-state transform uses.
class GeneratorMatrix {
 public:
  struct Options {
    bool allow_absorbing = false;
  };

  explicit GeneratorMatrix(const Matrix& q) : GeneratorMatrix(q, Options{}) {}
  GeneratorMatrix(const Matrix& q, Options options);

  static GeneratorMatrix with_absorbing_states(const Matrix& q) {
    return GeneratorMatrix(q, Options{.allow_absorbing = true});
  }

  int states() const { return static_cast<int>(q_.rows()); }
  const Matrix& rates() const { return q_; }
  /// Total exit rate q_i of state i.
  double exit_rate(int i) const { return -q_(i, i); }
  bool irreducible() const { return irreducible_; }
  bool allows_absorbing() const { return allow_absorbing_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Off-diagonal rates out of state i (zero at position i).
  const std::vector<double>& jump_weights(int i) const { return jump_weights_[i]; }

  /// The chain with every rate multiplied by `factor` (> 0).
  GeneratorMatrix scaled(double factor) const;

 private:
  Matrix q_;
  bool irreducible_ = false;
  bool allow_absorbing_ = false;
  std::vector<std::string> warnings_;
  std::vector<std::vector<double>> jump_weights_;
};

/// Stationary law together with the ergodic, fundamental and deviation matrices.
struct DeviationSet {
  Vector pi;
  Matrix ergodic;      ///< 1 pi^T
  Matrix fundamental;  ///< (Pi - Q)^{-1}
  Matrix deviation;    ///< F - Pi
};

/// Piecewise-constant trajectory of the background chain on [0, horizon].
/// States are zero-based.
struct CtmcPath {
  int initial_state = 0;
  std::vector<double> jump_times;
  std::vector<int> post_jump_states;
  double horizon = 0.0;

  int state_at(double t) const;
  std::size_t jumps() const { return jump_times.size(); }

  /// Calls fn(state, segment_start, segment_end) for each constant piece of [0, t].
  template <class Fn>
  void for_each_segment(double t, Fn&& fn) const {
    double start = 0.0;
    int state = initial_state;
    for (std::size_t k = 0; k < jump_times.size() && jump_times[k] < t; ++k) {
      fn(state, start, jump_times[k]);
      start = jump_times[k];
      state = post_jump_states[k];
    }
    if (t > start) fn(state, start, t);
  }
};

/// Throws ValidationError unless `path` satisfies the CtmcPath invariants for d states.
void validate_path(const CtmcPath& path, int states);

/// Throws ValidationError unless `p` is a probability vector of length d (1e-10 slack).
void validate_probability(const Vector& p, int states, const std::string& name);

Vector stationary_distribution(const GeneratorMatrix& g);
Vector transient_distribution(const GeneratorMatrix& g, const Vector& p0, double t);
DeviationSet deviation_set(const GeneratorMatrix& g);

/// D(gamma) = (gamma I - Q)^{-1} - Pi / gamma for gamma > 0.
Matrix resolvent_deviation(const GeneratorMatrix& g, double gamma);

/// Exact path sampling: initial state ~ p0, Exponential(q_i) holding times,
/// next state j with probability q_ij / q_i. Absorbing states end the jumps.
CtmcPath sample_path(const GeneratorMatrix& g, const Vector& p0, double horizon, Stream& rng);

/// Integral over [0, t] of weights[X(s)] ds.
double occupation_integral(const CtmcPath& path, const Vector& weights, double t);

}  // namespace mmou
