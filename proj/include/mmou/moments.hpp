#pragma once

#include <limits>
#include <span>
#include <vector>

#include "mmou/chain.hpp"
#include "mmou/model.hpp"

namespace mmou {

/// Transient moments of M(t) jointly with the background state.
///
/// per_state[i][k] is H_k(t_i) = E[M(t_i)^k ; X(t_i) = .] as a d-vector, for
/// k = 0..order (H_0 = p_t, H_1 = nu_t, H_2 = w_t). aggregate[i][k] = 1^T H_k.
struct MomentTable {
  int order = 0;
  std::vector<double> times;
  std::vector<std::vector<Vector>> per_state;
  std::vector<std::vector<double>> aggregate;

  double mean(std::size_t i) const { return aggregate[i][1]; }
  double variance(std::size_t i) const;
  const Vector& nu(std::size_t i) const { return per_state[i][1]; }
  const Vector& w(std::size_t i) const { return per_state[i][2]; }

  /// Throws NumericalError if normalization or variance nonnegativity fails.
  void check_invariants() const;
};

struct StationaryMoments {
  Vector nu_inf;
  Vector w_inf;
  double mu_inf = 0.0;
  double v_inf = 0.0;
  std::vector<Vector> higher;  ///< H_k(inf), k = 0..max(order, 2)
};

MomentTable transient_first_moment(const MmouSpec& spec, std::span<const double> times);
MomentTable transient_second_moment(const MmouSpec& spec, std::span<const double> times);

/// H_0..H_n via exp(A_n t) with the block lower-triangular generator A_n.
MomentTable higher_moments_transient(const MmouSpec& spec, int max_order,
                                     std::span<const double> times);

/// The block matrix A_n of size (n+1)d: diagonal blocks Q^T - k diag(gamma),
/// subdiagonal k diag(alpha), sub-subdiagonal k(k-1)/2 diag(sigma2).
Matrix moment_generator(const MmouSpec& spec, int max_order);

StationaryMoments stationary_moments(const MmouSpec& spec, int max_order);

struct MeanVariance {
  double mean = 0.0;
  double variance = 0.0;
};

/// Closed forms for equal gamma with the chain started in equilibrium; the
/// variance's chain term is an integral of p_ij(v) - pi_j against the
/// exponential kernel, evaluated by adaptive quadrature.
std::vector<MeanVariance> equal_gamma_closed_form(const MmouSpec& spec,
                                                  std::span<const double> times);

/// Cov(M(t), M(t + u)).
double covariance_lag(const MmouSpec& spec, double t, double u);

/// Smallest eigenvalue of D^T diag(pi) + diag(pi) D.
double nonneg_definite_check(const GeneratorMatrix& chain);

/// Cov(M_j(t), M_k(t)) for a multi-OU spec whose coordinates have
/// state-independent gamma and whose chain starts at pi. Pass
/// t = infinity for the stationary limit. Indices are zero-based.
double multi_transient_covariance(const MultiOuSpec& spec, int j, int k, double t);

struct TwoStateExample {
  double covariance = 0.0;
  double variance1 = 0.0;
  double variance2 = 0.0;
  double correlation = 0.0;
  /// |corr| when both sigma vectors vanish.
  double sigma0_correlation = 0.0;
};

/// Stationary closed forms for d = 2, J = 2 with per-coordinate scalar gamma.
/// Uses pi_1 = q21 / (q12 + q21).
TwoStateExample two_state_example(double q12, double q21,
                                  std::span<const MultiOuSpec::Coordinate> coords);

/// Stationary E[prod_j M_j^{k_j} ; X = i] for all i, by the mixed-moment recursion.
Vector multi_stationary_mixed_moments(const MultiOuSpec& spec, std::span<const int> orders);

/// Stationary E[M_j M_k] from the direct one-step formula (j != k).
double stationary_cross_moment(const MultiOuSpec& spec, int j, int k);

}  // namespace mmou
