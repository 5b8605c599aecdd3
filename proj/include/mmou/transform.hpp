#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmou/model.hpp"

namespace mmou {

/// g_i(theta, t) = E exp(-theta M(t)) 1{X(t) = i} on a (theta, t) grid.
/// values[a][b] and std_error[a][b] are d-vectors at (theta_grid[a], time_grid[b]).
struct TransformSurface {
  std::vector<double> theta_grid;
  std::vector<double> time_grid;
  std::vector<std::vector<Vector>> values;
  std::vector<std::vector<Vector>> std_error;

  const Vector& at(std::size_t a, std::size_t b) const { return values[a][b]; }
};

/// Rao-Blackwellized estimate: the Brownian part is integrated out per path,
/// leaving exp(-theta mu_path + theta^2 v_path / 2) 1{X(t) = i}. Requires n >= 100.
TransformSurface estimate_transform(const MmouSpec& spec, std::span<const double> theta_grid,
                                    std::span<const double> time_grid, std::size_t n,
                                    std::uint64_t seed, int threads);

/// Crude estimate averaging exp(-theta M(t)) 1{X(t) = i} over exact draws of
/// M(t). Shares the chain paths of estimate_transform for equal seeds.
TransformSurface crude_transform(const MmouSpec& spec, std::span<const double> theta_grid,
                                 std::span<const double> time_grid, std::size_t n,
                                 std::uint64_t seed, int threads);

/// Closed-form surface for d = 1 (a plain OU process).
TransformSurface ou_transform_surface(const MmouSpec& spec, std::span<const double> theta_grid,
                                      std::span<const double> time_grid);

/// Residual of dg/dt = Q^T g - (theta diag(alpha) - theta^2/2 diag(sigma2)) g
///                     - theta diag(gamma) dg/dtheta
/// at interior nodes, using three-point central differences on possibly
/// nonuniform grids. se[a][b] propagates the surface std_error through the same
/// linear stencil assuming independent cells.
struct ResidualGrid {
  std::vector<double> theta;
  std::vector<double> time;
  std::vector<std::vector<Vector>> residual;
  std::vector<std::vector<Vector>> se;

  double max_abs() const;
};

ResidualGrid pde_residual(const TransformSurface& surface, const MmouSpec& spec);

/// Largest |residual| of `coarse` over the largest |residual| of `fine` at the
/// same physical nodes; `fine` must be the midpoint refinement of `coarse`.
/// Near 4 for a second-order scheme.
double halving_ratio(const ResidualGrid& coarse, const ResidualGrid& fine);

/// Two-state chain with state 1 absorbing (q1 = 0) and the process started in
/// state 2 at m0. Indices in the vectors are states 1 and 2.
struct AbsorbingParams {
  double q1 = 0.0;
  double q2 = 1.0;
  Vector alpha;
  Vector gamma;
  Vector sigma2;
  double m0 = 0.0;

  /// The matching spec on the chain [[0, 0], [q2, -q2]] with p0 = (0, 1).
  MmouSpec spec() const;
};

struct AbsorbingTransform {
  double g1 = 0.0;
  double g2 = 0.0;
};

AbsorbingTransform absorbing_two_state_transform(const AbsorbingParams& params, double theta,
                                                 double t);
TransformSurface absorbing_transform_surface(const AbsorbingParams& params,
                                             std::span<const double> theta_grid,
                                             std::span<const double> time_grid);

/// Transform at an independent Exponential(tau) time T and the residual of
///   tau (g - E exp(-theta M(0)) p0) = Q^T g - (theta diag(alpha) - theta^2/2 diag(sigma2)) g
///                                     - theta diag(gamma) g'
/// on interior theta nodes.
struct KilledTimeResult {
  std::vector<double> theta;
  std::vector<Vector> values;
  std::vector<Vector> std_error;
  std::vector<double> residual_theta;
  std::vector<Vector> residual;
  std::vector<Vector> residual_se;
};

KilledTimeResult killed_time_residual(const MmouSpec& spec, double tau,
                                      std::span<const double> theta_grid, std::size_t n,
                                      std::uint64_t seed, int threads);

/// Coefficients of the K = 2 system for vec(G), G_ik = g_{i,k}:
///   d vec(G)/dt = base vec(G) + theta1 * drift1 d vec(G)/dtheta1 + theta2 * drift2 d vec(G)/dtheta2
/// with base = (Q^T (+) Q^T) - theta1 (I x diag a) - theta2 (diag a x I)
///             + theta1^2/2 (I x diag s2) + theta2^2/2 (diag s2 x I),
/// drift1 = -(I x diag g) and drift2 = -(diag g x I).
struct K2Operator {
  Matrix base;
  Matrix drift1;
  Matrix drift2;
};

K2Operator kronecker_k2_operator(const MmouSpec& spec, double theta1, double theta2);

/// G_ik(theta1, theta2, t) = E exp(-theta1 M(t) - theta2 M(t + lag)) 1{X(t) = i, X(t + lag) = k},
/// stored as vec(G) (column-major, index i + d k). Estimated per path from
/// conditional_joint, so d = 1 is exact with a single path.
struct JointTransformGrid {
  std::vector<double> theta1;
  std::vector<double> theta2;
  std::vector<double> time;
  double lag = 0.0;
  /// values[a][b][c] at (theta1[a], theta2[b], time[c]).
  std::vector<std::vector<std::vector<Vector>>> values;
};

JointTransformGrid joint_transform_surface(const MmouSpec& spec, double lag,
                                           std::span<const double> theta1,
                                           std::span<const double> theta2,
                                           std::span<const double> time, std::size_t n,
                                           std::uint64_t seed, int threads);

/// Same layout as JointTransformGrid for two independent copies of the
/// process: G_ik = g_i(theta1, t) g_k(theta2, t).
JointTransformGrid independent_pair_surface(const TransformSurface& first,
                                            const TransformSurface& second);

/// Residual of the K = 2 system on interior nodes; norm[a][b][c] is the
/// largest |entry| of the residual vector there.
struct K2Residual {
  std::vector<double> theta1;
  std::vector<double> theta2;
  std::vector<double> time;
  std::vector<std::vector<std::vector<double>>> norm;

  double max_abs() const;
};

K2Residual k2_residual(const JointTransformGrid& grid, const MmouSpec& spec);
double k2_max_residual(const JointTransformGrid& grid, const MmouSpec& spec);
double halving_ratio(const K2Residual& coarse, const K2Residual& fine);

/// Central differences of the Rao-Blackwell estimator at theta = 0 with step
/// delta, per state. Standard errors come from the per-path difference quotients.
struct TransformDerivatives {
  Vector first;
  Vector first_se;
  Vector second;
  Vector second_se;
};

TransformDerivatives transform_derivatives_at_zero(const MmouSpec& spec, double t, double delta,
                                                   std::size_t n, std::uint64_t seed,
                                                   int threads);

}  // namespace mmou
