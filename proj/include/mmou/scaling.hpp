#pragma once

#include <cstdint>
#include <vector>

#include "mmou/model.hpp"

namespace mmou {

/// Q -> N Q, alpha -> N^h alpha, sigma2 -> N^h sigma2; the initial law and p0
/// are kept.
MmouSpec scale_spec(const MmouSpec& base, double n_scale, double h);

/// beta = max(h / 2, h - 1 / 2).
double scaling_beta(double h);

/// rho(t) = e^{-g t} rho(0) + (a / g)(1 - e^{-g t}) with a = pi^T alpha,
/// g = pi^T gamma and rho(0) = 1{h = 0} E M(0).
double rho_profile(const MmouSpec& base, double h, double t);

struct VProfile {
  double value = 0.0;       ///< V(t)
  double derivative = 0.0;  ///< V'(t)
};

/// V'(s) = (alpha - gamma rho(s))^T (diag(pi) D + D^T diag(pi)) (alpha - gamma rho(s)).
VProfile v_profile(const MmouSpec& base, double h, double t);

/// Variance of the limit law at t:
///   int_0^t e^{-2 g (t - s)} (sigma2_inf 1{h <= 1} + V'(s) 1{h >= 1}) ds,
/// plus sd^2 e^{-2 g t} from a Normal initial law when h = 0.
double limit_variance(const MmouSpec& base, double h, double t);

/// Large-N variance of the scaled process for equal gamma and p0 = pi:
///   (1 - e^{-2 g t}) / (2 g) (N^h pi^T sigma2 + 2 N^{2h - 1} alpha^T diag(pi) D alpha).
double pd_asymptotic_variance(const MmouSpec& base, double n_scale, double h, double t);

struct ScalingConfig {
  MmouSpec base;
  double n_scale = 1.0;
  double h = 0.0;
  double t_eval = 1.0;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ScalingReport {
  double n_scale = 1.0;
  double h = 0.0;
  double beta = 0.0;
  double t_eval = 1.0;
  double rho = 0.0;
  /// N^{-beta} (M(t) - N^h rho(t)) per path.
  std::vector<double> samples;
  double limit_variance = 0.0;
  double ks_statistic = 0.0;
  double ks_p = 0.0;
  /// h = 0 only: M(t) itself against Normal(rho(t), limit variance).
  double uncentered_ks_statistic = 0.0;
  double uncentered_ks_p = 0.0;
  /// Sample variance of the unnormalized M(t) and its standard error.
  double empirical_variance = 0.0;
  double empirical_variance_se = 0.0;
  /// NaN unless the base spec has equal gamma and p0 = pi.
  double predicted_pd_variance = 0.0;
};

/// Exact terminal samples of the scaled spec, normalized and KS-tested
/// against Normal(0, limit_variance). Requires n_paths >= 1000.
ScalingReport run_clt_experiment(const ScalingConfig& cfg);

}  // namespace mmou
