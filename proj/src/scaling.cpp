#include "mmou/scaling.hpp"

#include <cmath>
#include <limits>

#include "mmou/errors.hpp"
#include "mmou/linalg.hpp"
#include "mmou/stats.hpp"

namespace mmou {

namespace {

void check_scale(double n_scale, double h) {
  if (!(n_scale >= 1.0) || !std::isfinite(n_scale)) throw DomainError("scale N must be >= 1");
  if (!(h >= 0.0) || !std::isfinite(h)) throw DomainError("scale exponent h must be >= 0");
}

struct Averages {
  Vector pi;
  double alpha = 0.0;
  double gamma = 0.0;
  double sigma2 = 0.0;
};

Averages averages(const MmouSpec& base) {
  Averages a;
  a.pi = stationary_distribution(base.chain);
  a.alpha = a.pi.dot(base.alpha);
  a.gamma = a.pi.dot(base.gamma);
  a.sigma2 = a.pi.dot(base.sigma2);
  return a;
}

/// diag(pi) D + D^T diag(pi).
Matrix symmetrized_deviation(const MmouSpec& base) {
  const DeviationSet dev = deviation_set(base.chain);
  const Matrix weighted = dev.pi.asDiagonal() * dev.deviation;
  return weighted + weighted.transpose();
}

}  // namespace

MmouSpec scale_spec(const MmouSpec& base, double n_scale, double h) {
  check_scale(n_scale, h);
  const double factor = std::pow(n_scale, h);
  return MmouSpec(base.chain.scaled(n_scale), base.alpha * factor, base.gamma,
                  base.sigma2 * factor, base.initial, base.p0);
}

double scaling_beta(double h) { return std::max(0.5 * h, h - 0.5); }

double rho_profile(const MmouSpec& base, double h, double t) {
  if (!(t >= 0.0)) throw DomainError("rho_profile: t must be >= 0");
  const Averages avg = averages(base);
  const double start = h == 0.0 ? base.initial.mean : 0.0;
  return start * std::exp(-avg.gamma * t) - (avg.alpha / avg.gamma) * std::expm1(-avg.gamma * t);
}

VProfile v_profile(const MmouSpec& base, double h, double t) {
  if (!(t >= 0.0)) throw DomainError("v_profile: t must be >= 0");
  const Matrix sym = symmetrized_deviation(base);
  const Averages avg = averages(base);
  const double start = h == 0.0 ? base.initial.mean : 0.0;
  auto rate = [&](double s) {
    const double rho =
        start * std::exp(-avg.gamma * s) - (avg.alpha / avg.gamma) * std::expm1(-avg.gamma * s);
    const Vector drift = base.alpha - base.gamma * rho;
    return drift.dot(sym * drift);
  };
  VProfile out;
  out.derivative = rate(t);
  out.value = t == 0.0 ? 0.0 : linalg::quad(rate, 0.0, t, 1e-10);
  return out;
}

double limit_variance(const MmouSpec& base, double h, double t) {
  if (!(t >= 0.0)) throw DomainError("limit_variance: t must be >= 0");
  if (!(h >= 0.0)) throw DomainError("limit_variance: h must be >= 0");
  const Averages avg = averages(base);
  const double g = avg.gamma;
  double total = 0.0;
  if (h <= 1.0) total += -avg.sigma2 / (2.0 * g) * std::expm1(-2.0 * g * t);
  if (h >= 1.0 && t > 0.0) {
    const Matrix sym = symmetrized_deviation(base);
    const double start = h == 0.0 ? base.initial.mean : 0.0;
    auto integrand = [&](double s) {
      const double rho = start * std::exp(-g * s) - (avg.alpha / g) * std::expm1(-g * s);
      const Vector drift = base.alpha - base.gamma * rho;
      return std::exp(-2.0 * g * (t - s)) * drift.dot(sym * drift);
    };
    total += linalg::quad(integrand, 0.0, t, 1e-10);
  }
  if (h == 0.0) total += base.initial.sd * base.initial.sd * std::exp(-2.0 * g * t);
  return total;
}

double pd_asymptotic_variance(const MmouSpec& base, double n_scale, double h, double t) {
  check_scale(n_scale, h);
  if (!(t >= 0.0)) throw DomainError("pd_asymptotic_variance: t must be >= 0");
  if (!base.equal_gamma()) {
    throw ApplicabilityError("pd_asymptotic_variance requires gamma_i equal across states");
  }
  const DeviationSet dev = deviation_set(base.chain);
  if ((base.p0 - dev.pi).cwiseAbs().maxCoeff() > 1e-10) {
    throw ApplicabilityError("pd_asymptotic_variance requires p0 = pi");
  }
  const double g = base.gamma(0);
  const double quadratic = dev.pi.cwiseProduct(base.alpha).dot(dev.deviation * base.alpha);
  return -std::expm1(-2.0 * g * t) / (2.0 * g) *
         (std::pow(n_scale, h) * dev.pi.dot(base.sigma2) +
          2.0 * std::pow(n_scale, 2.0 * h - 1.0) * quadratic);
}

ScalingReport run_clt_experiment(const ScalingConfig& cfg) {
  check_scale(cfg.n_scale, cfg.h);
  if (cfg.n_paths < 1000) throw ApplicabilityError("CLT experiment needs n_paths >= 1000");
  if (!(cfg.t_eval > 0.0) || !std::isfinite(cfg.t_eval)) {
    throw DomainError("CLT experiment: t_eval must be positive");
  }
  ScalingReport r;
  r.n_scale = cfg.n_scale;
  r.h = cfg.h;
  r.beta = scaling_beta(cfg.h);
  r.t_eval = cfg.t_eval;
  r.rho = rho_profile(cfg.base, cfg.h, cfg.t_eval);
  r.limit_variance = limit_variance(cfg.base, cfg.h, cfg.t_eval);

  const MmouSpec scaled = scale_spec(cfg.base, cfg.n_scale, cfg.h);
  const TerminalSamples draws =
      simulate_terminal(scaled, cfg.t_eval, cfg.n_paths, cfg.seed, cfg.threads);
  const double centre = std::pow(cfg.n_scale, cfg.h) * r.rho;
  const double norm = std::pow(cfg.n_scale, -r.beta);
  r.samples.reserve(draws.values.size());
  for (double m : draws.values) r.samples.push_back(norm * (m - centre));

  const auto ks = stats::ks_normal(r.samples, 0.0, r.limit_variance);
  r.ks_statistic = ks.statistic;
  r.ks_p = ks.p_value;
  if (cfg.h == 0.0) {
    const auto raw = stats::ks_normal(draws.values, r.rho, r.limit_variance);
    r.uncentered_ks_statistic = raw.statistic;
    r.uncentered_ks_p = raw.p_value;
  } else {
    r.uncentered_ks_statistic = std::numeric_limits<double>::quiet_NaN();
    r.uncentered_ks_p = std::numeric_limits<double>::quiet_NaN();
  }

  const auto summary = stats::summarize(draws.values);
  r.empirical_variance = summary.variance;
  r.empirical_variance_se = summary.se_variance;
  try {
    r.predicted_pd_variance = pd_asymptotic_variance(cfg.base, cfg.n_scale, cfg.h, cfg.t_eval);
  } catch (const ApplicabilityError&) {
    r.predicted_pd_variance = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace mmou
