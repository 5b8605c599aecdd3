#include "mmou/moments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>

#include "mmou/errors.hpp"

namespace mmou {

namespace {

Matrix diag(const Vector& v) { return v.asDiagonal(); }

/// Q^T - scale * diag(gamma).
Matrix shifted_generator(const GeneratorMatrix& chain, const Vector& gamma, double scale) {
  return chain.rates().transpose() - scale * diag(gamma);
}

void check_times(std::span<const double> times) {
  if (times.empty()) throw DomainError("moment engine: empty time grid");
  for (double t : times) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw DomainError("moment engine: times must be finite and nonnegative");
    }
  }
}

bool starts_in_equilibrium(const MmouSpec& spec, const Vector& pi, double tol = 1e-10) {
  return (spec.p0 - pi).cwiseAbs().maxCoeff() <= tol;
}

/// Natural size of M: the largest per-state equilibrium level or spread and
/// the initial law. Moment blocks are rescaled by powers of it so that exp()
/// sees a balanced matrix when alpha or sigma2 are large.
double moment_scale(const MmouSpec& spec) {
  double s = std::max(1.0, std::abs(spec.initial.mean) + spec.initial.sd);
  for (int i = 0; i < spec.states(); ++i) {
    s = std::max(s, std::abs(spec.alpha(i)) / spec.gamma(i));
    s = std::max(s, std::sqrt(spec.sigma2(i) / (2.0 * spec.gamma(i))));
  }
  return s;
}

/// exp(A t) x0 for a stacked system whose block k holds k-th moments,
/// computed as S exp(S^{-1} A S t) S^{-1} x0 with S = blockdiag(scale^k I).
Vector stacked_flow(const Matrix& generator, const Vector& start, int d, double scale, double t) {
  const auto blocks = generator.rows() / d;
  Vector powers(generator.rows());
  for (Eigen::Index k = 0; k < blocks; ++k) powers.segment(k * d, d).setConstant(std::pow(scale, k));
  const Matrix balanced =
      powers.cwiseInverse().asDiagonal() * generator * powers.asDiagonal();
  return powers.cwiseProduct(linalg::expm(balanced, t) * start.cwiseQuotient(powers));
}

MomentTable table_from_stacked(const Matrix& generator, const Vector& start, int order, int d,
                               double scale, std::span<const double> times) {
  MomentTable table;
  table.order = order;
  table.times.assign(times.begin(), times.end());
  for (double t : times) {
    const Vector x = stacked_flow(generator, start, d, scale, t);
    std::vector<Vector> blocks;
    std::vector<double> sums;
    for (int k = 0; k <= order; ++k) {
      blocks.push_back(x.segment(k * d, d));
      sums.push_back(blocks.back().sum());
    }
    table.per_state.push_back(std::move(blocks));
    table.aggregate.push_back(std::move(sums));
  }
  table.check_invariants();
  return table;
}

/// Integral over v in [0, t] of
///   (e^{-gb v} - e^{-(ga + gb) t + ga v}) a^T diag(pi) (P(v) - Pi) b.
/// The integrand is bounded by 2 e^{-gb v} |...|, so the range is cut where
/// e^{-gb v} < 1e-16.
double deviation_kernel_integral(const GeneratorMatrix& chain, const Vector& pi, double ga,
                                 double gb, double t, const Vector& a, const Vector& b) {
  const Matrix& q = chain.rates();
  const Matrix ergodic = Vector::Ones(pi.size()) * pi.transpose();
  const Vector left = pi.cwiseProduct(a);
  const double upper = std::min(t, 37.0 / gb);
  const double scale = std::max(1.0, left.cwiseAbs().sum() * b.cwiseAbs().maxCoeff());
  auto integrand = [&](double v) {
    const double kernel = std::exp(-gb * v) - std::exp(-(ga + gb) * t + ga * v);
    const Matrix centered = linalg::expm(q, v) - ergodic;
    return kernel * left.dot(centered * b);
  };
  return linalg::quad(integrand, 0.0, upper, 1e-13 * scale);
}

double common_gamma(const Vector& gamma, const std::string& what) {
  const double lo = gamma.minCoeff();
  const double hi = gamma.maxCoeff();
  if (hi - lo > 1e-12 * hi) {
    throw ApplicabilityError(what + " requires gamma_i equal across states");
  }
  return gamma(0);
}

}  // namespace

double MomentTable::variance(std::size_t i) const {
  if (order < 2) throw DomainError("MomentTable: variance needs order >= 2");
  const double mu = aggregate[i][1];
  return aggregate[i][2] - mu * mu;
}

void MomentTable::check_invariants() const {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(aggregate[i][0] - 1.0) > 1e-10) {
      throw NumericalError("moment table: probability normalization violated at t=" +
                           std::to_string(times[i]));
    }
    if (order >= 2) {
      const double slack = 1e-10 * std::max(1.0, std::abs(aggregate[i][2]));
      if (variance(i) < -slack) {
        throw NumericalError("moment table: negative variance at t=" + std::to_string(times[i]));
      }
    }
  }
}

Matrix moment_generator(const MmouSpec& spec, int max_order) {
  if (max_order < 0) throw DomainError("moment_generator: order must be nonnegative");
  const int d = spec.states();
  const int n = max_order;
  Matrix a = Matrix::Zero((n + 1) * d, (n + 1) * d);
  for (int k = 0; k <= n; ++k) {
    a.block(k * d, k * d, d, d) = shifted_generator(spec.chain, spec.gamma, k);
    if (k >= 1) a.block(k * d, (k - 1) * d, d, d) = k * diag(spec.alpha);
    if (k >= 2) a.block(k * d, (k - 2) * d, d, d) = 0.5 * k * (k - 1) * diag(spec.sigma2);
  }
  return a;
}

MomentTable transient_first_moment(const MmouSpec& spec, std::span<const double> times) {
  check_times(times);
  const int d = spec.states();
  const Matrix qt = spec.chain.rates().transpose();
  const Matrix qbar = shifted_generator(spec.chain, spec.gamma, 1.0);
  const Vector nu0 = spec.initial.mean * spec.p0;

  if (spec.chain.irreducible()) {
    const Vector pi = stationary_distribution(spec.chain);
    if (starts_in_equilibrium(spec, pi)) {
      // nu_t = e^{Qbar t} nu_0 - Qbar^{-1} (I - e^{Qbar t}) diag(alpha) pi
      const Vector forcing = linalg::solve(qbar, spec.alpha.cwiseProduct(pi), "Qbar_gamma");
      MomentTable table;
      table.order = 1;
      table.times.assign(times.begin(), times.end());
      for (double t : times) {
        const Matrix e = linalg::expm(qbar, t);
        const Vector nu = e * nu0 - (forcing - e * forcing);
        table.per_state.push_back({spec.p0, nu});
        table.aggregate.push_back({spec.p0.sum(), nu.sum()});
      }
      table.check_invariants();
      return table;
    }
  }

  Matrix r = Matrix::Zero(2 * d, 2 * d);
  r.topLeftCorner(d, d) = qt;
  r.bottomLeftCorner(d, d) = diag(spec.alpha);
  r.bottomRightCorner(d, d) = qbar;
  Vector start(2 * d);
  start << spec.p0, nu0;
  return table_from_stacked(r, start, 1, d, moment_scale(spec), times);
}

MomentTable transient_second_moment(const MmouSpec& spec, std::span<const double> times) {
  check_times(times);
  const int d = spec.states();
  Matrix s = Matrix::Zero(3 * d, 3 * d);
  s.block(0, 0, d, d) = spec.chain.rates().transpose();
  s.block(d, 0, d, d) = diag(spec.alpha);
  s.block(d, d, d, d) = shifted_generator(spec.chain, spec.gamma, 1.0);
  s.block(2 * d, 0, d, d) = diag(spec.sigma2);
  s.block(2 * d, d, d, d) = 2.0 * diag(spec.alpha);
  s.block(2 * d, 2 * d, d, d) = shifted_generator(spec.chain, spec.gamma, 2.0);
  Vector start(3 * d);
  start << spec.p0, spec.initial.moment(1) * spec.p0, spec.initial.moment(2) * spec.p0;
  return table_from_stacked(s, start, 2, d, moment_scale(spec), times);
}

MomentTable higher_moments_transient(const MmouSpec& spec, int max_order,
                                     std::span<const double> times) {
  if (max_order < 1) throw DomainError("higher_moments_transient: order must be >= 1");
  const int d = spec.states();
  if (static_cast<long>(max_order) * d > 2000) {
    throw DimensionError("higher_moments_transient: order * states exceeds 2000");
  }
  check_times(times);
  Vector start((max_order + 1) * d);
  for (int k = 0; k <= max_order; ++k) start.segment(k * d, d) = spec.initial.moment(k) * spec.p0;
  return table_from_stacked(moment_generator(spec, max_order), start, max_order, d,
                            moment_scale(spec), times);
}

StationaryMoments stationary_moments(const MmouSpec& spec, int max_order) {
  if (max_order < 1) throw DomainError("stationary_moments: order must be >= 1");
  const int top = std::max(max_order, 2);
  const Vector pi = stationary_distribution(spec.chain);
  StationaryMoments out;
  out.higher.push_back(pi);
  for (int k = 1; k <= top; ++k) {
    Vector rhs = k * spec.alpha.cwiseProduct(out.higher[k - 1]);
    if (k >= 2) rhs += 0.5 * k * (k - 1) * spec.sigma2.cwiseProduct(out.higher[k - 2]);
    const Matrix qbar = shifted_generator(spec.chain, spec.gamma, k);
    out.higher.push_back(-linalg::solve(qbar, rhs, "Qbar_{k gamma}"));
  }
  out.nu_inf = out.higher[1];
  out.w_inf = out.higher[2];
  out.mu_inf = out.nu_inf.sum();
  out.v_inf = out.w_inf.sum() - out.mu_inf * out.mu_inf;

  const double lhs = spec.gamma.dot(out.nu_inf);
  const double rhs = pi.dot(spec.alpha);
  if (std::abs(lhs - rhs) > 1e-10 * std::max(1.0, std::abs(rhs))) {
    throw NumericalError("stationary_moments: gamma^T nu_inf != pi^T alpha");
  }
  if (out.v_inf < -1e-10 * std::max(1.0, out.w_inf.sum())) {
    throw NumericalError("stationary_moments: negative stationary variance");
  }
  out.higher.resize(static_cast<std::size_t>(std::max(max_order, 2)) + 1);
  return out;
}

std::vector<MeanVariance> equal_gamma_closed_form(const MmouSpec& spec,
                                                  std::span<const double> times) {
  check_times(times);
  const double gamma = common_gamma(spec.gamma, "equal_gamma_closed_form");
  const Vector pi = stationary_distribution(spec.chain);
  if (!starts_in_equilibrium(spec, pi)) {
    throw ApplicabilityError("equal_gamma_closed_form requires p0 = pi");
  }
  const double alpha_bar = pi.dot(spec.alpha);
  const double sigma_bar = pi.dot(spec.sigma2);
  const double m0 = spec.initial.mean;
  const double s0 = spec.initial.sd * spec.initial.sd;

  std::vector<MeanVariance> out;
  for (double t : times) {
    const double decay = std::exp(-gamma * t);
    MeanVariance mv;
    mv.mean = m0 * decay + alpha_bar / gamma * (1.0 - decay);
    mv.variance = sigma_bar * (-std::expm1(-2.0 * gamma * t)) / (2.0 * gamma) + s0 * decay * decay +
                  deviation_kernel_integral(spec.chain, pi, gamma, gamma, t, spec.alpha,
                                            spec.alpha) / gamma;
    out.push_back(mv);
  }
  return out;
}

double covariance_lag(const MmouSpec& spec, double t, double u) {
  if (!(t >= 0.0) || !(u >= 0.0)) throw DomainError("covariance_lag: t and u must be >= 0");
  const int d = spec.states();
  const std::array<double, 1> at{t};
  const MomentTable table = transient_second_moment(spec, at);
  const Vector& p = table.per_state[0][0];
  const Vector& nu = table.per_state[0][1];
  const Vector& w = table.per_state[0][2];
  const double mu = table.mean(0);

  // A(t, u) = exp(R u) [Cov(Z(t), M(t)); Cov(Y(t), M(t))]
  Matrix r = Matrix::Zero(2 * d, 2 * d);
  r.topLeftCorner(d, d) = spec.chain.rates().transpose();
  r.bottomLeftCorner(d, d) = diag(spec.alpha);
  r.bottomRightCorner(d, d) = shifted_generator(spec.chain, spec.gamma, 1.0);
  Vector start(2 * d);
  start << nu - mu * p, w - mu * nu;
  const Vector lagged = stacked_flow(r, start, d, moment_scale(spec), u);
  return lagged.tail(d).sum();
}

double nonneg_definite_check(const GeneratorMatrix& chain) {
  const DeviationSet dev = deviation_set(chain);
  const Matrix weighted = dev.pi.asDiagonal() * dev.deviation;
  const Matrix sym = weighted + weighted.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("nonneg_definite_check: eigenvalue solver failed");
  }
  return solver.eigenvalues().minCoeff();
}

double multi_transient_covariance(const MultiOuSpec& spec, int j, int k, double t) {
  const int dim = spec.dimension();
  if (j < 0 || k < 0 || j >= dim || k >= dim) {
    throw DomainError("multi_transient_covariance: coordinate index out of range");
  }
  if (!(t >= 0.0)) throw DomainError("multi_transient_covariance: t must be >= 0");
  const auto& cj = spec.coords[static_cast<std::size_t>(j)];
  const auto& ck = spec.coords[static_cast<std::size_t>(k)];
  const double gj = common_gamma(cj.gamma, "multi_transient_covariance");
  const double gk = common_gamma(ck.gamma, "multi_transient_covariance");
  const Vector pi = stationary_distribution(spec.chain);
  if ((spec.p0 - pi).cwiseAbs().maxCoeff() > 1e-10) {
    throw ApplicabilityError("multi_transient_covariance requires p0 = pi");
  }

  double conditional = 0.0;  // E Cov(M_j, M_k | X); zero off the diagonal
  double cross = 0.0;
  if (std::isinf(t)) {
    const Matrix dk = resolvent_deviation(spec.chain, gk);
    const Matrix dj = resolvent_deviation(spec.chain, gj);
    cross = (pi.cwiseProduct(cj.alpha).dot(dk * ck.alpha) +
             pi.cwiseProduct(ck.alpha).dot(dj * cj.alpha)) /
            (gj + gk);
    if (j == k) conditional = pi.dot(cj.sigma2) / (2.0 * gj);
  } else {
    cross = (deviation_kernel_integral(spec.chain, pi, gj, gk, t, cj.alpha, ck.alpha) +
             deviation_kernel_integral(spec.chain, pi, gk, gj, t, ck.alpha, cj.alpha)) /
            (gj + gk);
    if (j == k) {
      conditional = pi.dot(cj.sigma2) * (-std::expm1(-2.0 * gj * t)) / (2.0 * gj) +
                    cj.initial.sd * cj.initial.sd * std::exp(-2.0 * gj * t);
    }
  }
  return conditional + cross;
}

TwoStateExample two_state_example(double q12, double q21,
                                  std::span<const MultiOuSpec::Coordinate> coords) {
  if (coords.size() != 2) throw ApplicabilityError("two_state_example requires J = 2");
  for (const auto& c : coords) {
    if (c.alpha.size() != 2 || c.gamma.size() != 2 || c.sigma2.size() != 2) {
      throw ApplicabilityError("two_state_example requires d = 2");
    }
  }
  if (!(q12 > 0.0) || !(q21 > 0.0)) {
    throw ApplicabilityError("two_state_example requires positive rates");
  }
  const double g1 = common_gamma(coords[0].gamma, "two_state_example");
  const double g2 = common_gamma(coords[1].gamma, "two_state_example");
  const double q = q12 + q21;
  const double qq = q12 * q21 / (q * q);
  const double da1 = coords[0].alpha(0) - coords[0].alpha(1);
  const double da2 = coords[1].alpha(0) - coords[1].alpha(1);

  TwoStateExample out;
  out.covariance = qq * (2.0 * q + g1 + g2) / ((g1 + g2) * (q + g1) * (q + g2)) * da1 * da2;
  auto variance = [&](const MultiOuSpec::Coordinate& c, double g, double da) {
    return (q12 * c.sigma2(1) + q21 * c.sigma2(0)) / (2.0 * g * q) + qq * da * da / (g * (q + g));
  };
  out.variance1 = variance(coords[0], g1, da1);
  out.variance2 = variance(coords[1], g2, da2);
  const double denom = std::sqrt(out.variance1 * out.variance2);
  out.correlation =
      denom > 0.0 ? out.covariance / denom : std::numeric_limits<double>::quiet_NaN();
  out.sigma0_correlation =
      std::sqrt(g1 * g2 / ((q + g1) * (q + g2))) * (2.0 * q + g1 + g2) / (g1 + g2);
  return out;
}

Vector multi_stationary_mixed_moments(const MultiOuSpec& spec, std::span<const int> orders) {
  const int dim = spec.dimension();
  if (static_cast<int>(orders.size()) != dim) {
    throw DimensionError("multi_stationary_mixed_moments: need one order per coordinate");
  }
  for (int o : orders) {
    if (o < 0) throw DomainError("multi_stationary_mixed_moments: orders must be >= 0");
  }
  const Vector pi = stationary_distribution(spec.chain);
  const Matrix qt = spec.chain.rates().transpose();

  // Signed h_k = (-1)^{|k|} E[prod M_j^{k_j} ; X = i] satisfy
  // h_k = (Q^T - sum k_j diag g_j)^{-1} (sum k_j diag a_j h_{k-e_j}
  //                                      - 1/2 sum k_j (k_j - 1) diag s_j h_{k-2e_j})
  std::map<std::vector<int>, Vector> memo;
  auto signed_moment = [&](auto&& self, const std::vector<int>& k) -> Vector {
    if (std::all_of(k.begin(), k.end(), [](int x) { return x == 0; })) return pi;
    if (auto it = memo.find(k); it != memo.end()) return it->second;
    Matrix system = qt;
    Vector rhs = Vector::Zero(pi.size());
    for (int j = 0; j < dim; ++j) {
      const int kj = k[static_cast<std::size_t>(j)];
      if (kj == 0) continue;
      const auto& c = spec.coords[static_cast<std::size_t>(j)];
      system -= kj * diag(c.gamma);
      std::vector<int> lower = k;
      lower[static_cast<std::size_t>(j)] -= 1;
      rhs += kj * c.alpha.cwiseProduct(self(self, lower));
      if (kj >= 2) {
        lower[static_cast<std::size_t>(j)] -= 1;
        rhs -= 0.5 * kj * (kj - 1) * c.sigma2.cwiseProduct(self(self, lower));
      }
    }
    Vector h = linalg::solve(system, rhs, "mixed-moment system");
    memo.emplace(k, h);
    return h;
  };
  const std::vector<int> k(orders.begin(), orders.end());
  int total = 0;
  for (int o : orders) total += o;
  const Vector h = signed_moment(signed_moment, k);
  return (total % 2 == 0) ? h : Vector(-h);
}

double stationary_cross_moment(const MultiOuSpec& spec, int j, int k) {
  const int dim = spec.dimension();
  if (j < 0 || k < 0 || j >= dim || k >= dim || j == k) {
    throw DomainError("stationary_cross_moment: need two distinct coordinate indices");
  }
  const Vector pi = stationary_distribution(spec.chain);
  const Matrix qt = spec.chain.rates().transpose();
  const auto& cj = spec.coords[static_cast<std::size_t>(j)];
  const auto& ck = spec.coords[static_cast<std::size_t>(k)];
  // Signed first moments h_{e_j} = -nu_inf^{(j)} = Qbar_{gamma_j}^{-1} diag(alpha_j) pi.
  const Vector hj = linalg::solve(qt - diag(cj.gamma), cj.alpha.cwiseProduct(pi), "Qbar_gamma_j");
  const Vector hk = linalg::solve(qt - diag(ck.gamma), ck.alpha.cwiseProduct(pi), "Qbar_gamma_k");
  const Vector rhs = cj.alpha.cwiseProduct(hk) + ck.alpha.cwiseProduct(hj);
  return linalg::solve(qt - diag(cj.gamma) - diag(ck.gamma), rhs, "cross-moment system").sum();
}

}  // namespace mmou
