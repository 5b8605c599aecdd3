#include "mmou/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "mmou/errors.hpp"
#include "mmou/linalg.hpp"
#include "mmou/parallel.hpp"
#include "mmou/random.hpp"

namespace mmou {

namespace {

constexpr double kMaxExponent = 700.0;

void check_grid(std::span<const double> grid, const char* name, bool nonnegative) {
  if (grid.empty()) throw DomainError(std::string(name) + " grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || (nonnegative && grid[i] < 0.0)) {
      throw DomainError(std::string(name) + " grid has an invalid entry");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw DomainError(std::string(name) + " grid must be strictly increasing");
    }
  }
}

double guarded_exp(double exponent, double theta, double t) {
  if (exponent > kMaxExponent) {
    std::ostringstream msg;
    msg << "transform overflow at cell (theta=" << theta << ", t=" << t << "): exponent "
        << exponent << " exceeds " << kMaxExponent;
    throw OverflowError(msg.str());
  }
  return std::exp(exponent);
}

ConditionalGaussian initial_state(const InitialLaw& law) {
  return {law.mean, law.sd * law.sd};
}

struct CellMoments {
  std::vector<double> mean;
  std::vector<double> se;
};

/// Per-cell sample means and standard errors over n paths. fn(k, add) reports
/// path k's contributions through add(cell, value); cells a path does not
/// touch count as zero. Partials are reduced in chunk order.
template <class PathFn>
CellMoments accumulate_cells(std::size_t n, std::size_t cells, int threads, PathFn&& fn) {
  const std::size_t chunks = (n + kPathChunk - 1) / kPathChunk;
  std::vector<std::vector<double>> sums(chunks);
  std::vector<std::vector<double>> squares(chunks);
  parallel_chunks(n, kPathChunk, threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
    std::vector<double> s(cells, 0.0);
    std::vector<double> q(cells, 0.0);
    auto add = [&](std::size_t cell, double x) {
      s[cell] += x;
      q[cell] += x * x;
    };
    for (std::size_t k = begin; k < end; ++k) fn(k, add);
    sums[c] = std::move(s);
    squares[c] = std::move(q);
  });
  CellMoments out;
  out.mean.assign(cells, 0.0);
  out.se.assign(cells, 0.0);
  std::vector<double> total_sq(cells, 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t j = 0; j < cells; ++j) {
      out.mean[j] += sums[c][j];
      total_sq[j] += squares[c][j];
    }
  }
  const auto count = static_cast<double>(n);
  for (std::size_t j = 0; j < cells; ++j) {
    const double sum = out.mean[j];
    out.mean[j] = sum / count;
    if (n > 1) {
      const double var = std::max(0.0, (total_sq[j] - sum * out.mean[j]) / (count - 1.0));
      out.se[j] = std::sqrt(var / count);
    }
  }
  return out;
}

TransformSurface surface_from_cells(std::span<const double> theta, std::span<const double> time,
                                    int d, const CellMoments& cells) {
  TransformSurface s;
  s.theta_grid.assign(theta.begin(), theta.end());
  s.time_grid.assign(time.begin(), time.end());
  const std::size_t na = theta.size();
  const std::size_t nb = time.size();
  s.values.assign(na, std::vector<Vector>(nb, Vector::Zero(d)));
  s.std_error.assign(na, std::vector<Vector>(nb, Vector::Zero(d)));
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t b = 0; b < nb; ++b) {
      for (int i = 0; i < d; ++i) {
        const std::size_t cell = (a * nb + b) * static_cast<std::size_t>(d) + i;
        s.values[a][b](i) = cells.mean[cell];
        s.std_error[a][b](i) = cells.se[cell];
      }
    }
  }
  return s;
}

/// Weights (minus, centre, plus) of the three-point first derivative at x[k].
struct Stencil {
  double minus;
  double centre;
  double plus;
};

Stencil central(std::span<const double> x, std::size_t k) {
  const double hm = x[k] - x[k - 1];
  const double hp = x[k + 1] - x[k];
  return {-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))};
}

void require_points(std::size_t count, const char* axis) {
  if (count < 5) {
    throw ApplicabilityError(std::string("residual check needs at least 5 points on the ") +
                             axis + " axis");
  }
}

}  // namespace

TransformSurface estimate_transform(const MmouSpec& spec, std::span<const double> theta_grid,
                                    std::span<const double> time_grid, std::size_t n,
                                    std::uint64_t seed, int threads) {
  if (n < 100) throw ApplicabilityError("estimate_transform needs n >= 100 paths");
  check_grid(theta_grid, "theta", false);
  check_grid(time_grid, "time", true);
  const int d = spec.states();
  const std::size_t nb = time_grid.size();
  const std::size_t cells = theta_grid.size() * nb * static_cast<std::size_t>(d);
  const double horizon = std::max(time_grid.back(), 1e-300);

  const CellMoments stats = accumulate_cells(n, cells, threads, [&](std::size_t k, auto& add) {
    Stream chain_rng(seed, k, Lane::chain);
    const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
    ConditionalGaussian cond = initial_state(spec.initial);
    double previous = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      cond = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, previous, time_grid[b],
                               cond);
      previous = time_grid[b];
      const auto state = static_cast<std::size_t>(path.state_at(time_grid[b]));
      for (std::size_t a = 0; a < theta_grid.size(); ++a) {
        const double th = theta_grid[a];
        const double value =
            guarded_exp(-th * cond.mean + 0.5 * th * th * cond.variance, th, time_grid[b]);
        add((a * nb + b) * static_cast<std::size_t>(d) + state, value);
      }
    }
  });
  return surface_from_cells(theta_grid, time_grid, d, stats);
}

TransformSurface crude_transform(const MmouSpec& spec, std::span<const double> theta_grid,
                                 std::span<const double> time_grid, std::size_t n,
                                 std::uint64_t seed, int threads) {
  if (n < 100) throw ApplicabilityError("crude_transform needs n >= 100 paths");
  check_grid(theta_grid, "theta", false);
  check_grid(time_grid, "time", true);
  const int d = spec.states();
  const std::size_t nb = time_grid.size();
  const std::size_t cells = theta_grid.size() * nb * static_cast<std::size_t>(d);
  const double horizon = std::max(time_grid.back(), 1e-300);

  const CellMoments stats = accumulate_cells(n, cells, threads, [&](std::size_t k, auto& add) {
    Stream chain_rng(seed, k, Lane::chain);
    const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
    Stream gauss(seed, k, Lane::crude);
    double value = spec.initial.mean + spec.initial.sd * gauss.normal();
    double previous = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      double log_decay = 0.0;
      const auto step = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, previous,
                                          time_grid[b], ConditionalGaussian{0.0, 0.0}, &log_decay);
      value = value * std::exp(-log_decay) + step.mean + std::sqrt(step.variance) * gauss.normal();
      previous = time_grid[b];
      const auto state = static_cast<std::size_t>(path.state_at(time_grid[b]));
      for (std::size_t a = 0; a < theta_grid.size(); ++a) {
        const double th = theta_grid[a];
        add((a * nb + b) * static_cast<std::size_t>(d) + state,
            guarded_exp(-th * value, th, time_grid[b]));
      }
    }
  });
  return surface_from_cells(theta_grid, time_grid, d, stats);
}

TransformSurface ou_transform_surface(const MmouSpec& spec, std::span<const double> theta_grid,
                                      std::span<const double> time_grid) {
  if (spec.states() != 1) throw ApplicabilityError("ou_transform_surface requires d = 1");
  check_grid(theta_grid, "theta", false);
  check_grid(time_grid, "time", true);
  const double alpha = spec.alpha(0);
  const double gamma = spec.gamma(0);
  const double s2 = spec.sigma2(0);
  const double b2 = spec.initial.sd * spec.initial.sd;
  TransformSurface s;
  s.theta_grid.assign(theta_grid.begin(), theta_grid.end());
  s.time_grid.assign(time_grid.begin(), time_grid.end());
  s.values.assign(theta_grid.size(), std::vector<Vector>(time_grid.size(), Vector::Zero(1)));
  s.std_error = s.values;
  for (std::size_t a = 0; a < theta_grid.size(); ++a) {
    for (std::size_t b = 0; b < time_grid.size(); ++b) {
      const double t = time_grid[b];
      const double th = theta_grid[a];
      const double decay = std::exp(-gamma * t);
      const double mean = spec.initial.mean * decay - alpha / gamma * std::expm1(-gamma * t);
      const double var = -s2 / (2.0 * gamma) * std::expm1(-2.0 * gamma * t) + b2 * decay * decay;
      s.values[a][b](0) = guarded_exp(-th * mean + 0.5 * th * th * var, th, t);
    }
  }
  return s;
}

double ResidualGrid::max_abs() const {
  double m = 0.0;
  for (const auto& row : residual) {
    for (const auto& v : row) m = std::max(m, v.cwiseAbs().maxCoeff());
  }
  return m;
}

ResidualGrid pde_residual(const TransformSurface& surface, const MmouSpec& spec) {
  const auto& th = surface.theta_grid;
  const auto& tm = surface.time_grid;
  require_points(th.size(), "theta");
  require_points(tm.size(), "time");
  const int d = spec.states();
  if (surface.values.size() != th.size() || surface.values[0].size() != tm.size() ||
      surface.values[0][0].size() != d) {
    throw DimensionError("pde_residual: surface does not match its grids or the spec");
  }
  const Matrix qt = spec.chain.rates().transpose();
  const bool has_se = surface.std_error.size() == th.size();

  ResidualGrid out;
  out.theta.assign(th.begin() + 1, th.end() - 1);
  out.time.assign(tm.begin() + 1, tm.end() - 1);
  for (std::size_t a = 1; a + 1 < th.size(); ++a) {
    std::vector<Vector> res_row;
    std::vector<Vector> se_row;
    const Stencil sa = central(th, a);
    const double theta = th[a];
    for (std::size_t b = 1; b + 1 < tm.size(); ++b) {
      const Stencil sb = central(tm, b);
      const Vector& g = surface.values[a][b];
      const Vector dt = sb.minus * surface.values[a][b - 1] + sb.centre * g +
                        sb.plus * surface.values[a][b + 1];
      const Vector dth = sa.minus * surface.values[a - 1][b] + sa.centre * g +
                         sa.plus * surface.values[a + 1][b];
      const Vector potential = theta * spec.alpha - 0.5 * theta * theta * spec.sigma2;
      const Vector rhs =
          qt * g - potential.cwiseProduct(g) - theta * spec.gamma.cwiseProduct(dth);
      res_row.push_back(dt - rhs);

      Vector se = Vector::Zero(d);
      if (has_se) {
        const auto& e = surface.std_error;
        for (int i = 0; i < d; ++i) {
          double var = 0.0;
          auto sq = [](double c, double s) { return c * c * s * s; };
          const double ct = theta * spec.gamma(i);
          var += sq(sb.minus, e[a][b - 1](i)) + sq(sb.plus, e[a][b + 1](i));
          var += sq(ct * sa.minus, e[a - 1][b](i)) + sq(ct * sa.plus, e[a + 1][b](i));
          for (int j = 0; j < d; ++j) {
            double c = -qt(i, j);
            if (j == i) c += sb.centre + potential(i) + ct * sa.centre;
            var += sq(c, e[a][b](j));
          }
          se(i) = std::sqrt(var);
        }
      }
      se_row.push_back(se);
    }
    out.residual.push_back(std::move(res_row));
    out.se.push_back(std::move(se_row));
  }
  return out;
}

namespace {

// Interior node a of the coarse grid is interior node 2a + 1 of its refinement.
void require_refinement(const std::vector<double>& coarse, const std::vector<double>& fine,
                        const char* axis) {
  bool ok = fine.size() == 2 * coarse.size() + 1;
  for (std::size_t a = 0; ok && a < coarse.size(); ++a) {
    ok = std::abs(fine[2 * a + 1] - coarse[a]) <= 1e-12 * std::max(1.0, std::abs(coarse[a]));
  }
  if (!ok) {
    throw DimensionError(std::string("halving_ratio: fine ") + axis +
                         " grid is not the midpoint refinement of the coarse grid");
  }
}

double checked_ratio(double coarse, double fine) {
  if (!(fine > 0.0)) throw DomainError("halving_ratio: fine residual vanishes");
  return coarse / fine;
}

}  // namespace

double halving_ratio(const ResidualGrid& coarse, const ResidualGrid& fine) {
  require_refinement(coarse.theta, fine.theta, "theta");
  require_refinement(coarse.time, fine.time, "time");
  double c = 0.0, f = 0.0;
  for (std::size_t a = 0; a < coarse.theta.size(); ++a) {
    for (std::size_t b = 0; b < coarse.time.size(); ++b) {
      c = std::max(c, coarse.residual[a][b].cwiseAbs().maxCoeff());
      f = std::max(f, fine.residual[2 * a + 1][2 * b + 1].cwiseAbs().maxCoeff());
    }
  }
  return checked_ratio(c, f);
}

MmouSpec AbsorbingParams::spec() const {
  if (q1 != 0.0) throw ApplicabilityError("absorbing two-state transform requires q1 = 0");
  Matrix q(2, 2);
  q << 0.0, 0.0, q2, -q2;
  Vector p0(2);
  p0 << 0.0, 1.0;
  return MmouSpec(GeneratorMatrix::with_absorbing_states(q), alpha, gamma, sigma2,
                  InitialLaw{m0, 0.0}, p0);
}

AbsorbingTransform absorbing_two_state_transform(const AbsorbingParams& p, double theta, double t) {
  if (p.q1 != 0.0) throw ApplicabilityError("absorbing two-state transform requires q1 = 0");
  if (p.alpha.size() != 2 || p.gamma.size() != 2 || p.sigma2.size() != 2) {
    throw DimensionError("absorbing two-state transform needs 2-vectors alpha, gamma, sigma2");
  }
  if (!(p.q2 >= 0.0) || !(p.gamma.minCoeff() > 0.0) || !(p.sigma2.minCoeff() >= 0.0)) {
    throw ValidationError("absorbing two-state transform: invalid rates or parameters");
  }
  if (!(t >= 0.0) || !std::isfinite(theta)) throw DomainError("absorbing transform: bad (theta, t)");
  const double a1 = p.alpha(0), a2 = p.alpha(1);
  const double g1 = p.gamma(0), g2 = p.gamma(1);
  const double s1 = p.sigma2(0), s2 = p.sigma2(1);

  // State 2 has not been left yet: plain OU killed at rate q2.
  auto stay = [&](double s, double th) {
    const double one_minus = -std::expm1(-g2 * s);
    const double one_minus_sq = -std::expm1(-2.0 * g2 * s);
    return -th * p.m0 * (1.0 - one_minus) - p.q2 * s - (a2 / g2) * th * one_minus +
           s2 / (4.0 * g2) * th * th * one_minus_sq;
  };

  AbsorbingTransform out;
  out.g2 = guarded_exp(stay(t, theta), theta, t);
  if (p.q2 == 0.0 || t == 0.0) return out;

  const double outer = -(a1 / g1) * theta + s1 * theta * theta / (4.0 * g1);
  auto integrand = [&](double s) {
    const double th = theta * std::exp(-g1 * (t - s));
    return std::exp(stay(s, th) + (a1 / g1) * th - s1 / (4.0 * g1) * th * th + outer);
  };
  out.g1 = p.q2 * linalg::quad(integrand, 0.0, t, 1e-12);
  return out;
}

TransformSurface absorbing_transform_surface(const AbsorbingParams& params,
                                             std::span<const double> theta_grid,
                                             std::span<const double> time_grid) {
  check_grid(theta_grid, "theta", false);
  check_grid(time_grid, "time", true);
  TransformSurface s;
  s.theta_grid.assign(theta_grid.begin(), theta_grid.end());
  s.time_grid.assign(time_grid.begin(), time_grid.end());
  s.values.assign(theta_grid.size(), std::vector<Vector>(time_grid.size(), Vector::Zero(2)));
  s.std_error = s.values;
  for (std::size_t a = 0; a < theta_grid.size(); ++a) {
    for (std::size_t b = 0; b < time_grid.size(); ++b) {
      const auto g = absorbing_two_state_transform(params, theta_grid[a], time_grid[b]);
      s.values[a][b] << g.g1, g.g2;
    }
  }
  return s;
}

KilledTimeResult killed_time_residual(const MmouSpec& spec, double tau,
                                      std::span<const double> theta_grid, std::size_t n,
                                      std::uint64_t seed, int threads) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("killed_time_residual: tau must be > 0");
  if (n < 100) throw ApplicabilityError("killed_time_residual needs n >= 100 paths");
  check_grid(theta_grid, "theta", false);
  require_points(theta_grid.size(), "theta");
  const int d = spec.states();
  const std::size_t na = theta_grid.size();

  const CellMoments stats =
      accumulate_cells(n, na * static_cast<std::size_t>(d), threads, [&](std::size_t k, auto& add) {
        Stream kill(seed, k, Lane::killing);
        const double horizon = std::max(kill.exponential(tau), 1e-300);
        Stream chain_rng(seed, k, Lane::chain);
        const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
        const auto cond = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, 0.0,
                                            horizon, initial_state(spec.initial));
        const auto state = static_cast<std::size_t>(path.state_at(horizon));
        for (std::size_t a = 0; a < na; ++a) {
          const double th = theta_grid[a];
          add(a * static_cast<std::size_t>(d) + state,
              guarded_exp(-th * cond.mean + 0.5 * th * th * cond.variance, th, horizon));
        }
      });

  KilledTimeResult out;
  out.theta.assign(theta_grid.begin(), theta_grid.end());
  for (std::size_t a = 0; a < na; ++a) {
    Vector v(d);
    Vector e(d);
    for (int i = 0; i < d; ++i) {
      v(i) = stats.mean[a * static_cast<std::size_t>(d) + i];
      e(i) = stats.se[a * static_cast<std::size_t>(d) + i];
    }
    out.values.push_back(v);
    out.std_error.push_back(e);
  }

  const Matrix qt = spec.chain.rates().transpose();
  const double m = spec.initial.mean;
  const double b2 = spec.initial.sd * spec.initial.sd;
  for (std::size_t a = 1; a + 1 < na; ++a) {
    const Stencil s = central(theta_grid, a);
    const double th = theta_grid[a];
    const Vector& g = out.values[a];
    const Vector dg = s.minus * out.values[a - 1] + s.centre * g + s.plus * out.values[a + 1];
    const Vector start = std::exp(-th * m + 0.5 * th * th * b2) * spec.p0;
    const Vector potential = th * spec.alpha - 0.5 * th * th * spec.sigma2;
    const Vector rhs = qt * g - potential.cwiseProduct(g) - th * spec.gamma.cwiseProduct(dg);
    out.residual_theta.push_back(th);
    out.residual.push_back(tau * (g - start) - rhs);

    Vector se(d);
    for (int i = 0; i < d; ++i) {
      const double ct = th * spec.gamma(i);
      double var = std::pow(ct * s.minus * out.std_error[a - 1](i), 2) +
                   std::pow(ct * s.plus * out.std_error[a + 1](i), 2);
      for (int j = 0; j < d; ++j) {
        double c = -qt(i, j);
        if (j == i) c += tau + potential(i) + ct * s.centre;
        var += std::pow(c * out.std_error[a](j), 2);
      }
      se(i) = std::sqrt(var);
    }
    out.residual_se.push_back(se);
  }
  return out;
}

K2Operator kronecker_k2_operator(const MmouSpec& spec, double theta1, double theta2) {
  const int d = spec.states();
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix qt = spec.chain.rates().transpose();
  const Matrix da = spec.alpha.asDiagonal();
  const Matrix ds = spec.sigma2.asDiagonal();
  const Matrix dg = spec.gamma.asDiagonal();
  K2Operator op;
  op.base = linalg::kron_sum(qt, qt) - theta1 * linalg::kron(eye, da) -
            theta2 * linalg::kron(da, eye) + 0.5 * theta1 * theta1 * linalg::kron(eye, ds) +
            0.5 * theta2 * theta2 * linalg::kron(ds, eye);
  op.drift1 = -linalg::kron(eye, dg);
  op.drift2 = -linalg::kron(dg, eye);
  return op;
}

JointTransformGrid joint_transform_surface(const MmouSpec& spec, double lag,
                                           std::span<const double> theta1,
                                           std::span<const double> theta2,
                                           std::span<const double> time, std::size_t n,
                                           std::uint64_t seed, int threads) {
  if (!(lag >= 0.0) || !std::isfinite(lag)) throw DomainError("joint transform: lag must be >= 0");
  if (n == 0) throw DomainError("joint transform: need at least one path");
  check_grid(theta1, "theta1", false);
  check_grid(theta2, "theta2", false);
  check_grid(time, "time", true);
  const int d = spec.states();
  const std::size_t dd = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
  const std::size_t n1 = theta1.size(), n2 = theta2.size(), nt = time.size();
  const double horizon = std::max(time.back() + lag, 1e-300);

  const CellMoments stats =
      accumulate_cells(n, n1 * n2 * nt * dd, threads, [&](std::size_t k, auto& add) {
        Stream chain_rng(seed, k, Lane::chain);
        const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
        for (std::size_t c = 0; c < nt; ++c) {
          const auto joint = conditional_joint(spec, path, time[c], time[c] + lag);
          const std::size_t i = static_cast<std::size_t>(path.state_at(time[c]));
          const std::size_t kk = static_cast<std::size_t>(path.state_at(time[c] + lag));
          const std::size_t slot = i + static_cast<std::size_t>(d) * kk;
          for (std::size_t a = 0; a < n1; ++a) {
            for (std::size_t b = 0; b < n2; ++b) {
              const double u = theta1[a], w = theta2[b];
              const double exponent =
                  -u * joint.first.mean - w * joint.second.mean +
                  0.5 * (u * u * joint.first.variance + w * w * joint.second.variance) +
                  u * w * joint.covariance;
              add(((a * n2 + b) * nt + c) * dd + slot, guarded_exp(exponent, u, time[c]));
            }
          }
        }
      });

  JointTransformGrid out;
  out.theta1.assign(theta1.begin(), theta1.end());
  out.theta2.assign(theta2.begin(), theta2.end());
  out.time.assign(time.begin(), time.end());
  out.lag = lag;
  out.values.assign(n1, std::vector<std::vector<Vector>>(
                            n2, std::vector<Vector>(nt, Vector::Zero(static_cast<Eigen::Index>(dd)))));
  for (std::size_t a = 0; a < n1; ++a) {
    for (std::size_t b = 0; b < n2; ++b) {
      for (std::size_t c = 0; c < nt; ++c) {
        for (std::size_t s = 0; s < dd; ++s) {
          out.values[a][b][c](static_cast<Eigen::Index>(s)) = stats.mean[((a * n2 + b) * nt + c) * dd + s];
        }
      }
    }
  }
  return out;
}

JointTransformGrid independent_pair_surface(const TransformSurface& first,
                                            const TransformSurface& second) {
  if (first.time_grid != second.time_grid) {
    throw DimensionError("independent_pair_surface: time grids differ");
  }
  const auto d = first.values.at(0).at(0).size();
  if (second.values.at(0).at(0).size() != d) {
    throw DimensionError("independent_pair_surface: state counts differ");
  }
  JointTransformGrid out;
  out.theta1 = first.theta_grid;
  out.theta2 = second.theta_grid;
  out.time = first.time_grid;
  out.lag = std::numeric_limits<double>::infinity();
  const std::size_t nt = out.time.size();
  out.values.assign(out.theta1.size(),
                    std::vector<std::vector<Vector>>(out.theta2.size(), std::vector<Vector>(nt)));
  for (std::size_t a = 0; a < out.theta1.size(); ++a) {
    for (std::size_t b = 0; b < out.theta2.size(); ++b) {
      for (std::size_t c = 0; c < nt; ++c) {
        const Vector& g = first.values[a][c];
        const Vector& h = second.values[b][c];
        Vector v(d * d);
        for (Eigen::Index k = 0; k < d; ++k) v.segment(k * d, d) = g * h(k);
        out.values[a][b][c] = v;
      }
    }
  }
  return out;
}

K2Residual k2_residual(const JointTransformGrid& grid, const MmouSpec& spec) {
  require_points(grid.theta1.size(), "theta1");
  require_points(grid.theta2.size(), "theta2");
  require_points(grid.time.size(), "time");
  const auto dd = static_cast<Eigen::Index>(spec.states()) * spec.states();
  if (grid.values.at(0).at(0).at(0).size() != dd) {
    throw DimensionError("k2_residual: grid does not match the spec");
  }
  const auto& v = grid.values;
  K2Residual out;
  out.theta1.assign(grid.theta1.begin() + 1, grid.theta1.end() - 1);
  out.theta2.assign(grid.theta2.begin() + 1, grid.theta2.end() - 1);
  out.time.assign(grid.time.begin() + 1, grid.time.end() - 1);
  out.norm.assign(out.theta1.size(), std::vector<std::vector<double>>(
                                         out.theta2.size(), std::vector<double>(out.time.size())));
  for (std::size_t a = 1; a + 1 < grid.theta1.size(); ++a) {
    const Stencil s1 = central(grid.theta1, a);
    for (std::size_t b = 1; b + 1 < grid.theta2.size(); ++b) {
      const Stencil s2 = central(grid.theta2, b);
      const K2Operator op = kronecker_k2_operator(spec, grid.theta1[a], grid.theta2[b]);
      for (std::size_t c = 1; c + 1 < grid.time.size(); ++c) {
        const Stencil st = central(grid.time, c);
        const Vector& g = v[a][b][c];
        const Vector dt = st.minus * v[a][b][c - 1] + st.centre * g + st.plus * v[a][b][c + 1];
        const Vector d1 = s1.minus * v[a - 1][b][c] + s1.centre * g + s1.plus * v[a + 1][b][c];
        const Vector d2 = s2.minus * v[a][b - 1][c] + s2.centre * g + s2.plus * v[a][b + 1][c];
        const Vector rhs = op.base * g + grid.theta1[a] * (op.drift1 * d1) +
                           grid.theta2[b] * (op.drift2 * d2);
        out.norm[a - 1][b - 1][c - 1] = (dt - rhs).cwiseAbs().maxCoeff();
      }
    }
  }
  return out;
}

double K2Residual::max_abs() const {
  double m = 0.0;
  for (const auto& plane : norm) {
    for (const auto& row : plane) {
      for (double x : row) m = std::max(m, x);
    }
  }
  return m;
}

double k2_max_residual(const JointTransformGrid& grid, const MmouSpec& spec) {
  return k2_residual(grid, spec).max_abs();
}

double halving_ratio(const K2Residual& coarse, const K2Residual& fine) {
  require_refinement(coarse.theta1, fine.theta1, "theta1");
  require_refinement(coarse.theta2, fine.theta2, "theta2");
  require_refinement(coarse.time, fine.time, "time");
  double c = 0.0, f = 0.0;
  for (std::size_t a = 0; a < coarse.theta1.size(); ++a) {
    for (std::size_t b = 0; b < coarse.theta2.size(); ++b) {
      for (std::size_t t = 0; t < coarse.time.size(); ++t) {
        c = std::max(c, coarse.norm[a][b][t]);
        f = std::max(f, fine.norm[2 * a + 1][2 * b + 1][2 * t + 1]);
      }
    }
  }
  return checked_ratio(c, f);
}

TransformDerivatives transform_derivatives_at_zero(const MmouSpec& spec, double t, double delta,
                                                   std::size_t n, std::uint64_t seed,
                                                   int threads) {
  if (!(delta > 0.0)) throw DomainError("transform_derivatives_at_zero: delta must be > 0");
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("transform_derivatives_at_zero: bad t");
  if (n < 100) throw ApplicabilityError("transform_derivatives_at_zero needs n >= 100 paths");
  const int d = spec.states();
  const double horizon = std::max(t, 1e-300);
  const auto ud = static_cast<std::size_t>(d);

  const CellMoments stats = accumulate_cells(n, 2 * ud, threads, [&](std::size_t k, auto& add) {
    Stream chain_rng(seed, k, Lane::chain);
    const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
    const auto cond = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, 0.0, t,
                                        initial_state(spec.initial));
    const auto state = static_cast<std::size_t>(path.state_at(t));
    const double half = 0.5 * delta * delta * cond.variance;
    const double up = guarded_exp(-delta * cond.mean + half, delta, t);
    const double down = guarded_exp(delta * cond.mean + half, -delta, t);
    add(state, (up - down) / (2.0 * delta));
    add(ud + state, (up - 2.0 + down) / (delta * delta));
  });

  TransformDerivatives out;
  out.first.resize(d);
  out.first_se.resize(d);
  out.second.resize(d);
  out.second_se.resize(d);
  for (std::size_t i = 0; i < ud; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    out.first(e) = stats.mean[i];
    out.first_se(e) = stats.se[i];
    out.second(e) = stats.mean[ud + i];
    out.second_se(e) = stats.se[ud + i];
  }
  return out;
}

}  // namespace mmou
