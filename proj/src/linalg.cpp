#include "mmou/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>
#include <string>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mmou/errors.hpp"

namespace mmou::linalg {

namespace {

double one_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

void require_square(const Matrix& a, std::string_view what) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

}  // namespace

void require_finite(const Matrix& a, std::string_view what) {
  if (!a.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
}

void require_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
}

Matrix expm(const Matrix& a, double t) {
  require_square(a, "expm");
  if (!std::isfinite(t)) throw DomainError("expm: non-finite time");
  require_finite(a, "expm");
  const auto n = a.rows();
  Matrix scaled = a * t;
  const double norm = one_norm(scaled);

  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  scaled /= std::ldexp(1.0, squarings);

  // ||scaled|| <= 0.5, so the Taylor tail after term k is bounded by twice term k.
  Matrix result = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (int k = 1; k <= 40; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
    if (one_norm(term) <= eps * one_norm(result) * 0.25) break;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

namespace {

Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& a, std::string_view system) {
  require_square(a, system);
  require_finite(a, system);
  Eigen::PartialPivLU<Matrix> lu(a);
  const double scale = a.cwiseAbs().maxCoeff();
  const double floor = 1e-13 * (scale > 0.0 ? scale : 1.0);
  const auto& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    if (!(std::abs(packed(i, i)) >= floor)) {
      throw SingularityError(std::string(system) + " is singular (pivot " + std::to_string(i) +
                             " below 1e-13 of scale)");
    }
  }
  return lu;
}

}  // namespace

Vector solve(const Matrix& a, const Vector& b, std::string_view system) {
  if (b.size() != a.rows()) throw DimensionError(std::string(system) + ": rhs size mismatch");
  return checked_lu(a, system).solve(b);
}

Matrix solve_many(const Matrix& a, const Matrix& b, std::string_view system) {
  if (b.rows() != a.rows()) throw DimensionError(std::string(system) + ": rhs size mismatch");
  return checked_lu(a, system).solve(b);
}

Matrix inverse(const Matrix& a, std::string_view system) {
  return solve_many(a, Matrix::Identity(a.rows(), a.cols()), system);
}

QuadResult quad_with_error(const std::function<double(double)>& f, double lo, double hi,
                           double tol) {
  if (!(lo <= hi)) throw DomainError("quad: lower limit exceeds upper limit");
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("quad: limits must be finite");
  if (lo == hi) return {};
  using Kronrod = boost::math::quadrature::gauss_kronrod<double, 21>;
  using Gauss = boost::math::quadrature::gauss<double, 10>;

  struct Panel {
    double lo, hi, value, error;
    bool operator<(const Panel& other) const { return error < other.error; }
  };
  // Gauss node j coincides with Kronrod node 2j + 1, so one set of 21
  // evaluations gives both rules and the estimate |K21 - G10|.
  auto evaluate = [&](double a, double b) {
    const auto& x = Kronrod::abscissa();
    const auto& wk = Kronrod::weights();
    const auto& wg = Gauss::weights();
    const double centre = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double f0 = f(centre);
    double kronrod = wk[0] * f0;
    double gauss = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const double pair = f(centre - half * x[i]) + f(centre + half * x[i]);
      kronrod += wk[i] * pair;
      if (i % 2 == 1) gauss += wg[i / 2] * pair;
    }
    kronrod *= half;
    gauss *= half;
    if (!std::isfinite(kronrod)) throw DomainError("quad: integrand produced a non-finite value");
    return Panel{a, b, kronrod, std::abs(kronrod - gauss)};
  };

  std::vector<Panel> panels{evaluate(lo, hi)};
  double error = panels.front().error;
  constexpr std::size_t kMaxPanels = 4000;
  while (error > tol && panels.size() < kMaxPanels) {
    std::pop_heap(panels.begin(), panels.end());
    const Panel worst = panels.back();
    const double mid = 0.5 * (worst.lo + worst.hi);
    // stop before nodes collapse onto the endpoints
    if (!(worst.lo < mid && mid < worst.hi) || worst.hi - worst.lo < 1e-250) {
      std::push_heap(panels.begin(), panels.end());
      break;
    }
    panels.back() = evaluate(worst.lo, mid);
    std::push_heap(panels.begin(), panels.end());
    panels.push_back(evaluate(mid, worst.hi));
    std::push_heap(panels.begin(), panels.end());
    error = 0.0;
    for (const auto& p : panels) error += p.error;
  }
  double total = 0.0;
  for (const auto& p : panels) total += p.value;
  if (error > tol) {
    throw AccuracyError("quad: estimated error " + std::to_string(error) + " exceeds tolerance " +
                            std::to_string(tol) + " after " + std::to_string(panels.size()) + " panels",
                        total, error);
  }
  return {total, error};
}

double quad(const std::function<double(double)>& f, double lo, double hi, double tol) {
  return quad_with_error(f, lo, hi, tol).value;
}

Vector rk4(const std::function<Vector(double, const Vector&)>& f, const Vector& y0,
           double horizon, int steps) {
  if (steps <= 0) throw DomainError("rk4: step count must be positive");
  Vector y = y0;
  const double h = horizon / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const Vector k1 = f(t, y);
    const Vector k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
    const Vector k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
    const Vector k4 = f(t + h, y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

Vector rk4_linear(const Matrix& a, const Vector& y0, double horizon,
                  const std::function<Vector(double)>& forcing) {
  require_square(a, "rk4_linear");
  const double scale = 100.0 * one_norm(a) * horizon;
  const int steps = static_cast<int>(std::ceil(std::max(1000.0, scale)));
  auto rhs = [&](double t, const Vector& y) -> Vector {
    Vector dy = a * y;
    if (forcing) dy += forcing(t);
    return dy;
  };
  return rk4(rhs, y0, horizon, steps);
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix kron_sum(const Matrix& a, const Matrix& b) {
  require_square(a, "kron_sum");
  require_square(b, "kron_sum");
  return kron(a, Matrix::Identity(b.rows(), b.rows())) +
         kron(Matrix::Identity(a.rows(), a.rows()), b);
}

}  // namespace mmou::linalg
