#pragma once

#include <functional>
#include <string_view>

#include <Eigen/Dense>

namespace mmou {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

/// Throws DomainError if any entry of `a` is NaN or infinite.
void require_finite(const Matrix& a, std::string_view what);
void require_finite(const Vector& v, std::string_view what);

/// exp(a * t) by scaling and squaring with a truncated Taylor core.
///
/// The number of squarings k is the smallest with ||a t||_1 / 2^k <= 0.5; the
/// Taylor series of the scaled matrix is summed until the next term falls
/// below machine epsilon relative to the partial sum, which keeps the core
/// error under 1e-16 for every input it sees.
Matrix expm(const Matrix& a, double t);

/// Solves a x = b by LU with partial pivoting.
///
/// A pivot smaller than 1e-13 times the largest absolute entry of `a` raises
/// SingularityError; `system` names the caller's system in the message.
Vector solve(const Matrix& a, const Vector& b, std::string_view system = "linear system");
Matrix solve_many(const Matrix& a, const Matrix& b, std::string_view system = "linear system");
Matrix inverse(const Matrix& a, std::string_view system = "linear system");

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive 21-point Gauss-Kronrod quadrature of f over [lo, hi].
///
/// Throws AccuracyError (with the best estimate attached) if the estimated
/// absolute error exceeds `tol` after the subdivision budget is spent.
double quad(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10);
QuadResult quad_with_error(const std::function<double(double)>& f, double lo, double hi,
                           double tol = 1e-10);

/// Fixed-step classical RK4 for y' = f(t, y) on [0, horizon].
Vector rk4(const std::function<Vector(double, const Vector&)>& f, const Vector& y0,
           double horizon, int steps);

/// RK4 for the linear system y' = a y + forcing(t), with the step rule
/// horizon / max(1000, 100 ||a|| horizon). Only used as a cross-check.
Vector rk4_linear(const Matrix& a, const Vector& y0, double horizon,
                  const std::function<Vector(double)>& forcing = {});

/// Kronecker product a (x) b.
Matrix kron(const Matrix& a, const Matrix& b);

/// Kronecker sum a (+) b = a (x) I + I (x) b.
Matrix kron_sum(const Matrix& a, const Matrix& b);

}  // namespace linalg
}  // namespace mmou
