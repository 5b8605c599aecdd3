#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mmou/errors.hpp"
#include "mmou/linalg.hpp"
#include "test_support.hpp"

using namespace mmou;
using mmou::testing::random_rates;

TEST_CASE("expm of simple matrices") {
  Matrix nil(2, 2);
  nil << 0, 1, 0, 0;
  const Matrix e = linalg::expm(nil, 3.0);
  CHECK(e(0, 0) == doctest::Approx(1.0));
  CHECK(e(0, 1) == doctest::Approx(3.0));
  CHECK(std::abs(e(1, 0)) < 1e-15);

  Matrix rot(2, 2);
  rot << 0, -1, 1, 0;
  const Matrix r = linalg::expm(rot, 0.7);
  CHECK(std::abs(r(0, 0) - std::cos(0.7)) < 1e-15);
  CHECK(std::abs(r(1, 0) - std::sin(0.7)) < 1e-15);

  const Matrix diag = Vector::LinSpaced(4, -3.0, 2.0).asDiagonal();
  const Matrix ed = linalg::expm(diag, 1.5);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(ed(i, i) / std::exp(1.5 * diag(i, i)) - 1.0) < 1e-14);
  }
  CHECK((linalg::expm(diag, 0.0) - Matrix::Identity(4, 4)).norm() == 0.0);
}

TEST_CASE("expm semigroup and stochasticity on random generators") {
  for (int d = 2; d <= 6; ++d) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const Matrix q = random_rates(d, seed);
      const Matrix a = linalg::expm(q, 0.3);
      const Matrix b = linalg::expm(q, 1.1);
      const Matrix ab = linalg::expm(q, 1.4);
      CHECK((a * b - ab).cwiseAbs().maxCoeff() < 1e-13);
      CHECK((ab.rowwise().sum() - Vector::Ones(d)).cwiseAbs().maxCoeff() < 1e-13);
      CHECK(ab.minCoeff() >= -1e-15);
      // large norms exercise many squarings
      const Matrix far = linalg::expm(q * 50.0, 4.0);
      CHECK((far.rowwise().sum() - Vector::Ones(d)).cwiseAbs().maxCoeff() < 1e-11);
    }
  }
}

TEST_CASE("expm agrees with RK4 on a linear system") {
  const Matrix q = random_rates(4, 9);
  Vector y0 = Vector::Zero(4);
  y0(0) = 1.0;
  const Vector exact = linalg::expm(q.transpose(), 2.0) * y0;
  const Vector rk = linalg::rk4_linear(q.transpose(), y0, 2.0);
  CHECK((exact - rk).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("solve, inverse and singular systems") {
  Matrix a(3, 3);
  a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const Vector b = mmou::testing::vec({1.0, 2.0, 3.0});
  const Vector x = linalg::solve(a, b);
  CHECK((a * x - b).norm() < 1e-14);
  CHECK((a * linalg::inverse(a) - Matrix::Identity(3, 3)).norm() < 1e-14);

  Matrix s(2, 2);
  s << 1, 2, 2, 4;
  CHECK_THROWS_AS(linalg::solve(s, mmou::testing::vec({1.0, 1.0}), "test"), SingularityError);
  CHECK_THROWS_AS(linalg::solve(a, mmou::testing::vec({1.0, 1.0})), DimensionError);
}

TEST_CASE("adaptive quadrature") {
  CHECK(std::abs(linalg::quad([](double x) { return x * x; }, 0.0, 1.0) - 1.0 / 3.0) < 1e-14);
  CHECK(std::abs(linalg::quad([](double x) { return std::sin(x); }, 0.0, std::numbers::pi) - 2.0) <
        1e-13);
  CHECK(std::abs(linalg::quad([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0) - 2.0) < 1e-9);
  CHECK(std::abs(linalg::quad([](double x) { return std::exp(-3.0 * x); }, 0.0, 30.0) - 1.0 / 3.0) <
        1e-13);
  CHECK(linalg::quad([](double) { return 1.0; }, 2.0, 2.0) == 0.0);
  CHECK_THROWS_AS(linalg::quad([](double x) { return x; }, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(linalg::quad([](double x) { return x; }, 0.0, INFINITY), DomainError);
  try {
    linalg::quad([](double x) { return std::sqrt(x); }, 0.0, 1.0, 1e-300);
    FAIL("expected AccuracyError");
  } catch (const AccuracyError& e) {
    CHECK(std::abs(e.estimate() - 2.0 / 3.0) < 1e-10);
    CHECK(e.error_estimate() > 0.0);
  }
}

TEST_CASE("kronecker helpers") {
  const Matrix a = random_rates(2, 3);
  const Matrix b = random_rates(3, 4);
  const Matrix k = linalg::kron(a, b);
  CHECK(k.rows() == 6);
  CHECK(k(1 * 3 + 2, 0 * 3 + 1) == doctest::Approx(a(1, 0) * b(2, 1)));
  const Matrix s = linalg::kron_sum(a, b);
  const Matrix expect = linalg::kron(a, Matrix::Identity(3, 3)) + linalg::kron(Matrix::Identity(2, 2), b);
  CHECK((s - expect).norm() == 0.0);
  // exp(A (+) B) = exp(A) (x) exp(B)
  const Matrix lhs = linalg::expm(s, 0.5);
  const Matrix rhs = linalg::kron(linalg::expm(a, 0.5), linalg::expm(b, 0.5));
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("non-finite input is rejected") {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = NAN;
  CHECK_THROWS_AS(linalg::require_finite(a, "a"), DomainError);
  CHECK_THROWS_AS(linalg::expm(a, 1.0), DomainError);
}
