#include "symkry/core.hpp"
#include "symkry/krylov.hpp"
#include "support/oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace symkry;
using Catch::Matchers::WithinAbs;

TEST_CASE("apply_J swaps halves with a sign", "[core]") {
  Vector e1(2);
  e1 << 1.0, 0.0;
  Vector je1 = apply_J(e1);
  CHECK(je1[0] == 0.0);
  CHECK(je1[1] == -1.0);

  Vector v(4);
  v << 1, 2, 3, 4;
  Vector expect(4);
  expect << 3, 4, -1, -2;
  CHECK(apply_J(v) == expect);

  oracle::Rng rng(1);
  const Vector r = rng.vector(10);
  CHECK(apply_J(apply_J(r)) == -r);
  CHECK(apply_J_inv(apply_J(r)) == r);
  CHECK_THROWS_AS(apply_J(Vector::Ones(3)), DimensionError);
}

TEST_CASE("apply_J agrees with the dense J", "[core]") {
  oracle::Rng rng(2);
  const Matrix j = oracle::dense_J(5);
  const Vector v = rng.vector(10);
  CHECK((apply_J(v) - j * v).norm() == 0.0);
  CHECK((canonical_J(5) - j).norm() == 0.0);
  const Matrix m = rng.matrix(10, 3);
  CHECK((apply_J_cols(m) - j * m).norm() == 0.0);
}

TEST_CASE("omega is the canonical skew form", "[core]") {
  const Index n = 3;
  Vector e1 = Vector::Zero(2 * n), f1 = Vector::Zero(2 * n);
  e1[0] = 1.0;
  f1[n] = 1.0;
  CHECK(omega(e1, f1) == 1.0);

  oracle::Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Vector x = rng.vector(2 * n), y = rng.vector(2 * n);
    CHECK(omega(x, x) == 0.0);
    CHECK_THAT(omega(x, y) + omega(y, x), WithinAbs(0.0, 1e-14));
    CHECK_THAT(omega(x, y), WithinAbs(x.dot(oracle::dense_J(n) * y), 1e-12));
  }
  CHECK_THROWS_AS(omega(Vector::Ones(4), Vector::Ones(6)), DimensionError);
}

TEST_CASE("omega equals <Jx, y> up to transpose convention", "[core]") {
  // x^T J y = -(J x)^T y since J^T = -J.
  oracle::Rng rng(4);
  const Vector x = rng.vector(8), y = rng.vector(8);
  CHECK_THAT(omega(x, y), WithinAbs(-apply_J(x).dot(y), 1e-13));
  CHECK_THAT(omega(x, y), WithinAbs(x.dot(apply_J(y)), 1e-13));
}

TEST_CASE("symplectic_left_apply inverts the canonical embedding", "[core]") {
  const Index n = 4, k = 2;
  BasisMatrix b;
  b.kind = BasisKind::symplectic;
  b.columns = Matrix::Zero(2 * n, 2 * k);
  for (Index i = 0; i < k; ++i) {
    b.columns(i, i) = 1.0;
    b.columns(n + i, k + i) = 1.0;
  }
  oracle::Rng rng(5);
  const Vector v = rng.vector(2 * n);
  const Vector c = symplectic_left_apply(b, v);
  CHECK(c[0] == v[0]);
  CHECK(c[1] == v[1]);
  CHECK(c[2] == v[n]);
  CHECK(c[3] == v[n + 1]);

  const Vector zeta = rng.vector(2 * k);
  CHECK((symplectic_left_apply(b, b.columns * zeta) - zeta).norm() <= 1e-10);

  b.kind = BasisKind::orthonormal;
  CHECK_THROWS_AS(symplectic_left_apply(b, v), MisuseError);
}

TEST_CASE("symplectic_left_apply is a left inverse for Lanczos bases", "[core]") {
  oracle::Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = rng.hamiltonian(8);
    const KrylovOutcome out = hamiltonian_lanczos(dense_action(a), rng.vector(16), 3);
    const Matrix& u = out.basis.columns;
    // Dense J_k^{-1} U^T J_n U against the identity.
    const Index k = u.cols() / 2;
    const Matrix dense = oracle::dense_J(k).inverse() * u.transpose() * oracle::dense_J(8) * u;
    CHECK((dense - Matrix::Identity(2 * k, 2 * k)).norm() <= 1e-9);
    const Vector zeta = rng.vector(2 * k);
    CHECK((symplectic_left_apply(out.basis, u * zeta) - zeta).norm() <= 1e-9 * zeta.norm());
  }
}

TEST_CASE("check_hamiltonian_matrix", "[core]") {
  oracle::Rng rng(7);
  CHECK(check_hamiltonian_matrix(rng.hamiltonian(4), 1e-12));
  CHECK(check_hamiltonian_matrix(Matrix::Zero(6, 6), 1e-12));
  // Generic matrix: the defect ||A^T - J A J|| is O(||A||).
  const Matrix g = rng.matrix(6, 6);
  const Matrix j = oracle::dense_J(3);
  const double defect = (g.transpose() - j * g * j).norm();
  CHECK(defect > 0.1 * g.norm());
  CHECK_FALSE(check_hamiltonian_matrix(g, 1e-8));
  CHECK_THROWS_AS(check_hamiltonian_matrix(Matrix::Zero(3, 3), 1e-8), DimensionError);
}

TEST_CASE("check_symplectic_basis", "[core]") {
  Matrix canon = Matrix::Zero(6, 2);
  canon(0, 0) = 1.0;
  canon(3, 1) = 1.0;
  CHECK(check_symplectic_basis(canon, 1e-12));
  CHECK_FALSE(check_symplectic_basis(2.0 * canon, 1e-3));
  CHECK_THROWS_AS(check_symplectic_basis(Matrix::Zero(6, 3), 1e-10), DimensionError);

  // Plain Arnoldi on a generic Hamiltonian matrix gives an orthonormal, non-symplectic basis.
  oracle::Rng rng(8);
  const Matrix a = rng.hamiltonian(3);
  const KrylovOutcome q = arnoldi(dense_action(a), rng.vector(6), 4);
  const Matrix& u = q.basis.columns;
  const Matrix form = u.transpose() * oracle::dense_J(3) * u;
  CHECK((form - oracle::dense_J(2)).norm() > 1e-2);
  CHECK_FALSE(check_symplectic_basis(u, 1e-10));
}

TEST_CASE("Darboux relations on a symplectic basis", "[core]") {
  oracle::Rng rng(9);
  const Matrix a = rng.hamiltonian(10);
  const KrylovOutcome out = symplectic_arnoldi(dense_action(a), rng.vector(20), 4);
  const Index k = out.basis.pairs();
  const Matrix& u = out.basis.columns;
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      CHECK_THAT(omega(u.col(i), u.col(j)), WithinAbs(0.0, 1e-10));
      CHECK_THAT(omega(u.col(k + i), u.col(k + j)), WithinAbs(0.0, 1e-10));
      CHECK_THAT(omega(u.col(i), u.col(k + j)), WithinAbs(i == j ? 1.0 : 0.0, 1e-10));
    }
  }
}

TEST_CASE("QuadraticHamiltonian field is J^{-1} grad H", "[core]") {
  oracle::Rng rng(10);
  const Matrix s = rng.symmetric(8);
  const Vector c = rng.vector(8);
  QuadraticHamiltonian sys(s, c);
  const Vector x = rng.vector(8);
  const Vector grad = oracle::fd_gradient([&](const Vector& y) { return sys.energy(y); }, x);
  CHECK((sys.field(x) - oracle::dense_J(4).inverse() * grad).norm() <= 1e-6 * grad.norm());
  CHECK(sys.is_linear());
  CHECK((sys.constant_term() - sys.field(Vector::Zero(8))).norm() <= 1e-14);
  CHECK(check_hamiltonian_matrix(densify_jacobian(sys, x), 1e-12));
  CHECK(jvp_fd_error(sys, x, rng.vector(8)) <= 1e-5);
}

TEST_CASE("make_state and halves", "[core]") {
  Vector q(2), p(2);
  q << 1, 2;
  p << 3, 4;
  StateVector x = make_state(q, p);
  CHECK(position(x) == q);
  CHECK(momentum(x) == p);
  CHECK(half_dim(x) == 2);
  CHECK_THROWS_AS(make_state(q, Vector(3)), DimensionError);
}
