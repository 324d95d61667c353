#pragma once

// Canonical symplectic structure on R^{2n}, basis predicates and the
// abstract Hamiltonian-system interface.
//
// Convention: J = [[0, I], [-I, 0]], states are stored as x = (q, p) with the
// configuration half on top. Every other header takes J from here.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace symkry {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using StateVector = Vector;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class MisuseError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_even(Index size, const char* what) {
  if (size % 2 != 0) {
    throw DimensionError(std::string(what) + ": odd length " + std::to_string(size));
  }
}

inline void require_same(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": size mismatch " + std::to_string(a) +
                         " vs " + std::to_string(b));
  }
}

}  // namespace detail

/// Half dimension n of a state in R^{2n}.
inline Index half_dim(const Vector& x) {
  detail::require_even(x.size(), "half_dim");
  return x.size() / 2;
}

inline auto position(Vector& x) { return x.head(x.size() / 2); }
inline auto position(const Vector& x) { return x.head(x.size() / 2); }
inline auto momentum(Vector& x) { return x.tail(x.size() / 2); }
inline auto momentum(const Vector& x) { return x.tail(x.size() / 2); }

/// Stacks (q, p) into a single state vector.
inline StateVector make_state(const Vector& q, const Vector& p) {
  detail::require_same(q.size(), p.size(), "make_state");
  StateVector x(2 * q.size());
  x << q, p;
  return x;
}

/// J v = (p, -q) for v = (q, p).
inline Vector apply_J(const Vector& v) {
  detail::require_even(v.size(), "apply_J");
  const Index n = v.size() / 2;
  Vector out(v.size());
  out.head(n) = v.tail(n);
  out.tail(n) = -v.head(n);
  return out;
}

/// J^{-1} v = -J v = (-p, q).
inline Vector apply_J_inv(const Vector& v) {
  detail::require_even(v.size(), "apply_J_inv");
  const Index n = v.size() / 2;
  Vector out(v.size());
  out.head(n) = -v.tail(n);
  out.tail(n) = v.head(n);
  return out;
}

/// J applied to every column of a 2n x m matrix.
inline Matrix apply_J_cols(const Matrix& m) {
  detail::require_even(m.rows(), "apply_J_cols");
  const Index n = m.rows() / 2;
  Matrix out(m.rows(), m.cols());
  out.topRows(n) = m.bottomRows(n);
  out.bottomRows(n) = -m.topRows(n);
  return out;
}

inline Matrix apply_J_inv_cols(const Matrix& m) { return -apply_J_cols(m); }

/// Dense J_n of size 2n x 2n.
inline Matrix canonical_J(Index n) {
  Matrix j = Matrix::Zero(2 * n, 2 * n);
  j.topRightCorner(n, n).setIdentity();
  j.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
  return j;
}

/// omega(x, y) = x^T J y.
inline double omega(const Vector& x, const Vector& y) {
  detail::require_same(x.size(), y.size(), "omega");
  detail::require_even(x.size(), "omega");
  const Index n = x.size() / 2;
  return x.head(n).dot(y.tail(n)) - x.tail(n).dot(y.head(n));
}

enum class BasisKind { orthonormal, symplectic, symplectic_orthonormal };

inline bool is_symplectic_kind(BasisKind kind) { return kind != BasisKind::orthonormal; }

inline const char* to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::orthonormal: return "orthonormal";
    case BasisKind::symplectic: return "symplectic";
    case BasisKind::symplectic_orthonormal: return "symplectic-orthonormal";
  }
  return "?";
}

/// Tall basis U in R^{2n x m} together with the reduced matrix F = U^+ A U.
///
/// Symplectic kinds store the columns as [e_1..e_k | f_1..f_k] so that
/// U^T J_n U = J_k. `image` caches A U when the builder produced it; it may
/// have fewer columns than U (or none) when only part of it is known.
struct BasisMatrix {
  Matrix columns;
  BasisKind kind = BasisKind::orthonormal;
  Matrix reduced;
  Matrix image;

  Index ambient_dim() const { return columns.rows(); }
  Index size() const { return columns.cols(); }
  /// Number of symplectic pairs k (m = 2k) for symplectic kinds.
  Index pairs() const { return columns.cols() / 2; }
};

/// J_k^{-1} y for y in R^{2k}.
inline Vector apply_Jk_inv(const Vector& y) { return apply_J_inv(y); }

/// U^+ v with U^+ = J_k^{-1} U^T J_n. Requires a symplectic kind.
inline Vector symplectic_left_apply(const BasisMatrix& basis, const Vector& v) {
  if (!is_symplectic_kind(basis.kind)) {
    throw MisuseError("symplectic_left_apply: basis kind is " + std::string(to_string(basis.kind)));
  }
  detail::require_same(basis.ambient_dim(), v.size(), "symplectic_left_apply");
  if (basis.size() == 0) return Vector(0);
  return apply_J_inv(basis.columns.transpose() * apply_J(v));
}

/// U^+ M applied column-wise for symplectic kinds.
inline Matrix symplectic_left_apply_cols(const Matrix& columns, const Matrix& m) {
  if (columns.cols() == 0) return Matrix(0, m.cols());
  return apply_J_inv_cols(columns.transpose() * apply_J_cols(m));
}

/// U^+ v for the left inverse that belongs to the basis kind: U^T for
/// orthonormal bases, J_k^{-1} U^T J_n for purely symplectic ones.
inline Vector left_apply(const BasisMatrix& basis, const Vector& v) {
  detail::require_same(basis.ambient_dim(), v.size(), "left_apply");
  if (basis.size() == 0) return Vector(0);
  if (basis.kind == BasisKind::symplectic) return symplectic_left_apply(basis, v);
  return basis.columns.transpose() * v;
}

inline Matrix left_apply_cols(const BasisMatrix& basis, const Matrix& m) {
  if (basis.size() == 0) return Matrix(0, m.cols());
  if (basis.kind == BasisKind::symplectic) return symplectic_left_apply_cols(basis.columns, m);
  return basis.columns.transpose() * m;
}

/// || U^T J_n U - J_k ||_F.
inline double symplectic_defect(const Matrix& u) {
  detail::require_even(u.rows(), "symplectic_defect");
  detail::require_even(u.cols(), "symplectic_defect");
  if (u.cols() == 0) return 0.0;
  const Matrix form = u.transpose() * apply_J_cols(u);
  return (form - canonical_J(u.cols() / 2)).norm();
}

/// || U^T U - I ||_F.
inline double orthonormality_defect(const Matrix& u) {
  return (u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm();
}

/// True iff ||A^T - J A J||_F <= tol * max(1, ||A||_F).
inline bool check_hamiltonian_matrix(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) throw DimensionError("check_hamiltonian_matrix: matrix not square");
  detail::require_even(a.rows(), "check_hamiltonian_matrix");
  const Matrix j = canonical_J(a.rows() / 2);
  const double defect = (a.transpose() - j * a * j).norm();
  return defect <= tol * std::max(1.0, a.norm());
}

/// True iff ||U^T J_n U - J_k||_F <= tol.
inline bool check_symplectic_basis(const Matrix& u, double tol) {
  detail::require_even(u.rows(), "check_symplectic_basis");
  if (u.cols() % 2 != 0) {
    throw DimensionError("check_symplectic_basis: odd column count " + std::to_string(u.cols()));
  }
  return symplectic_defect(u) <= tol;
}

/// Black-box Hamiltonian system x' = f(x) = J^{-1} grad H(x) on R^{2n}.
///
/// Implementations are immutable after construction, so const member
/// functions may be called concurrently.
class HamiltonianSystem {
 public:
  virtual ~HamiltonianSystem() = default;

  virtual Index dim() const = 0;
  virtual Vector field(const Vector& x) const = 0;
  virtual double energy(const Vector& x) const = 0;
  /// Df(x) v.
  virtual Vector jvp(const Vector& x, const Vector& v) const = 0;

  virtual bool is_linear() const { return false; }
  /// For linear systems f(x) = A x + c: returns A v.
  virtual Vector linear_apply(const Vector& v) const {
    if (!is_linear()) throw MisuseError("linear_apply on a nonlinear system");
    return jvp(Vector::Zero(dim()), v);
  }
  /// For linear systems f(x) = A x + c: returns c.
  virtual Vector constant_term() const {
    if (!is_linear()) throw MisuseError("constant_term on a nonlinear system");
    return field(Vector::Zero(dim()));
  }
};

/// Df(x) assembled column by column through jvp. Desk-scale diagnostics only.
inline Matrix densify_jacobian(const HamiltonianSystem& sys, const Vector& x) {
  const Index d = sys.dim();
  Matrix a(d, d);
  Vector e = Vector::Zero(d);
  for (Index j = 0; j < d; ++j) {
    e[j] = 1.0;
    a.col(j) = sys.jvp(x, e);
    e[j] = 0.0;
  }
  return a;
}

/// Relative error of jvp(x, v) against the central difference
/// (f(x + eps v) - f(x - eps v)) / (2 eps) with eps = 1e-6 (1 + ||x||) / ||v||.
inline double jvp_fd_error(const HamiltonianSystem& sys, const Vector& x, const Vector& v) {
  const double vnorm = v.norm();
  if (vnorm == 0.0) return 0.0;
  const double eps = 1e-6 * (1.0 + x.norm()) / vnorm;
  const Vector fd = (sys.field(x + eps * v) - sys.field(x - eps * v)) / (2.0 * eps);
  const Vector an = sys.jvp(x, v);
  return (an - fd).norm() / std::max(an.norm(), 1e-300);
}

/// H(x) = 1/2 x^T S x + c^T x with dense symmetric S, so f(x) = J^{-1}(S x + c).
class QuadraticHamiltonian final : public HamiltonianSystem {
 public:
  QuadraticHamiltonian(Matrix hessian, Vector gradient_offset)
      : s_(std::move(hessian)), c_(std::move(gradient_offset)) {
    if (s_.rows() != s_.cols()) throw DimensionError("QuadraticHamiltonian: S not square");
    detail::require_even(s_.rows(), "QuadraticHamiltonian");
    detail::require_same(s_.rows(), c_.size(), "QuadraticHamiltonian");
    s_ = 0.5 * (s_ + s_.transpose()).eval();
  }

  Index dim() const override { return s_.rows(); }
  Vector field(const Vector& x) const override { return apply_J_inv(s_ * x + c_); }
  double energy(const Vector& x) const override { return 0.5 * x.dot(s_ * x) + c_.dot(x); }
  Vector jvp(const Vector&, const Vector& v) const override { return apply_J_inv(s_ * v); }
  bool is_linear() const override { return true; }
  Vector linear_apply(const Vector& v) const override { return apply_J_inv(s_ * v); }
  Vector constant_term() const override { return apply_J_inv(c_); }

  const Matrix& hessian() const { return s_; }

 private:
  Matrix s_;
  Vector c_;
};

}  // namespace symkry
