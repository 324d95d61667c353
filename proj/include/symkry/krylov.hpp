#pragma once

// Basis builders for the local reduced systems.
//
//   arnoldi              orthonormal basis of K_k(A, v), Hessenberg F
//   symplectic_arnoldi   Arnoldi followed by <.,.>/omega reorthogonalization,
//                        U = [V, J^{-1} V] orthonormal and symplectic
//   isotropic_arnoldi    direct <.,.>/omega orthogonalization, U = [Q, J^{-1} Q]
//   hamiltonian_lanczos  short symplectic recursion, F = [[0, T], [D, 0]]
//
// All Gram-Schmidt sweeps are classical with one reorthogonalization pass.

#include "symkry/core.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <utility>
#include <vector>

namespace symkry {

template <class A>
concept LinearAction = requires(const A& a, const Vector& v) {
  { a(v) } -> std::convertible_to<Vector>;
  { a.dim() } -> std::convertible_to<Index>;
};

/// v -> A v for the Hamiltonian matrix at the current linearization point.
class MatrixAction {
 public:
  MatrixAction(Index dim, std::function<Vector(const Vector&)> apply)
      : dim_(dim), apply_(std::move(apply)) {}

  Index dim() const { return dim_; }
  Vector operator()(const Vector& v) const { return apply_(v); }

 private:
  Index dim_;
  std::function<Vector(const Vector&)> apply_;
};

inline MatrixAction dense_action(Matrix a) {
  const Index d = a.rows();
  return MatrixAction(d, [a = std::move(a)](const Vector& v) -> Vector { return a * v; });
}

/// Df(x) as a matrix action. Keeps references to `sys` and a copy of `x`.
inline MatrixAction jacobian_action(const HamiltonianSystem& sys, Vector x) {
  return MatrixAction(sys.dim(),
                      [&sys, x = std::move(x)](const Vector& v) -> Vector { return sys.jvp(x, v); });
}

enum class Termination { reached_k, invariant_subspace, breakdown };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::reached_k: return "reached_k";
    case Termination::invariant_subspace: return "invariant_subspace";
    case Termination::breakdown: return "breakdown";
  }
  return "?";
}

struct KrylovStats {
  long matvecs = 0;
  long inner_products = 0;

  KrylovStats& operator+=(const KrylovStats& o) {
    matvecs += o.matvecs;
    inner_products += o.inner_products;
    return *this;
  }
};

struct KrylovOutcome {
  BasisMatrix basis;
  Index achieved_dim = 0;  // columns of U
  Index krylov_steps = 0;  // Krylov vectors processed (k' <= k)
  Termination terminated = Termination::reached_k;
  double residual_norm = 0.0;
  KrylovStats stats;
};

struct KrylovOptions {
  /// Invariant subspace when ||r|| <= deflation_tol * (largest ||A q|| seen).
  double deflation_tol = 1e-12;
  /// Lanczos breakdown when |tau| <= breakdown_tol * ||u|| ||A u||.
  double breakdown_tol = 1e-12;
  /// Extension reports `dependent` when the remainder is below this fraction of ||x||.
  double dependence_tol = 1e-10;
  /// Omega-reorthogonalize each new Lanczos vector against all previous pairs.
  bool lanczos_reorthogonalize = false;
};

namespace detail {

inline void require_start(const Vector& v, Index dim, Index k, Index kmax, const char* what) {
  require_same(v.size(), dim, what);
  if (v.norm() == 0.0) throw MisuseError(std::string(what) + ": zero start vector");
  if (k < 1 || k > kmax) {
    throw MisuseError(std::string(what) + ": requested dimension " + std::to_string(k) +
                      " outside [1, " + std::to_string(kmax) + "]");
  }
}

/// Two classical Gram-Schmidt sweeps of r against the orthonormal columns of q.
/// Returns the accumulated coefficients.
inline Vector cgs2(const Eigen::Ref<const Matrix>& q, Vector& r, KrylovStats& stats) {
  if (q.cols() == 0) return Vector(0);
  Vector h = q.transpose() * r;
  r.noalias() -= q * h;
  Vector h2 = q.transpose() * r;
  r.noalias() -= q * h2;
  stats.inner_products += 2 * q.cols();
  return h + h2;
}

/// r <- r - U U^+ r for a symplectic U = [E | F] (two sweeps).
inline void symplectic_project_out(const Eigen::Ref<const Matrix>& e, const Eigen::Ref<const Matrix>& f,
                                   Vector& r, KrylovStats& stats) {
  if (e.cols() == 0) return;
  for (int sweep = 0; sweep < 2; ++sweep) {
    const Vector jr = apply_J(r);
    const Vector omega_e = e.transpose() * jr;  // omega(e_i, r)
    const Vector omega_f = f.transpose() * jr;  // omega(f_i, r)
    r.noalias() += e * omega_f;
    r.noalias() -= f * omega_e;
    stats.inner_products += 2 * e.cols();
  }
}

/// [V, J^{-1} V]
inline Matrix symplectic_completion(const Matrix& v) {
  Matrix u(v.rows(), 2 * v.cols());
  u.leftCols(v.cols()) = v;
  u.rightCols(v.cols()) = apply_J_inv_cols(v);
  return u;
}

template <LinearAction Action>
Matrix apply_cols(const Action& a, const Matrix& u, KrylovStats& stats) {
  Matrix out(u.rows(), u.cols());
  for (Index j = 0; j < u.cols(); ++j) out.col(j) = a(Vector(u.col(j)));
  stats.matvecs += u.cols();
  return out;
}

/// Fills image = A U, F = U^T A U and the projection residual for the
/// orthonormal-symplectic processes.
template <LinearAction Action>
void finish_orthonormal_symplectic(const Action& a, KrylovOutcome& out) {
  BasisMatrix& b = out.basis;
  b.image = apply_cols(a, b.columns, out.stats);
  b.reduced = b.columns.transpose() * b.image;
  out.stats.inner_products += b.size() * b.size();
  out.residual_norm = (b.image - b.columns * b.reduced).norm();
  out.achieved_dim = b.size();
}

}  // namespace detail

/// Orthonormal basis of K_k(A, v) with F = Q^T A Q upper Hessenberg.
/// Uses exactly k' matrix actions for k' achieved vectors.
template <LinearAction Action>
KrylovOutcome arnoldi(const Action& a, const Vector& v, Index k, const KrylovOptions& opt = {}) {
  const Index d = a.dim();
  detail::require_start(v, d, k, d, "arnoldi");

  KrylovOutcome out;
  Matrix q(d, k);
  Matrix image(d, k);
  Matrix hess = Matrix::Zero(k, k);
  q.col(0) = v / v.norm();
  out.stats.inner_products += 1;
  double norm_est = 0.0;
  Index m = k;
  out.terminated = Termination::reached_k;

  for (Index j = 0; j < k; ++j) {
    Vector w = a(Vector(q.col(j)));
    ++out.stats.matvecs;
    image.col(j) = w;
    norm_est = std::max(norm_est, w.norm());
    const Vector h = detail::cgs2(q.leftCols(j + 1), w, out.stats);
    hess.col(j).head(j + 1) = h;
    const double beta = w.norm();
    ++out.stats.inner_products;
    out.residual_norm = beta;
    if (j + 1 < k && beta <= opt.deflation_tol * norm_est) {
      m = j + 1;
      out.terminated = Termination::invariant_subspace;
      break;
    }
    if (j + 1 < k) {
      q.col(j + 1) = w / beta;
      hess(j + 1, j) = beta;
    }
  }

  out.basis.kind = BasisKind::orthonormal;
  out.basis.columns = q.leftCols(m);
  out.basis.image = image.leftCols(m);
  out.basis.reduced = hess.topLeftCorner(m, m);
  out.achieved_dim = m;
  out.krylov_steps = m;
  return out;
}

/// Symplectic and orthonormal U = [V, J^{-1} V] whose range contains K_k(A, v).
/// V is the J-orthogonalized Krylov sequence. A Krylov vector already inside
/// span(V, J V) adds no column; the sequence is then extended further until
/// V has k columns or the Krylov space is invariant. F = U^T A U costs 2k'
/// extra actions for k' columns of V.
template <LinearAction Action>
KrylovOutcome symplectic_arnoldi(const Action& a, const Vector& v, Index k,
                                 const KrylovOptions& opt = {}) {
  const Index d = a.dim();
  detail::require_even(d, "symplectic_arnoldi");
  detail::require_start(v, d, k, d / 2, "symplectic_arnoldi");

  KrylovOutcome out;
  Matrix q(d, d);    // orthonormal Krylov basis
  Matrix iso(d, k);  // V
  q.col(0) = v / v.norm();
  iso.col(0) = q.col(0);
  out.stats.inner_products += 1;
  Index nq = 1;
  Index nv = 1;
  double norm_est = 0.0;
  out.terminated = Termination::reached_k;

  while (nv < k) {
    if (nq == d) {
      out.terminated = Termination::invariant_subspace;
      break;
    }
    Vector r = a(Vector(q.col(nq - 1)));
    ++out.stats.matvecs;
    norm_est = std::max(norm_est, r.norm());
    detail::cgs2(q.leftCols(nq), r, out.stats);
    const double beta = r.norm();
    ++out.stats.inner_products;
    out.residual_norm = beta;
    if (beta <= opt.deflation_tol * norm_est) {
      out.terminated = Termination::invariant_subspace;
      break;
    }
    q.col(nq++) = r / beta;

    // Orthogonalize the new Krylov vector against V and J V.
    Matrix w(d, 2 * nv);
    w.leftCols(nv) = iso.leftCols(nv);
    w.rightCols(nv) = apply_J_cols(iso.leftCols(nv));
    Vector s = q.col(nq - 1);
    detail::cgs2(w, s, out.stats);
    const double snorm = s.norm();
    ++out.stats.inner_products;
    if (snorm <= opt.dependence_tol) continue;
    iso.col(nv++) = s / snorm;
  }

  out.basis.kind = BasisKind::symplectic_orthonormal;
  out.basis.columns = detail::symplectic_completion(iso.leftCols(nv));
  out.krylov_steps = nq;
  detail::finish_orthonormal_symplectic(a, out);
  return out;
}

/// Isotropic Arnoldi: Q orthonormal with Q^T J Q = 0, U = [Q, J^{-1} Q].
/// The range need not contain K_k(A, v). When A q has nothing left after
/// removing Q and J Q, the next action is applied to A q itself.
template <LinearAction Action>
KrylovOutcome isotropic_arnoldi(const Action& a, const Vector& v, Index k,
                                const KrylovOptions& opt = {}) {
  const Index d = a.dim();
  detail::require_even(d, "isotropic_arnoldi");
  detail::require_start(v, d, k, d / 2, "isotropic_arnoldi");

  KrylovOutcome out;
  Matrix q(d, k);
  q.col(0) = v / v.norm();
  out.stats.inner_products += 1;
  Index nq = 1;
  Vector z = q.col(0);
  double norm_est = 0.0;
  out.terminated = Termination::reached_k;

  for (Index iter = 0; nq < k; ++iter) {
    if (iter == d) {
      out.terminated = Termination::breakdown;
      break;
    }
    const Vector w = a(z);
    ++out.stats.matvecs;
    const double wnorm = w.norm();
    norm_est = std::max(norm_est, wnorm);
    Vector r = w;
    // Q and J Q are mutually orthogonal, so the two blocks can be swept in turn.
    detail::cgs2(q.leftCols(nq), r, out.stats);
    if (r.norm() <= opt.deflation_tol * norm_est) {
      out.terminated = Termination::invariant_subspace;
      break;
    }
    const Matrix jq = apply_J_cols(q.leftCols(nq));
    detail::cgs2(jq, r, out.stats);
    detail::cgs2(q.leftCols(nq), r, out.stats);
    const double rnorm = r.norm();
    out.stats.inner_products += 2;
    out.residual_norm = rnorm;
    if (rnorm <= opt.dependence_tol * wnorm) {
      z = w / wnorm;
      continue;
    }
    q.col(nq++) = r / rnorm;
    z = q.col(nq - 1);
  }

  out.basis.kind = BasisKind::symplectic_orthonormal;
  out.basis.columns = detail::symplectic_completion(q.leftCols(nq));
  out.krylov_steps = nq;
  detail::finish_orthonormal_symplectic(a, out);
  return out;
}

/// Hamiltonian Lanczos (two-sided symplectic recursion).
///
/// Produces U = [u_1..u_k, v_1..v_k] with U^T J U = J_k, A u_j = delta_j v_j,
/// A v_j = beta_{j-1} u_{j-1} + alpha_j u_j + beta_j u_{j+1}, and assembles
/// F = [[0, T], [D, 0]] from the coefficients. Two actions per pair.
template <LinearAction Action>
KrylovOutcome hamiltonian_lanczos(const Action& a, const Vector& v, Index k,
                                  const KrylovOptions& opt = {}) {
  const Index d = a.dim();
  detail::require_even(d, "hamiltonian_lanczos");
  detail::require_start(v, d, k, d / 2, "hamiltonian_lanczos");

  KrylovOutcome out;
  Matrix e(d, k), f(d, k), img_e(d, k), img_f(d, k);
  Vector alpha = Vector::Zero(k), beta = Vector::Zero(k), delta = Vector::Zero(k);

  Vector u = v / v.norm();
  out.stats.inner_products += 1;
  Vector u_prev = Vector::Zero(d);
  Index pairs = k;
  out.terminated = Termination::reached_k;

  for (Index j = 0; j < k; ++j) {
    const Vector w = a(u);
    ++out.stats.matvecs;
    const double tau = omega(u, w);
    ++out.stats.inner_products;
    if (!(std::abs(tau) > opt.breakdown_tol * u.norm() * w.norm())) {
      pairs = j;
      out.terminated = Termination::breakdown;
      break;
    }
    const double sigma = std::sqrt(std::abs(tau));
    const double sgn = tau > 0.0 ? 1.0 : -1.0;
    u /= sigma;
    if (j > 0) beta[j - 1] = sigma;
    delta[j] = sgn;
    e.col(j) = u;
    f.col(j) = sgn * w / sigma;
    img_e.col(j) = w / sigma;

    const Vector x = a(Vector(f.col(j)));
    ++out.stats.matvecs;
    img_f.col(j) = x;
    alpha[j] = -omega(f.col(j), x);
    ++out.stats.inner_products;
    Vector r = x - alpha[j] * u;
    if (j > 0) r -= beta[j - 1] * u_prev;
    if (opt.lanczos_reorthogonalize) {
      detail::symplectic_project_out(e.leftCols(j + 1), f.leftCols(j + 1), r, out.stats);
    }
    out.residual_norm = r.norm();
    ++out.stats.inner_products;
    u_prev = u;
    u = std::move(r);
    if (j + 1 < k && out.residual_norm <= opt.deflation_tol * x.norm()) {
      pairs = j + 1;
      out.terminated = Termination::invariant_subspace;
      break;
    }
  }

  BasisMatrix& b = out.basis;
  b.kind = BasisKind::symplectic;
  b.columns.resize(d, 2 * pairs);
  b.columns << e.leftCols(pairs), f.leftCols(pairs);
  b.image.resize(d, 2 * pairs);
  b.image << img_e.leftCols(pairs), img_f.leftCols(pairs);
  b.reduced = Matrix::Zero(2 * pairs, 2 * pairs);
  for (Index i = 0; i < pairs; ++i) {
    b.reduced(pairs + i, i) = delta[i];
    b.reduced(i, pairs + i) = alpha[i];
    if (i + 1 < pairs) {
      b.reduced(i, pairs + i + 1) = beta[i];
      b.reduced(i + 1, pairs + i) = beta[i];
    }
  }
  out.achieved_dim = 2 * pairs;
  out.krylov_steps = 2 * pairs;
  return out;
}

enum class BasisProcess { arnoldi, symplectic_arnoldi, isotropic_arnoldi, hamiltonian_lanczos };

inline const char* to_string(BasisProcess p) {
  switch (p) {
    case BasisProcess::arnoldi: return "arnoldi";
    case BasisProcess::symplectic_arnoldi: return "symplectic-arnoldi";
    case BasisProcess::isotropic_arnoldi: return "isotropic-arnoldi";
    case BasisProcess::hamiltonian_lanczos: return "hamiltonian-lanczos";
  }
  return "?";
}

inline bool produces_symplectic(BasisProcess p) { return p != BasisProcess::arnoldi; }

/// Krylov vector count for a requested total column count.
inline Index krylov_vectors_for(BasisProcess p, Index columns) {
  return produces_symplectic(p) ? columns / 2 : columns;
}

template <LinearAction Action>
KrylovOutcome build_basis(BasisProcess p, const Action& a, const Vector& v, Index k,
                          const KrylovOptions& opt = {}) {
  switch (p) {
    case BasisProcess::arnoldi: return arnoldi(a, v, k, opt);
    case BasisProcess::symplectic_arnoldi: return symplectic_arnoldi(a, v, k, opt);
    case BasisProcess::isotropic_arnoldi: return isotropic_arnoldi(a, v, k, opt);
    case BasisProcess::hamiltonian_lanczos: return hamiltonian_lanczos(a, v, k, opt);
  }
  throw MisuseError("build_basis: unknown process");
}

struct ExtensionResult {
  BasisMatrix basis;
  bool dependent = false;
  KrylovStats stats;
};

namespace detail {

/// Recomputes image columns from `first_new` on and F = U^+ (A U).
template <LinearAction Action>
void refresh_reduction(const Action& a, BasisMatrix& b, const Matrix& old_image,
                       const std::vector<std::pair<Index, Index>>& carried, KrylovStats& stats) {
  // carried: (new column index, old column index) pairs whose image is known.
  b.image.resize(b.ambient_dim(), b.size());
  std::vector<bool> known(static_cast<std::size_t>(b.size()), false);
  for (auto [to, from] : carried) {
    if (from < old_image.cols()) {
      b.image.col(to) = old_image.col(from);
      known[static_cast<std::size_t>(to)] = true;
    }
  }
  for (Index j = 0; j < b.size(); ++j) {
    if (!known[static_cast<std::size_t>(j)]) {
      b.image.col(j) = a(Vector(b.columns.col(j)));
      ++stats.matvecs;
    }
  }
  b.reduced = left_apply_cols(b, b.image);
  stats.inner_products += b.size() * b.size();
}

}  // namespace detail

/// Adjoins x (and a symplectic partner) to a symplectic basis [V | W]:
/// x^ = x - U U^+ x normalized to unit length, w = x~ / omega(x^, x~) with
/// x~ = J x^ - U U^+ J x^, giving U' = [V, x^ | W, w].
inline ExtensionResult extend_basis_symplectic(const BasisMatrix& basis, const Vector& x,
                                               const KrylovOptions& opt = {}) {
  if (!is_symplectic_kind(basis.kind)) throw MisuseError("extend_basis_symplectic: basis not symplectic");
  detail::require_same(basis.ambient_dim() == 0 ? x.size() : basis.ambient_dim(), x.size(),
                       "extend_basis_symplectic");
  detail::require_even(x.size(), "extend_basis_symplectic");
  const double xnorm = x.norm();
  if (xnorm == 0.0) throw MisuseError("extend_basis_symplectic: zero vector");

  ExtensionResult res;
  const Index d = x.size();
  const Index k = basis.size() / 2;
  const Matrix cols = basis.size() == 0 ? Matrix(d, 0) : basis.columns;
  const auto e = cols.leftCols(k);
  const auto f = cols.rightCols(k);

  Vector xh = x;
  detail::symplectic_project_out(e, f, xh, res.stats);
  const double xh_norm = xh.norm();
  if (xh_norm <= opt.dependence_tol * xnorm) {
    res.basis = basis;
    res.dependent = true;
    return res;
  }
  xh /= xh_norm;
  Vector xt = apply_J(xh);
  detail::symplectic_project_out(e, f, xt, res.stats);
  const double pairing = omega(xh, xt);
  res.stats.inner_products += 3;
  if (!(std::abs(pairing) > opt.dependence_tol * xt.norm())) {
    throw NumericalError("extend_basis_symplectic: degenerate pair (omega(x^, x~) ~ 0)");
  }
  const Vector w = xt / pairing;

  BasisMatrix& b = res.basis;
  b.columns.resize(d, 2 * k + 2);
  b.columns << e, xh, f, w;
  b.kind = BasisKind::symplectic;
  if (basis.kind == BasisKind::symplectic_orthonormal &&
      orthonormality_defect(b.columns) <= 1e-10) {
    b.kind = BasisKind::symplectic_orthonormal;
  }
  return res;
}

template <LinearAction Action>
ExtensionResult extend_basis_symplectic(const BasisMatrix& basis, const Vector& x, const Action& a,
                                        const KrylovOptions& opt = {}) {
  ExtensionResult res = extend_basis_symplectic(basis, x, opt);
  if (res.dependent) return res;
  const Index k = basis.size() / 2;
  std::vector<std::pair<Index, Index>> carried;
  for (Index i = 0; i < k; ++i) {
    carried.emplace_back(i, i);
    carried.emplace_back(k + 1 + i, k + i);
  }
  detail::refresh_reduction(a, res.basis, basis.image, carried, res.stats);
  return res;
}

/// Appends the normalized remainder of x to an orthonormal basis.
inline ExtensionResult extend_basis_orthogonal(const BasisMatrix& basis, const Vector& x,
                                               const KrylovOptions& opt = {}) {
  if (basis.kind != BasisKind::orthonormal) throw MisuseError("extend_basis_orthogonal: basis not orthonormal");
  if (basis.size() > 0) detail::require_same(basis.ambient_dim(), x.size(), "extend_basis_orthogonal");
  const double xnorm = x.norm();
  if (xnorm == 0.0) throw MisuseError("extend_basis_orthogonal: zero vector");

  ExtensionResult res;
  const Index d = x.size();
  const Matrix cols = basis.size() == 0 ? Matrix(d, 0) : basis.columns;
  Vector r = x;
  detail::cgs2(cols, r, res.stats);
  const double rnorm = r.norm();
  if (rnorm <= opt.dependence_tol * xnorm) {
    res.basis = basis;
    res.dependent = true;
    return res;
  }
  res.basis.kind = BasisKind::orthonormal;
  res.basis.columns.resize(d, cols.cols() + 1);
  res.basis.columns << cols, r / rnorm;
  return res;
}

template <LinearAction Action>
ExtensionResult extend_basis_orthogonal(const BasisMatrix& basis, const Vector& x, const Action& a,
                                        const KrylovOptions& opt = {}) {
  ExtensionResult res = extend_basis_orthogonal(basis, x, opt);
  if (res.dependent) return res;
  std::vector<std::pair<Index, Index>> carried;
  for (Index i = 0; i < basis.size(); ++i) carried.emplace_back(i, i);
  detail::refresh_reduction(a, res.basis, basis.image, carried, res.stats);
  return res;
}

/// Relative projection residual ||(I - U U^+) y|| / ||y|| for the kind's left inverse.
inline double projection_residual(const BasisMatrix& basis, const Vector& y) {
  const double ynorm = y.norm();
  if (ynorm == 0.0) return 0.0;
  if (basis.size() == 0) return 1.0;
  return (y - basis.columns * left_apply(basis, y)).norm() / ynorm;
}

}  // namespace symkry
