#pragma once

// Krylov-projected exponential integrators for x' = f(x):
//
//   EE    x+ = x + h U phi(hF) U^+ f(x)
//   EEMP  x+ = x + U e^{hF} U^+ (x- - x) + 2h U phi(hF) U^+ f(x)
//   IEMP  0  = -e^{hF} xi + h phi(hF) U^+ f(x + U xi)
//         xi+ = xi - e^{2hF} xi + 2h phi(2hF) U^+ f(x + U xi),   x+ = x + U xi+
//
// U and F = U^+ Df U are rebuilt every step at the linearization point.

#include "symkry/core.hpp"
#include "symkry/krylov.hpp"
#include "symkry/matfun.hpp"

#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>

namespace symkry {

enum class Method { ee, eemp, iemp };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::ee: return "EE";
    case Method::eemp: return "EEMP";
    case Method::iemp: return "IEMP";
  }
  return "?";
}

struct FixedPointOptions {
  double tol = 1e-12;
  int max_iter = 50;
  /// Also accept once increments stop shrinking below stall_tol * (1 + |xi|):
  /// the iteration has reached its rounding floor.
  double stall_tol = 1e-8;
};

struct StepperConfig {
  Method method = Method::ee;
  BasisProcess process = BasisProcess::arnoldi;
  /// Total columns of U; halved into Krylov vectors for symplectic processes.
  Index basis_dim = 10;
  /// Step size. For IEMP this is the macro step, the reduced problem uses h/2.
  double h = 0.0;
  FixedPointOptions fixed_point;
  /// IEMP: rebuild the Jacobian and basis at the converged midpoint and re-solve.
  bool iemp_refreeze = false;
  KrylovOptions krylov;
  /// Restarts with a perturbed start vector after a breakdown (0 = fail at once).
  int breakdown_retries = 0;
  double breakdown_perturbation = 1e-10;
  std::uint64_t seed = 0;
};

struct StepperState {
  StateVector x;
  std::optional<StateVector> x_prev;
  double t = 0.0;
};

class BreakdownError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// IEMP fixed point did not converge; carries the last increment norm.
class StepFailure : public NumericalError {
 public:
  StepFailure(const std::string& what, double residual) : NumericalError(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct StepInfo {
  Index basis_dim = 0;
  int fp_iters = 0;
  long matvecs = 0;
  long field_evals = 0;
};

struct StepResult {
  StateVector x;
  StepInfo info;
};

struct IempReduced {
  Vector xi;
  Vector xi_plus;
  int iterations = 0;
  double last_increment = 0.0;
  long field_evals = 0;
};

struct IempResult {
  StateVector x_plus;
  StateVector x_mid;
  BasisMatrix basis;
  IempReduced reduced;
  StepInfo info;
};

// Projected update formulas on a prepared basis.

inline Vector ee_update(const BasisMatrix& b, const Vector& x, const Vector& fx, double h) {
  if (b.size() == 0 || h == 0.0) return x;
  const Matrix phi = phi1(h * b.reduced);
  return x + h * (b.columns * (phi * left_apply(b, fx)));
}

inline Vector eemp_update(const BasisMatrix& b, const Vector& x, const Vector& x_prev,
                          const Vector& fx, double h) {
  if (b.size() == 0) return x_prev;
  const ExpPhi ep = exp_and_phi(h * b.reduced);
  const Vector coeff = ep.exp * left_apply(b, x_prev - x) + 2.0 * h * (ep.phi * left_apply(b, fx));
  return x + b.columns * coeff;
}

/// Solves the reduced implicit relation by the fixed point
///   xi <- h phi(hF) (U^+ f(x + U xi) - F xi),
/// which has the same solution as xi = h phi(-hF) U^+ f(x + U xi) and treats
/// the linear part exactly, then forms xi+.
inline IempReduced iemp_reduced_solve(const HamiltonianSystem& sys, const BasisMatrix& b,
                                      const Vector& x, const Vector& xi0, double h,
                                      const FixedPointOptions& fp) {
  IempReduced out;
  const Index m = b.size();
  if (m == 0) {
    out.xi = Vector(0);
    out.xi_plus = Vector(0);
    return out;
  }
  const ExpPhi single = exp_and_phi(h * b.reduced);
  const ExpPhi twice = exp_and_phi(2.0 * h * b.reduced);
  const Matrix hphi = h * single.phi;

  auto reduced_field = [&](const Vector& xi) {
    ++out.field_evals;
    return Vector(left_apply(b, sys.field(x + b.columns * xi)));
  };

  Vector xi = xi0;
  bool converged = false;
  double prev_increment = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= fp.max_iter; ++it) {
    const Vector next = hphi * (reduced_field(xi) - b.reduced * xi);
    out.last_increment = (next - xi).norm();
    const double scale = 1.0 + xi.norm();
    xi = next;
    out.iterations = it;
    if (!xi.allFinite()) break;
    if (out.last_increment <= fp.tol * scale ||
        (out.last_increment >= prev_increment && out.last_increment <= fp.stall_tol * scale)) {
      converged = true;
      break;
    }
    prev_increment = out.last_increment;
  }
  if (!converged) {
    throw StepFailure("IEMP fixed point did not converge in " + std::to_string(out.iterations) +
                          " iterations (last increment " + std::to_string(out.last_increment) + ")",
                      out.last_increment);
  }
  const Vector g = reduced_field(xi);
  out.xi = xi;
  out.xi_plus = xi - twice.exp * xi + 2.0 * h * (twice.phi * g);
  return out;
}

/// Stateful stepper: owns the configuration, the breakdown-restart RNG and
/// running counters. One instance per trajectory.
class Stepper {
 public:
  Stepper(const HamiltonianSystem& sys, StepperConfig cfg) : sys_(sys), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    if (cfg_.basis_dim < 1) throw MisuseError("basis_dim must be positive");
    if (produces_symplectic(cfg_.process) && cfg_.basis_dim % 2 != 0) {
      throw MisuseError("basis_dim must be even for symplectic processes");
    }
  }

  const StepperConfig& config() const { return cfg_; }
  const HamiltonianSystem& system() const { return sys_; }
  long breakdown_restarts() const { return restarts_; }

  /// Krylov basis of Df(lin_point) started from `start`. Empty when start = 0.
  KrylovOutcome local_basis(const Vector& lin_point, const Vector& start) {
    KrylovOutcome out;
    const Index d = sys_.dim();
    if (start.norm() == 0.0) {
      out.basis.kind = produces_symplectic(cfg_.process) ? BasisKind::symplectic_orthonormal
                                                         : BasisKind::orthonormal;
      out.basis.columns = Matrix(d, 0);
      out.basis.image = Matrix(d, 0);
      out.basis.reduced = Matrix(0, 0);
      out.terminated = Termination::invariant_subspace;
      return out;
    }
    const MatrixAction action = jacobian_action(sys_, lin_point);
    const Index kmax = produces_symplectic(cfg_.process) ? d / 2 : d;
    const Index k = std::min(krylov_vectors_for(cfg_.process, cfg_.basis_dim), kmax);
    Vector v = start;
    KrylovStats spent;
    for (int attempt = 0;; ++attempt) {
      out = build_basis(cfg_.process, action, v, k, cfg_.krylov);
      spent += out.stats;
      if (out.terminated != Termination::breakdown) break;
      if (attempt >= cfg_.breakdown_retries) {
        throw BreakdownError(std::string(to_string(cfg_.process)) + " broke down after " +
                             std::to_string(out.achieved_dim) + " columns (attempt " +
                             std::to_string(attempt + 1) + ")");
      }
      ++restarts_;
      std::normal_distribution<double> normal;
      Vector noise(d);
      for (Index i = 0; i < d; ++i) noise[i] = normal(rng_);
      v = start + cfg_.breakdown_perturbation * start.norm() / noise.norm() * noise;
    }
    out.stats = spent;
    return out;
  }

  StepResult ee(const Vector& x) { return ee(x, cfg_.h); }

  StepResult ee(const Vector& x, double h) {
    StepResult r;
    const Vector fx = sys_.field(x);
    r.info.field_evals = 1;
    KrylovOutcome kb = local_basis(x, fx);
    r.x = ee_update(kb.basis, x, fx, h);
    r.info.basis_dim = kb.basis.size();
    r.info.matvecs = kb.stats.matvecs;
    check_finite(r.x, "EE");
    return r;
  }

  StepResult eemp(const Vector& x, const Vector& x_prev) {
    StepResult r;
    const Vector fx = sys_.field(x);
    r.info.field_evals = 1;
    KrylovOutcome kb = local_basis(x, fx);
    r.info.matvecs = kb.stats.matvecs;
    BasisMatrix basis = adjoin(std::move(kb.basis), x, x_prev - x, r.info);
    r.x = eemp_update(basis, x, x_prev, fx, cfg_.h);
    r.info.basis_dim = basis.size();
    check_finite(r.x, "EEMP");
    return r;
  }

  /// EEMP basis: Krylov basis at x from f(x), extended by x_prev - x.
  BasisMatrix eemp_basis(const Vector& x, const Vector& x_prev) {
    StepInfo info;
    KrylovOutcome kb = local_basis(x, sys_.field(x));
    return adjoin(std::move(kb.basis), x, x_prev - x, info);
  }

  IempResult iemp(const Vector& x) {
    IempResult r;
    const double h = 0.5 * cfg_.h;
    const Vector fx = sys_.field(x);
    r.info.field_evals = 1;

    // Predictor: one EE step of size h approximates the midpoint.
    KrylovOutcome k0 = local_basis(x, fx);
    r.info.matvecs += k0.stats.matvecs;
    const Vector x_tilde = ee_update(k0.basis, x, fx, h);

    KrylovOutcome kb = local_basis(x_tilde, fx);
    r.info.matvecs += kb.stats.matvecs;
    r.basis = std::move(kb.basis);
    Vector xi0 = r.basis.size() > 0 ? left_apply(r.basis, x_tilde - x) : Vector(0);
    r.reduced = iemp_reduced_solve(sys_, r.basis, x, xi0, h, cfg_.fixed_point);
    int iters = r.reduced.iterations;
    long evals = r.reduced.field_evals;

    if (cfg_.iemp_refreeze && r.basis.size() > 0) {
      const Vector x_mid = x + r.basis.columns * r.reduced.xi;
      const Vector f_mid = sys_.field(x_mid);
      ++r.info.field_evals;
      KrylovOutcome km = local_basis(x_mid, f_mid);
      r.info.matvecs += km.stats.matvecs;
      r.basis = std::move(km.basis);
      xi0 = r.basis.size() > 0 ? left_apply(r.basis, x_mid - x) : Vector(0);
      r.reduced = iemp_reduced_solve(sys_, r.basis, x, xi0, h, cfg_.fixed_point);
      iters += r.reduced.iterations;
      evals += r.reduced.field_evals;
    }

    r.info.fp_iters = iters;
    r.info.field_evals += evals;
    r.info.basis_dim = r.basis.size();
    if (r.basis.size() == 0) {
      r.x_mid = x;
      r.x_plus = x;
    } else {
      r.x_mid = x + r.basis.columns * r.reduced.xi;
      r.x_plus = x + r.basis.columns * r.reduced.xi_plus;
    }
    check_finite(r.x_plus, "IEMP");
    return r;
  }

 private:
  BasisMatrix adjoin(BasisMatrix basis, const Vector& x, const Vector& diff, StepInfo& info) {
    if (diff.norm() == 0.0) return basis;
    const MatrixAction action = jacobian_action(sys_, x);
    ExtensionResult ext = is_symplectic_kind(basis.kind)
                              ? extend_basis_symplectic(basis, diff, action, cfg_.krylov)
                              : extend_basis_orthogonal(basis, diff, action, cfg_.krylov);
    info.matvecs += ext.stats.matvecs;
    return std::move(ext.basis);
  }

  static void check_finite(const Vector& x, const char* what) {
    if (!x.allFinite()) throw NumericalError(std::string(what) + ": non-finite state");
  }

  const HamiltonianSystem& sys_;
  StepperConfig cfg_;
  std::mt19937_64 rng_;
  long restarts_ = 0;
};

inline Vector step_ee(const HamiltonianSystem& sys, const StepperConfig& cfg, const Vector& x) {
  return Stepper(sys, cfg).ee(x).x;
}

inline Vector step_eemp(const HamiltonianSystem& sys, const StepperConfig& cfg, const Vector& x,
                        const Vector& x_prev) {
  return Stepper(sys, cfg).eemp(x, x_prev).x;
}

inline IempResult step_iemp(const HamiltonianSystem& sys, const StepperConfig& cfg, const Vector& x) {
  return Stepper(sys, cfg).iemp(x);
}

struct IntegrationCounters {
  long matvecs = 0;
  long field_evals = 0;
  long fp_iters = 0;
  long breakdown_restarts = 0;
  Index basis_dim_min = 0;
  Index basis_dim_max = 0;
};

enum class RunStatus { completed, step_failure, diverged };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::step_failure: return "step-failure";
    case RunStatus::diverged: return "diverged";
  }
  return "?";
}

struct TrajectorySummary {
  StateVector x_final;
  double t_final = 0.0;
  Index steps_done = 0;
  RunStatus status = RunStatus::completed;
  std::string message;
  IntegrationCounters counters;
};

using Observer = std::function<void(Index step, double t, const Vector& x, const StepInfo& info)>;

struct IntegrationOptions {
  /// Abort when ||x|| exceeds this multiple of ||x0|| (0 disables the guard).
  double divergence_factor = 0.0;
};

/// Advances n_steps uniform steps of size t_final / n_steps. EEMP takes its
/// first step with EE. The observer sees step 0 and every completed step.
/// Step errors end the run early; the summary then holds the last good state.
inline TrajectorySummary integrate(const HamiltonianSystem& sys, StepperConfig cfg, const Vector& x0,
                                   double t_final, Index n_steps, const Observer& observer = {},
                                   const IntegrationOptions& opts = {}) {
  if (n_steps < 1) throw MisuseError("integrate: n_steps must be >= 1");
  detail::require_same(x0.size(), sys.dim(), "integrate");
  const double h = t_final / static_cast<double>(n_steps);
  cfg.h = h;
  Stepper stepper(sys, cfg);

  TrajectorySummary s;
  IntegrationCounters& c = s.counters;
  c.basis_dim_min = std::numeric_limits<Index>::max();
  Vector x = x0;
  Vector x_prev;
  const double x0_norm = std::max(x0.norm(), std::numeric_limits<double>::min());
  if (observer) observer(0, 0.0, x, StepInfo{});

  for (Index i = 1; i <= n_steps; ++i) {
    StepResult step;
    try {
      switch (cfg.method) {
        case Method::ee: step = stepper.ee(x); break;
        case Method::eemp:
          step = (i == 1) ? stepper.ee(x) : stepper.eemp(x, x_prev);
          break;
        case Method::iemp: {
          IempResult r = stepper.iemp(x);
          step.x = std::move(r.x_plus);
          step.info = r.info;
          break;
        }
      }
    } catch (const NumericalError& e) {
      s.status = RunStatus::step_failure;
      s.message = "step " + std::to_string(i) + ": " + e.what();
      break;
    }
    c.matvecs += step.info.matvecs;
    c.field_evals += step.info.field_evals;
    c.fp_iters += step.info.fp_iters;
    c.basis_dim_min = std::min(c.basis_dim_min, step.info.basis_dim);
    c.basis_dim_max = std::max(c.basis_dim_max, step.info.basis_dim);
    x_prev = std::move(x);
    x = std::move(step.x);
    s.steps_done = i;
    s.t_final = static_cast<double>(i) * h;
    if (observer) observer(i, s.t_final, x, step.info);
    if (opts.divergence_factor > 0.0 && x.norm() > opts.divergence_factor * x0_norm) {
      s.status = RunStatus::diverged;
      s.message = "diverged at step " + std::to_string(i);
      break;
    }
  }
  if (c.basis_dim_min == std::numeric_limits<Index>::max()) c.basis_dim_min = 0;
  c.breakdown_restarts = stepper.breakdown_restarts();
  s.x_final = std::move(x);
  return s;
}

}  // namespace symkry
