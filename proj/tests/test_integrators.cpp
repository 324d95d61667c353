#include "symkry/integrators.hpp"
#include "symkry/problems.hpp"
#include "support/oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace symkry;

namespace {

StepperConfig make_cfg(Method m, BasisProcess p, Index dim, double h) {
  StepperConfig c;
  c.method = m;
  c.process = p;
  c.basis_dim = dim;
  c.h = h;
  return c;
}

// Exact flow of x' = A x + c over time h via the augmented exponential.
Vector affine_flow(const Matrix& a, const Vector& c, const Vector& x, double h) {
  const Index d = a.rows();
  Matrix aug = Matrix::Zero(d + 1, d + 1);
  aug.topLeftCorner(d, d) = h * a;
  aug.topRightCorner(d, 1) = h * c;
  Vector y(d + 1);
  y << x, 1.0;
  return (oracle::series_expm(aug) * y).head(d);
}

QuadraticHamiltonian random_quadratic(oracle::Rng& rng, Index n, bool homogeneous = false) {
  return QuadraticHamiltonian(rng.symmetric(2 * n), homogeneous ? Vector::Zero(2 * n) : rng.vector(2 * n));
}

}  // namespace

TEST_CASE("EE with h = 0 is the identity", "[integrators]") {
  oracle::Rng rng(40);
  const auto sys = random_quadratic(rng, 4);
  const Vector x = rng.vector(8);
  CHECK((step_ee(sys, make_cfg(Method::ee, BasisProcess::arnoldi, 4, 0.0), x) - x).norm() == 0.0);
}

TEST_CASE("EE with a full basis is the exact affine flow", "[integrators]") {
  oracle::Rng rng(41);
  for (BasisProcess p : {BasisProcess::arnoldi, BasisProcess::symplectic_arnoldi, BasisProcess::hamiltonian_lanczos}) {
    const auto sys = random_quadratic(rng, 6);
    const Vector x = rng.vector(12);
    const double h = 0.3;
    const Vector got = step_ee(sys, make_cfg(Method::ee, p, 12, h), x);
    const Vector ref = affine_flow(densify_jacobian(sys, x), sys.constant_term(), x, h);
    INFO(to_string(p));
    CHECK((got - ref).norm() <= 1e-10 * ref.norm());
  }
}

TEST_CASE("EE conserves the linear wave energy per step", "[integrators]") {
  LinearWave wave(LinearWaveParams{50, 2.0, Boundary::dirichlet});
  const Vector x0 = wave.initial_state();
  const double e0 = std::abs(wave.energy(x0));
  Stepper st(wave, make_cfg(Method::ee, BasisProcess::hamiltonian_lanczos, 12, 50.0 / 2000.0));
  Vector x = x0;
  for (int i = 0; i < 20; ++i) {
    const Vector next = st.ee(x).x;
    CHECK(std::abs(wave.energy(next) - wave.energy(x)) <= 1e-11 * e0);
    x = next;
  }
}

TEST_CASE("EE equals the exact flow of the reduced local system", "[integrators]") {
  NonlinearSchrodinger nls(NlsParams{16, 1.0, 1.0, 8.0 * std::numbers::pi});
  oracle::Rng rng(42);
  const Vector x = nls.initial_state() + 0.1 * rng.vector(32);
  const double h = 0.05;
  for (BasisProcess p : {BasisProcess::arnoldi, BasisProcess::symplectic_arnoldi, BasisProcess::hamiltonian_lanczos}) {
    Stepper st(nls, make_cfg(Method::ee, p, 8, h));
    const Vector fx = nls.field(x);
    const KrylovOutcome kb = st.local_basis(x, fx);
    const Matrix& f = kb.basis.reduced;
    const Vector g = left_apply(kb.basis, fx);
    const Vector xi = oracle::rk4([&](const Vector& z) { return Vector(f * z + g); }, Vector::Zero(g.size()), h, 400);
    const Vector ref = x + kb.basis.columns * xi;
    INFO(to_string(p));
    CHECK((st.ee(x).x - ref).norm() <= 1e-9 * ref.norm());
  }
}

TEST_CASE("EEMP with x_prev = x doubles the exponential Euler increment", "[integrators]") {
  oracle::Rng rng(43);
  const auto sys = random_quadratic(rng, 5, true);
  const Vector x = rng.vector(10);
  const double h = 0.1;
  Stepper st(sys, make_cfg(Method::eemp, BasisProcess::symplectic_arnoldi, 6, h));
  const BasisMatrix b = st.eemp_basis(x, x);
  CHECK(b.size() == 6);
  const Vector expect = x + 2.0 * h * (b.columns * (phi1(h * b.reduced) * left_apply(b, sys.field(x))));
  CHECK((st.eemp(x, x).x - expect).norm() <= 1e-13 * expect.norm());
}

TEST_CASE("EEMP conserves the energy of averages on linear systems", "[integrators]") {
  oracle::Rng rng(44);
  for (BasisProcess p : {BasisProcess::symplectic_arnoldi, BasisProcess::isotropic_arnoldi,
                         BasisProcess::hamiltonian_lanczos}) {
    for (int t = 0; t < 5; ++t) {
      const auto sys = random_quadratic(rng, 10);
      const Vector x = rng.vector(20);
      const Vector x_prev = x + 0.05 * rng.vector(20);
      Stepper st(sys, make_cfg(Method::eemp, p, 8, 0.05));
      const BasisMatrix b = st.eemp_basis(x, x_prev);
      CHECK(projection_residual(b, x_prev - x) <= 1e-10);
      const Vector xp = st.eemp(x, x_prev).x;
      const double lhs = sys.energy(0.5 * (xp + x));
      const double rhs = sys.energy(0.5 * (x + x_prev));
      INFO(to_string(p));
      CHECK(std::abs(lhs - rhs) <= 1e-11 * std::abs(sys.energy(x)));
    }
  }
}

TEST_CASE("plain explicit midpoint preserves omega(Hx, x+) = omega(Hx-, x)", "[integrators]") {
  // Oracle for the homogeneous identity; EEMP conserves averaged energy instead.
  oracle::Rng rng(45);
  const Matrix a = rng.hamiltonian(4);
  const Vector x = rng.vector(8), xm = rng.vector(8);
  const Vector xp = xm + 0.2 * a * x;
  CHECK(std::abs(omega(a * x, xp) - omega(a * xm, x)) <= 1e-12 * (a * x).norm() * xp.norm());
}

TEST_CASE("EEMP symmetry round trip on NLS", "[integrators]") {
  NonlinearSchrodinger nls(NlsParams{64, 1.0, 1.0, 8.0 * std::numbers::pi});
  const Vector x = nls.initial_state();
  const double h = 0.02;
  for (BasisProcess p : {BasisProcess::arnoldi, BasisProcess::symplectic_arnoldi}) {
    Stepper st(nls, make_cfg(Method::eemp, p, 16, h));
    const Vector x_prev = st.ee(x, -h).x;
    const BasisMatrix b = st.eemp_basis(x, x_prev);
    const Vector fx = nls.field(x);
    const Vector xp = eemp_update(b, x, x_prev, fx, h);
    const Vector back = eemp_update(b, x, xp, fx, -h);
    INFO(to_string(p));
    CHECK((back - x_prev).norm() <= 1e-9 * x_prev.norm());
  }
}

TEST_CASE("IEMP on a zero field stays put", "[integrators]") {
  QuadraticHamiltonian zero(Matrix::Zero(6, 6), Vector::Zero(6));
  oracle::Rng rng(46);
  const Vector x = rng.vector(6);
  const IempResult r = step_iemp(zero, make_cfg(Method::iemp, BasisProcess::symplectic_arnoldi, 4, 0.1), x);
  CHECK(r.x_plus == x);
  CHECK(r.x_mid == x);
}

TEST_CASE("IEMP on a linear system is EE with the macro step", "[integrators]") {
  oracle::Rng rng(47);
  for (BasisProcess p : {BasisProcess::arnoldi, BasisProcess::symplectic_arnoldi, BasisProcess::hamiltonian_lanczos}) {
    const auto sys = random_quadratic(rng, 10);
    const Vector x = rng.vector(20);
    const double dt = 0.1;
    Stepper st(sys, make_cfg(Method::iemp, p, 8, dt));
    const IempResult r = st.iemp(x);
    const Vector ee = st.ee(x, dt).x;
    INFO(to_string(p));
    CHECK((r.x_plus - ee).norm() <= 1e-10 * ee.norm());
    CHECK(r.info.fp_iters <= 10);
    if (p != BasisProcess::arnoldi) CHECK(std::abs(sys.energy(r.x_plus) - sys.energy(x)) <= 1e-11 * std::abs(sys.energy(x)));
  }
}

TEST_CASE("IEMP reduced relations at the converged midpoint", "[integrators]") {
  NonlinearSchrodinger nls(NlsParams{64, 1.0, 1.0, 8.0 * std::numbers::pi});
  const Vector x = nls.initial_state();
  const double dt = 0.04;
  StepperConfig cfg = make_cfg(Method::iemp, BasisProcess::symplectic_arnoldi, 16, dt);
  Stepper st(nls, cfg);
  const IempResult r = st.iemp(x);
  const double h = 0.5 * dt;
  const Vector& xi = r.reduced.xi;
  const Vector collapsed = xi + expm(h * r.basis.reduced) * xi;
  CHECK((r.reduced.xi_plus - collapsed).norm() <= 1e-10 * (1.0 + xi.norm()));

  // The first relation holds: e^{hF} xi = h phi(hF) U^+ f(x + U xi).
  const ExpPhi ep = exp_and_phi(h * r.basis.reduced);
  const Vector g = left_apply(r.basis, nls.field(r.x_mid));
  CHECK((ep.exp * xi - h * ep.phi * g).norm() <= 1e-11 * (1.0 + xi.norm()));
}

TEST_CASE("IEMP reverse step with the same basis returns to the start", "[integrators]") {
  NonlinearSchrodinger nls(NlsParams{64, 1.0, 1.0, 8.0 * std::numbers::pi});
  const Vector x = nls.initial_state();
  const double dt = 0.04;
  StepperConfig cfg = make_cfg(Method::iemp, BasisProcess::symplectic_arnoldi, 16, dt);
  cfg.iemp_refreeze = true;
  const IempResult fwd = Stepper(nls, cfg).iemp(x);
  const double h = 0.5 * dt;
  const Vector xi0 = left_apply(fwd.basis, fwd.x_mid - fwd.x_plus);
  const IempReduced rev = iemp_reduced_solve(nls, fwd.basis, fwd.x_plus, xi0, -h, cfg.fixed_point);
  const Vector mid = fwd.x_plus + fwd.basis.columns * rev.xi;
  const Vector start = fwd.x_plus + fwd.basis.columns * rev.xi_plus;
  CHECK((mid - fwd.x_mid).norm() <= 1e-9 * x.norm());
  CHECK((start - x).norm() <= 1e-9 * x.norm());
}

TEST_CASE("IEMP fixed point failure is reported", "[integrators]") {
  NonlinearSchrodinger nls(NlsParams{64, 1.0, 1.0, 8.0 * std::numbers::pi});
  StepperConfig cfg = make_cfg(Method::iemp, BasisProcess::arnoldi, 12, 0.05);
  cfg.fixed_point.max_iter = 1;
  cfg.fixed_point.tol = 1e-300;
  CHECK_THROWS_AS(step_iemp(nls, cfg, nls.initial_state()), StepFailure);

  const TrajectorySummary s = integrate(nls, cfg, nls.initial_state(), 1.0, 10);
  CHECK(s.status == RunStatus::step_failure);
  CHECK(s.steps_done == 0);
  CHECK(s.x_final == nls.initial_state());
}

// Fine Klein-Gordon grid: the second step's increments level off near 1e-9.
TEST_CASE("IEMP accepts a fixed point stalled at rounding level", "[integrators]") {
  KleinGordon kg(KleinGordonParams{});
  StepperConfig cfg = make_cfg(Method::iemp, BasisProcess::arnoldi, 22, 0.0);
  const TrajectorySummary s = integrate(kg, cfg, kg.initial_state(), 0.04, 2);
  CHECK(s.status == RunStatus::completed);
  CHECK(s.counters.fp_iters < 2 * 50);

  cfg.fixed_point.stall_tol = 0.0;
  const TrajectorySummary strict = integrate(kg, cfg, kg.initial_state(), 0.04, 2);
  CHECK(strict.status == RunStatus::step_failure);
  CHECK(strict.steps_done == 1);
}

TEST_CASE("integrate with one EE step matches step_ee", "[integrators]") {
  KleinGordon kg(KleinGordonParams{20, 1.0, 0.5, 1.0, 1.0});
  const Vector x0 = kg.initial_state();
  const StepperConfig cfg = make_cfg(Method::ee, BasisProcess::arnoldi, 10, 0.0);
  const TrajectorySummary s = integrate(kg, cfg, x0, 0.02, 1);
  StepperConfig one = cfg;
  one.h = 0.02;
  CHECK(s.x_final == step_ee(kg, one, x0));
  CHECK(s.steps_done == 1);
}

TEST_CASE("long linear wave run keeps energy drift bounded", "[integrators]") {
  LinearWave wave(LinearWaveParams{50, 2.0, Boundary::dirichlet});
  const Vector x0 = wave.initial_state();
  const double e0 = wave.energy(x0);
  double worst = 0.0;
  const auto obs = [&](Index, double, const Vector& x, const StepInfo&) {
    worst = std::max(worst, std::abs(wave.energy(x) - e0) / std::abs(e0));
  };
  const TrajectorySummary s =
      integrate(wave, make_cfg(Method::ee, BasisProcess::symplectic_arnoldi, 12, 0.0), x0, 50.0, 2000, obs);
  CHECK(s.status == RunStatus::completed);
  CHECK(worst <= 1e-9);
}

TEST_CASE("observer and counters", "[integrators]") {
  KleinGordon kg(KleinGordonParams{20, 1.0, 0.5, 1.0, 1.0});
  const Vector x0 = kg.initial_state();
  Index calls = 0;
  bool counts_ok = true;
  const auto obs = [&](Index step, double, const Vector&, const StepInfo& info) {
    if (step != calls) counts_ok = false;
    if (step > 0 && (info.matvecs != 7 || info.basis_dim != 7)) counts_ok = false;
    ++calls;
  };
  const TrajectorySummary s = integrate(kg, make_cfg(Method::ee, BasisProcess::arnoldi, 7, 0.0), x0, 0.1, 5, obs);
  CHECK(calls == 6);
  CHECK(counts_ok);
  CHECK(s.counters.matvecs == 35);
  CHECK(s.counters.field_evals == 5);
  CHECK(s.counters.basis_dim_min == 7);
  CHECK(s.counters.basis_dim_max == 7);

  // EEMP: EE bootstrap then Krylov plus one extension column.
  const TrajectorySummary e = integrate(kg, make_cfg(Method::eemp, BasisProcess::arnoldi, 7, 0.0), x0, 0.1, 5);
  CHECK(e.counters.basis_dim_min == 7);
  CHECK(e.counters.basis_dim_max == 8);
}

TEST_CASE("EEMP and IEMP are second order on Klein-Gordon", "[integrators]") {
  KleinGordon kg(KleinGordonParams{8, 1.0, 0.5, 1.0, 1.0});
  const Vector x0 = kg.initial_state();
  const double t = 0.5;
  const Vector ref = oracle::rk4([&](const Vector& y) { return kg.field(y); }, x0, t, 20000);
  for (Method m : {Method::eemp, Method::iemp}) {
    double prev = 0.0;
    for (Index steps : {10, 20, 40}) {
      const TrajectorySummary s = integrate(kg, make_cfg(m, BasisProcess::symplectic_arnoldi, 16, 0.0), x0, t, steps);
      REQUIRE(s.status == RunStatus::completed);
      const double err = (s.x_final - ref).norm();
      if (prev > 0.0) {
        INFO(to_string(m) << " steps " << steps);
        CHECK(prev / err >= 3.0);
        CHECK(prev / err <= 5.0);
      }
      prev = err;
    }
  }
}

TEST_CASE("Lanczos breakdown triggers a perturbed restart", "[integrators]") {
  // f(x) = e1 + e2 at x = (0, 0, -1, -1) and omega(f, Df f) = f^T S f = 0.
  Matrix s = Matrix::Zero(4, 4);
  s.diagonal() << 1, -1, 1, 1;
  QuadraticHamiltonian sys(s, Vector::Zero(4));
  Vector x(4);
  x << 0, 0, -1, -1;
  REQUIRE(std::abs(omega(sys.field(x), sys.jvp(x, sys.field(x)))) <= 1e-15);

  StepperConfig cfg = make_cfg(Method::ee, BasisProcess::hamiltonian_lanczos, 2, 0.1);
  CHECK_THROWS_AS(step_ee(sys, cfg, x), BreakdownError);

  cfg.breakdown_retries = 3;
  cfg.seed = 7;
  Stepper st(sys, cfg);
  const StepResult r = st.ee(x);
  CHECK(st.breakdown_restarts() >= 1);
  CHECK(r.info.basis_dim == 2);
  CHECK(r.x.allFinite());

  Stepper again(sys, cfg);
  CHECK(again.ee(x).x == r.x);
}

TEST_CASE("stepper configuration checks", "[integrators]") {
  QuadraticHamiltonian sys(Matrix::Identity(4, 4), Vector::Zero(4));
  CHECK_THROWS_AS(Stepper(sys, make_cfg(Method::ee, BasisProcess::symplectic_arnoldi, 3, 0.1)), MisuseError);
  CHECK_THROWS_AS(Stepper(sys, make_cfg(Method::ee, BasisProcess::arnoldi, 0, 0.1)), MisuseError);
  CHECK_THROWS_AS(integrate(sys, make_cfg(Method::ee, BasisProcess::arnoldi, 2, 0.0), Vector::Ones(4), 1.0, 0),
                  MisuseError);
  CHECK_THROWS_AS(integrate(sys, make_cfg(Method::ee, BasisProcess::arnoldi, 2, 0.0), Vector::Ones(6), 1.0, 1),
                  DimensionError);
}

TEST_CASE("divergence guard stops the run", "[integrators]") {
  // Unstable linear system: H = 1/2 (q p) couples to exponential growth.
  Matrix s = Matrix::Zero(2, 2);
  s(0, 1) = s(1, 0) = 1.0;
  QuadraticHamiltonian sys(s, Vector::Zero(2));
  Vector x0(2);
  x0 << 1.0, 1.0;
  IntegrationOptions opts;
  opts.divergence_factor = 10.0;
  const TrajectorySummary r =
      integrate(sys, make_cfg(Method::ee, BasisProcess::arnoldi, 2, 0.0), x0, 10.0, 100, {}, opts);
  CHECK(r.status == RunStatus::diverged);
  CHECK(r.steps_done < 100);
}
