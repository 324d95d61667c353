#pragma once

// Method-of-lines benchmark systems on an equidistant 1D grid:
//
//   linear-wave    q' = p, p' = Lap q + c
//   nls            psi = q + i p, cubic Schrodinger equation with sin^2 potential
//   klein-gordon   q' = p, p' = Lap q - m^2 q - g q^3
//
// All three are x' = J^{-1} grad H(x). For the two wave-type systems the
// energy carries the sign that makes this identity hold with
// J = [[0, I], [-I, 0]], i.e. H = 1/2 q^T Lap q - 1/2 |p|^2 + ...; relative
// energy errors are unaffected by the global sign.

#include "symkry/core.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace symkry {

enum class Boundary { periodic, dirichlet };

inline const char* to_string(Boundary b) { return b == Boundary::periodic ? "periodic" : "dirichlet"; }

struct GridSpec {
  Index n = 0;
  double length = 1.0;
  Boundary boundary = Boundary::periodic;
  /// Coordinate of grid point 0 for periodic grids; Dirichlet grids use x_i = i dx, i = 1..n.
  double left = 0.0;

  GridSpec() = default;
  GridSpec(Index n_, double length_, Boundary b, double left_ = 0.0)
      : n(n_), length(length_), boundary(b), left(left_) {
    if (n < 3) throw MisuseError("GridSpec: n must be >= 3");
    if (!(length > 0.0)) throw MisuseError("GridSpec: length must be positive");
  }

  double dx() const { return length / static_cast<double>(n); }

  Vector points() const {
    Vector x(n);
    for (Index i = 0; i < n; ++i) {
      x[i] = boundary == Boundary::periodic ? left + static_cast<double>(i) * dx()
                                            : static_cast<double>(i + 1) * dx();
    }
    return x;
  }
};

/// Three-point Laplacian scaled by 1/dx^2, matrix-free.
class DiscreteLaplacian {
 public:
  explicit DiscreteLaplacian(GridSpec grid) : grid_(grid), scale_(1.0 / (grid.dx() * grid.dx())) {}

  const GridSpec& grid() const { return grid_; }
  double scale() const { return scale_; }
  Index size() const { return grid_.n; }

  template <class Derived>
  Vector apply(const Eigen::MatrixBase<Derived>& v) const {
    const Index n = grid_.n;
    detail::require_same(v.size(), n, "DiscreteLaplacian::apply");
    Vector out(n);
    for (Index i = 1; i + 1 < n; ++i) out[i] = v[i - 1] - 2.0 * v[i] + v[i + 1];
    if (grid_.boundary == Boundary::periodic) {
      out[0] = v[n - 1] - 2.0 * v[0] + v[1];
      out[n - 1] = v[n - 2] - 2.0 * v[n - 1] + v[0];
    } else {
      out[0] = -2.0 * v[0] + v[1];
      out[n - 1] = v[n - 2] - 2.0 * v[n - 1];
    }
    return scale_ * out;
  }

  Matrix dense() const {
    const Index n = grid_.n;
    Matrix m = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      m(i, i) = -2.0;
      if (i > 0) m(i, i - 1) = 1.0;
      if (i + 1 < n) m(i, i + 1) = 1.0;
    }
    if (grid_.boundary == Boundary::periodic) {
      m(0, n - 1) += 1.0;
      m(n - 1, 0) += 1.0;
    }
    return scale_ * m;
  }

 private:
  GridSpec grid_;
  double scale_;
};

inline Vector laplacian_apply(const DiscreteLaplacian& lap, const Vector& v) { return lap.apply(v); }

/// Grid-based system with a default initial state.
class GridProblem : public HamiltonianSystem {
 public:
  explicit GridProblem(GridSpec grid) : lap_(grid) {}

  Index dim() const override { return 2 * lap_.size(); }
  Index n() const { return lap_.size(); }
  const GridSpec& grid() const { return lap_.grid(); }
  const DiscreteLaplacian& laplacian() const { return lap_; }

  virtual std::string name() const = 0;
  virtual StateVector initial_state() const = 0;

 protected:
  DiscreteLaplacian lap_;
};

struct LinearWaveParams {
  Index n = 400;
  double length = 2.0;
  Boundary boundary = Boundary::dirichlet;
};

/// u_tt = u_xx + f(x) with f = (x (x - L))^2 / 8, u0 = 1 / (1 + sin^2(pi x)) - 1, v0 = 0.
class LinearWave final : public GridProblem {
 public:
  explicit LinearWave(const LinearWaveParams& p = {})
      : GridProblem(GridSpec(p.n, p.length, p.boundary)), source_(p.n) {
    const Vector x = grid().points();
    const double len = grid().length;
    for (Index i = 0; i < n(); ++i) {
      const double s = x[i] * (x[i] - len);
      source_[i] = 0.125 * s * s;
    }
  }

  std::string name() const override { return "linear-wave"; }

  Vector field(const Vector& x) const override {
    detail::require_same(x.size(), dim(), "LinearWave::field");
    Vector out(dim());
    out.head(n()) = x.tail(n());
    out.tail(n()) = lap_.apply(x.head(n())) + source_;
    return out;
  }

  double energy(const Vector& x) const override {
    const auto q = x.head(n());
    return 0.5 * q.dot(lap_.apply(q)) - 0.5 * x.tail(n()).squaredNorm() + source_.dot(q);
  }

  Vector jvp(const Vector&, const Vector& v) const override { return linear_apply(v); }
  bool is_linear() const override { return true; }

  Vector linear_apply(const Vector& v) const override {
    detail::require_same(v.size(), dim(), "LinearWave::linear_apply");
    Vector out(dim());
    out.head(n()) = v.tail(n());
    out.tail(n()) = lap_.apply(v.head(n()));
    return out;
  }

  Vector constant_term() const override {
    Vector c = Vector::Zero(dim());
    c.tail(n()) = source_;
    return c;
  }

  const Vector& source() const { return source_; }

  StateVector initial_state() const override {
    const Vector x = grid().points();
    Vector q(n());
    for (Index i = 0; i < n(); ++i) {
      const double s = std::sin(std::numbers::pi * x[i]);
      q[i] = 1.0 / (1.0 + s * s) - 1.0;
    }
    return make_state(q, Vector::Zero(n()));
  }

 private:
  Vector source_;
};

struct NlsParams {
  Index n = 500;
  double v0 = 1.0;
  double b = 1.0;
  double length = 8.0 * std::numbers::pi;
};

/// Discrete NLS energy
///   H = -1/4 (q^T Lap q + p^T Lap p) + 1/4 sum (q_i^2 + p_i^2)^2 - V0/2 sum sin^2(x_i) (q_i^2 + p_i^2)
/// on the periodic grid over [-L/2, L/2).
class NonlinearSchrodinger final : public GridProblem {
 public:
  explicit NonlinearSchrodinger(const NlsParams& p = {})
      : GridProblem(GridSpec(p.n, p.length, Boundary::periodic, -0.5 * p.length)),
        v0_(p.v0),
        b_(p.b),
        sin2_(p.n) {
    const Vector x = grid().points();
    for (Index i = 0; i < n(); ++i) sin2_[i] = std::sin(x[i]) * std::sin(x[i]);
  }

  std::string name() const override { return "nls"; }

  Vector field(const Vector& x) const override {
    detail::require_same(x.size(), dim(), "NonlinearSchrodinger::field");
    return apply_J_inv(gradient(x));
  }

  Vector gradient(const Vector& x) const {
    const auto q = x.head(n());
    const auto p = x.tail(n());
    const Vector w = (q.array().square() + p.array().square()).matrix() - v0_ * sin2_;
    Vector g(dim());
    g.head(n()) = -0.5 * lap_.apply(q) + w.cwiseProduct(q);
    g.tail(n()) = -0.5 * lap_.apply(p) + w.cwiseProduct(p);
    return g;
  }

  double energy(const Vector& x) const override {
    const auto q = x.head(n());
    const auto p = x.tail(n());
    const Vector r = (q.array().square() + p.array().square()).matrix();
    return -0.25 * (q.dot(lap_.apply(q)) + p.dot(lap_.apply(p))) + 0.25 * r.squaredNorm() -
           0.5 * v0_ * sin2_.dot(r);
  }

  Vector jvp(const Vector& x, const Vector& v) const override {
    detail::require_same(v.size(), dim(), "NonlinearSchrodinger::jvp");
    const auto q = x.head(n());
    const auto p = x.tail(n());
    const auto dq = v.head(n());
    const auto dp = v.tail(n());
    const Vector w = (q.array().square() + p.array().square()).matrix() - v0_ * sin2_;
    const Vector dr = 2.0 * (q.cwiseProduct(dq) + p.cwiseProduct(dp));
    Vector dg(dim());
    dg.head(n()) = -0.5 * lap_.apply(dq) + w.cwiseProduct(dq) + dr.cwiseProduct(q);
    dg.tail(n()) = -0.5 * lap_.apply(dp) + w.cwiseProduct(dp) + dr.cwiseProduct(p);
    return apply_J_inv(dg);
  }

  /// Continuous branch of tan(theta) = sqrt(1 + V0/B) tan(x) with theta(0) = 0.
  double phase(double x) const {
    const double c = std::sqrt(1.0 + v0_ / b_);
    const double s = std::sin(x);
    const double co = std::cos(x);
    // theta - x = arg((cos x + i c sin x)(cos x - i sin x)); the real part stays positive.
    return x + std::atan2((c - 1.0) * s * co, co * co + c * s * s);
  }

  StateVector initial_state() const override {
    const Vector x = grid().points();
    Vector q(n()), p(n());
    for (Index i = 0; i < n(); ++i) {
      const double amp = std::sqrt(v0_ * sin2_[i] + b_);
      const double th = phase(x[i]);
      q[i] = amp * std::cos(th);
      p[i] = amp * std::sin(th);
    }
    return make_state(q, p);
  }

  double v0() const { return v0_; }
  double b() const { return b_; }

 private:
  double v0_;
  double b_;
  Vector sin2_;
};

struct KleinGordonParams {
  Index n = 400;
  double length = 1.0;
  double m = 0.5;
  double g = 1.0;
  double a = 1.0;
};

/// u_tt = u_xx - m^2 u - g u^3, periodic on [0, L),
/// H = 1/2 q^T Lap q - 1/2 p^T p - sum (m^2/2 q_i^2 + g/4 q_i^4).
class KleinGordon final : public GridProblem {
 public:
  explicit KleinGordon(const KleinGordonParams& p = {})
      : GridProblem(GridSpec(p.n, p.length, Boundary::periodic)), m_(p.m), g_(p.g), a_(p.a) {}

  std::string name() const override { return "klein-gordon"; }

  Vector field(const Vector& x) const override {
    detail::require_same(x.size(), dim(), "KleinGordon::field");
    const auto q = x.head(n());
    Vector out(dim());
    out.head(n()) = x.tail(n());
    out.tail(n()) = lap_.apply(q) - (m_ * m_) * q -
                    g_ * q.array().cube().matrix();
    return out;
  }

  double energy(const Vector& x) const override {
    const auto q = x.head(n());
    const double potential =
        0.5 * m_ * m_ * q.squaredNorm() + 0.25 * g_ * q.array().square().square().sum();
    return 0.5 * q.dot(lap_.apply(q)) - 0.5 * x.tail(n()).squaredNorm() - potential;
  }

  Vector jvp(const Vector& x, const Vector& v) const override {
    detail::require_same(v.size(), dim(), "KleinGordon::jvp");
    const auto q = x.head(n());
    const auto dq = v.head(n());
    Vector out(dim());
    out.head(n()) = v.tail(n());
    out.tail(n()) = lap_.apply(dq) - (m_ * m_) * dq -
                    (3.0 * g_) * q.array().square().matrix().cwiseProduct(dq);
    return out;
  }

  bool is_linear() const override { return g_ == 0.0; }

  StateVector initial_state() const override {
    const Vector x = grid().points();
    Vector q(n());
    for (Index i = 0; i < n(); ++i) {
      q[i] = a_ * (1.0 + std::cos(2.0 * std::numbers::pi * x[i] / grid().length));
    }
    return make_state(q, Vector::Zero(n()));
  }

 private:
  double m_;
  double g_;
  double a_;
};

inline std::unique_ptr<LinearWave> build_linear_wave(Index n) {
  LinearWaveParams p;
  p.n = n;
  return std::make_unique<LinearWave>(p);
}

inline std::unique_ptr<NonlinearSchrodinger> build_nls(Index n, double v0, double b) {
  NlsParams p;
  p.n = n;
  p.v0 = v0;
  p.b = b;
  return std::make_unique<NonlinearSchrodinger>(p);
}

inline std::unique_ptr<KleinGordon> build_klein_gordon(Index n, double length, double m, double g,
                                                       double a) {
  return std::make_unique<KleinGordon>(KleinGordonParams{n, length, m, g, a});
}

// Registry.

struct ParamSpec {
  std::string name;
  double default_value;
  std::string help;
  bool integer = false;
};

struct ProblemInfo {
  std::string name;
  std::string summary;
  std::vector<ParamSpec> params;
};

using ProblemParams = std::map<std::string, double>;

inline const std::vector<ProblemInfo>& problem_registry() {
  static const std::vector<ProblemInfo> registry = {
      {"linear-wave",
       "linear wave equation with polynomial source, Dirichlet Laplacian",
       {{"n", 400, "grid points", true},
        {"L", 2.0, "domain length"},
        {"periodic", 0, "1 selects the periodic Laplacian", true}}},
      {"nls",
       "cubic Schrodinger equation with sin^2 potential on [-L/2, L/2)",
       {{"n", 500, "grid points", true},
        {"L", 8.0 * std::numbers::pi, "domain length"},
        {"V0", 1.0, "potential strength"},
        {"B", 1.0, "background amplitude"}}},
      {"klein-gordon",
       "cubic Klein-Gordon equation, periodic on [0, L)",
       {{"n", 400, "grid points", true},
        {"L", 1.0, "domain length"},
        {"m", 0.5, "mass"},
        {"g", 1.0, "cubic coupling"},
        {"A", 1.0, "initial amplitude"}}},
  };
  return registry;
}

inline const ProblemInfo& problem_info(const std::string& name) {
  for (const auto& info : problem_registry()) {
    if (info.name == name) return info;
  }
  throw MisuseError("unknown problem '" + name + "'");
}

/// Registry defaults merged with `overrides`; unknown or malformed keys throw.
inline ProblemParams resolve_problem_params(const std::string& name, const ProblemParams& overrides) {
  const ProblemInfo& info = problem_info(name);
  ProblemParams out;
  for (const auto& p : info.params) out[p.name] = p.default_value;
  for (const auto& [key, value] : overrides) {
    auto it = out.find(key);
    if (it == out.end()) throw MisuseError("problem '" + name + "' has no parameter '" + key + "'");
    for (const auto& p : info.params) {
      if (p.name == key && p.integer && value != std::floor(value)) {
        throw MisuseError("parameter '" + key + "' must be an integer");
      }
    }
    it->second = value;
  }
  return out;
}

inline std::unique_ptr<GridProblem> make_problem(const std::string& name, const ProblemParams& overrides = {}) {
  const ProblemParams p = resolve_problem_params(name, overrides);
  const auto n = static_cast<Index>(p.at("n"));
  if (name == "linear-wave") {
    return std::make_unique<LinearWave>(LinearWaveParams{
        n, p.at("L"), p.at("periodic") != 0.0 ? Boundary::periodic : Boundary::dirichlet});
  }
  if (name == "nls") {
    return std::make_unique<NonlinearSchrodinger>(NlsParams{n, p.at("V0"), p.at("B"), p.at("L")});
  }
  return std::make_unique<KleinGordon>(
      KleinGordonParams{n, p.at("L"), p.at("m"), p.at("g"), p.at("A")});
}

}  // namespace symkry
