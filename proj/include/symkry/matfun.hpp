#pragma once

// Dense matrix functions on small reduced matrices: the exponential by
// scaling and squaring with diagonal Pade approximants, and
// phi(z) = (e^z - 1) / z through the augmented-matrix identity
//
//   exp([[M, I], [0, 0]]) = [[e^M, phi(M)], [0, I]].

#include "symkry/core.hpp"

#include <Eigen/LU>

#include <array>
#include <cmath>

namespace symkry {

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(what) + ": matrix not square");
}

template <std::size_t N>
Matrix pade_solve(const Matrix& a, const std::array<double, N>& b) {
  // Odd/even split p(A) = U + V, q(A) = -U + V for the low orders.
  const Index m = a.rows();
  const Matrix ident = Matrix::Identity(m, m);
  const Matrix a2 = a * a;
  Matrix power = ident;
  Matrix u_even = Matrix::Zero(m, m);
  Matrix v = Matrix::Zero(m, m);
  for (std::size_t k = 0; k < N; k += 2) {
    v += b[k] * power;
    if (k + 1 < N) u_even += b[k + 1] * power;
    power = power * a2;
  }
  const Matrix u = a * u_even;
  return Eigen::PartialPivLU<Matrix>(v - u).solve(v + u);
}

inline Matrix pade13_scaled(const Matrix& a) {
  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  const Index m = a.rows();
  const Matrix ident = Matrix::Identity(m, m);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                         b[3] * a2 + b[1] * ident;
  const Matrix u = a * u_inner;
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                   b[2] * a2 + b[0] * ident;
  return Eigen::PartialPivLU<Matrix>(v - u).solve(v + u);
}

}  // namespace detail

/// e^M by scaling and squaring (degree 3..13 Pade, 1-norm thresholds).
inline Matrix expm(const Matrix& m) {
  detail::require_square(m, "expm");
  detail::require_finite(m, "expm");
  const Index size = m.rows();
  if (size == 0) return Matrix(0, 0);

  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 <= 1.495585217958292e-2) {
    return detail::pade_solve(m, std::array<double, 4>{120.0, 60.0, 12.0, 1.0});
  }
  if (norm1 <= 2.539398330063230e-1) {
    return detail::pade_solve(m, std::array<double, 6>{30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0});
  }
  if (norm1 <= 9.504178996162932e-1) {
    return detail::pade_solve(m, std::array<double, 8>{17297280.0, 8648640.0, 1995840.0, 277200.0,
                                                       25200.0, 1512.0, 56.0, 1.0});
  }
  if (norm1 <= 2.097847961257068e0) {
    return detail::pade_solve(
        m, std::array<double, 10>{17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                  30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0});
  }

  constexpr double theta13 = 5.371920351148152;
  int squarings = 0;
  if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  Matrix result = detail::pade13_scaled(std::ldexp(1.0, -squarings) * m);
  for (int i = 0; i < squarings; ++i) result = result * result;
  if (!result.allFinite()) throw NumericalError("expm: overflow");
  return result;
}

/// e^M and phi(M) from one augmented exponential.
struct ExpPhi {
  Matrix exp;
  Matrix phi;
};

inline ExpPhi exp_and_phi(const Matrix& m) {
  detail::require_square(m, "exp_and_phi");
  detail::require_finite(m, "exp_and_phi");
  const Index size = m.rows();
  Matrix aug = Matrix::Zero(2 * size, 2 * size);
  aug.topLeftCorner(size, size) = m;
  aug.topRightCorner(size, size).setIdentity();
  const Matrix e = expm(aug);
  return {e.topLeftCorner(size, size), e.topRightCorner(size, size)};
}

/// phi(M) = sum_j M^j / (j+1)!, no inversion of M.
inline Matrix phi1(const Matrix& m) { return exp_and_phi(m).phi; }

/// Frobenius defects of the phi identities the integrators rely on.
struct PhiIdentityReport {
  double defining = 0.0;    // ||M phi(M) - (e^M - I)||
  double reflection = 0.0;  // ||e^{-M} phi(M) - phi(-M)||
  double doubling = 0.0;    // ||e^M phi(M) - (2 phi(2M) - phi(M))||
  double commutator = 0.0;  // ||M phi(M) - phi(M) M||
};

inline PhiIdentityReport phi1_scaled_identities_check(const Matrix& m) {
  const Index size = m.rows();
  const Matrix ident = Matrix::Identity(size, size);
  const ExpPhi plus = exp_and_phi(m);
  const ExpPhi minus = exp_and_phi(-m);
  const Matrix phi2 = phi1(2.0 * m);
  PhiIdentityReport r;
  r.defining = (m * plus.phi - (plus.exp - ident)).norm();
  r.reflection = (minus.exp * plus.phi - minus.phi).norm();
  r.doubling = (plus.exp * plus.phi - (2.0 * phi2 - plus.phi)).norm();
  r.commutator = (m * plus.phi - plus.phi * m).norm();
  return r;
}

}  // namespace symkry
