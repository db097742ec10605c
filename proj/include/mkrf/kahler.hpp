#pragma once

// Kahler forms on the flat torus as (constant Hermitian class matrix +
// complex Hessian of a periodic potential), Monge-Ampere densities, traces,
// and the cohomology pencil A_t = A_inf + e^{-t} (A_0 - A_inf).
//
// Density convention: omega^n / Omega := det(g_{j kbar}) / h, all factorial
// and 2^n constants absorbed, so the identity metric has density 1.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "mkrf/torus_field.hpp"

namespace mkrf {

using CMatrix = Eigen::MatrixXcd;

// A metric counts as positive while its smallest eigenvalue, measured
// relative to the reference class matrix, stays at or above this value.
inline constexpr double kPositivityThreshold = 1e-10;

namespace local {

// Re(x conj(y)) without the NaN-recovery path of complex multiplication.
inline double re_dot(const cplx& x, const cplx& y) { return x.real() * y.real() + x.imag() * y.imag(); }

inline double det(int n, const Herm& g) {
  return n == 1 ? g.a : g.a * g.d - std::norm(g.b);
}

inline Herm inverse(int n, const Herm& g) {
  if (n == 1) return {1.0 / g.a, 0.0, {}};
  const double dt = det(2, g);
  return {g.d / dt, g.a / dt, -g.b / dt};
}

// tr(Phi^{-1} Psi)
inline double trace_pair(int n, const Herm& phi, const Herm& psi) {
  if (n == 1) return psi.a / phi.a;
  const double num = phi.d * psi.a + phi.a * psi.d - 2.0 * re_dot(phi.b, psi.b);
  return num / det(2, phi);
}

// Smallest eigenvalue of ref^{-1} g, i.e. of the pencil det(g - lambda ref) = 0.
inline double relative_lambda_min(int n, const Herm& g, const Herm& ref) {
  if (n == 1) return g.a / ref.a;
  const double dr = det(2, ref);
  const double dg = det(2, g);
  const double m = g.a * ref.d + g.d * ref.a - 2.0 * re_dot(g.b, ref.b);
  const double disc = std::max(0.0, m * m - 4.0 * dr * dg);
  const double root = std::sqrt(disc);
  // Both roots are (m -+ root) / (2 dr); take the small one without cancellation.
  if (m > 0.0) return 2.0 * dg / (m + root);
  return (m - root) / (2.0 * dr);
}

inline double lambda_min(int n, const Herm& g) { return relative_lambda_min(n, g, {1.0, 1.0, {}}); }

inline double lambda_max(int n, const Herm& g) {
  if (n == 1) return g.a;
  const double half_tr = 0.5 * (g.a + g.d);
  const double rad = std::sqrt(0.25 * (g.a - g.d) * (g.a - g.d) + std::norm(g.b));
  return half_tr + rad;
}

inline Herm add(const Herm& x, const Herm& y) { return {x.a + y.a, x.d + y.d, x.b + y.b}; }
inline Herm scaled(const Herm& x, double s) { return {x.a * s, x.d * s, x.b * s}; }

}  // namespace local

Herm to_herm(const CMatrix& m);
CMatrix to_matrix(int n, const Herm& h);
bool is_hermitian(const CMatrix& m, double tol = 1e-12);
double lambda_min(const CMatrix& m);
double class_volume(const CMatrix& m);

struct KahlerForm {
  CMatrix A;        // class representative
  ScalarField phi;  // potential part

  // A + H[phi] pointwise.
  HermitianField metric() const;
};

// Omega as a positive density h relative to the Euclidean torus volume.
struct VolumeDensity {
  ScalarField h;

  static VolumeDensity from_log(const ScalarField& log_h);
  void validate() const;
};

// Result of a grid-wide positivity scan.
struct PositivityScan {
  double lambda_min = std::numeric_limits<double>::infinity();
  std::size_t index = 0;
};

// Smallest eigenvalue of the metric relative to `reference` (absolute when
// the reference is not positive definite), and where it occurs.
PositivityScan scan_positivity(const HermitianField& metric, const CMatrix& reference);
// Throws SingularMetricError when the scan falls below kPositivityThreshold.
void require_positive(const HermitianField& metric, const CMatrix& reference);

// Pointwise absolute lambda_min / lambda_max of the metric.
double min_eigenvalue(const HermitianField& metric);
double max_inverse_eigenvalue(const HermitianField& metric);

// det(A + H[phi] + H[u]); throws SingularMetricError on positivity loss.
ScalarField ma_density(const KahlerForm& form, const ScalarField& u);
ScalarField ma_density(const HermitianField& metric, const CMatrix& reference);

// d/de det(metric + e H[delta]) at e = 0, i.e. det(g) tr(g^{-1} H[delta]).
ScalarField ma_linearization(const KahlerForm& form, const ScalarField& u, const ScalarField& delta);

// Phi^{jkbar} Psi_{jkbar} pointwise; Phi must be positive.
ScalarField trace_pair(const HermitianField& Phi, const HermitianField& Psi);

// Laplacian of the given (positive) metric: trace_pair(metric, H[f]).
ScalarField flow_laplacian(const HermitianField& metric, const ScalarField& f);

enum class Regime { kahler_limit, finite_time, collapsed };
const char* to_string(Regime r);

struct ClassPath {
  CMatrix A0;
  CMatrix Ainf;
  double T = std::numeric_limits<double>::infinity();
  double s_star = 0.0;  // e^{-T}
  Regime regime = Regime::kahler_limit;
  int r = 0;  // dim ker(A_inf) in the collapsed regime

  bool finite() const { return std::isfinite(T); }
  // A_t = A_inf + e^{-t} (A_0 - A_inf).
  CMatrix at(double t) const;
};

// Classifies the pencil by bisection on mu(s) = lambda_min((1-s) A_inf + s A_0).
ClassPath compute_T(const CMatrix& A0, const CMatrix& Ainf);

}  // namespace mkrf
