#include "mkrf/kahler.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>

#include "mkrf/error.hpp"
#include "parallel.hpp"

namespace mkrf {

Herm to_herm(const CMatrix& m) {
  if (m.rows() == 1) return {m(0, 0).real(), 0.0, {}};
  return {m(0, 0).real(), m(1, 1).real(), m(0, 1)};
}

CMatrix to_matrix(int n, const Herm& h) {
  CMatrix m(n, n);
  m(0, 0) = h.a;
  if (n == 2) {
    m(1, 1) = h.d;
    m(0, 1) = h.b;
    m(1, 0) = std::conj(h.b);
  }
  return m;
}

bool is_hermitian(const CMatrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

double lambda_min(const CMatrix& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double class_volume(const CMatrix& m) { return m.determinant().real(); }

HermitianField KahlerForm::metric() const {
  HermitianField g = complex_hessian(phi);
  const Herm a = to_herm(A);
  const int n = phi.grid().n;
  for (std::size_t p = 0; p < g.size(); ++p) {
    Herm h = g.at(p);
    h.a += a.a;
    if (n == 2) {
      h.d += a.d;
      h.b += a.b;
    }
    g.set(p, h);
  }
  return g;
}

VolumeDensity VolumeDensity::from_log(const ScalarField& log_h) {
  std::vector<double> h(log_h.size());
  for (std::size_t p = 0; p < h.size(); ++p) h[p] = std::exp(log_h[p]);
  VolumeDensity out{ScalarField(log_h.grid(), std::move(h))};
  out.validate();
  return out;
}

void VolumeDensity::validate() const {
  for (double v : h.values())
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::invalid_input, "volume density must be finite and positive");
}

PositivityScan scan_positivity(const HermitianField& metric, const CMatrix& reference) {
  const int n = metric.grid().n;
  const bool relative = lambda_min(reference) > 0.0;
  const Herm ref = relative ? to_herm(reference) : Herm{1.0, 1.0, {}};
  PositivityScan scan;
  for (std::size_t p = 0; p < metric.size(); ++p) {
    const double l = local::relative_lambda_min(n, metric.at(p), ref);
    if (!(l >= scan.lambda_min)) {  // also catches NaN
      scan.lambda_min = l;
      scan.index = p;
      if (std::isnan(l)) break;
    }
  }
  return scan;
}

void require_positive(const HermitianField& metric, const CMatrix& reference) {
  const auto scan = scan_positivity(metric, reference);
  if (!(scan.lambda_min >= kPositivityThreshold)) throw SingularMetricError(scan.index, scan.lambda_min);
}

double min_eigenvalue(const HermitianField& metric) {
  const int n = metric.grid().n;
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < metric.size(); ++p) m = std::min(m, local::lambda_min(n, metric.at(p)));
  return m;
}

double max_inverse_eigenvalue(const HermitianField& metric) { return 1.0 / min_eigenvalue(metric); }

ScalarField ma_density(const HermitianField& metric, const CMatrix& reference) {
  require_positive(metric, reference);
  const int n = metric.grid().n;
  ScalarField out(metric.grid());
  const std::size_t size = metric.size();
  MKRF_PARALLEL_FOR(size)
  for (std::size_t p = 0; p < size; ++p) out[p] = local::det(n, metric.at(p));
  return out;
}

namespace {

HermitianField metric_plus(const KahlerForm& form, const ScalarField& u) {
  if (!(form.phi.grid() == u.grid()))
    throw Error(ErrorCode::dimension_mismatch, "form and potential live on different grids");
  if (!u.all_finite()) throw Error(ErrorCode::invalid_input, "potential has non-finite values");
  ScalarField total(u.grid());
  for (std::size_t p = 0; p < u.size(); ++p) total[p] = form.phi[p] + u[p];
  return KahlerForm{form.A, std::move(total)}.metric();
}

}  // namespace

ScalarField ma_density(const KahlerForm& form, const ScalarField& u) {
  return ma_density(metric_plus(form, u), form.A);
}

ScalarField ma_linearization(const KahlerForm& form, const ScalarField& u, const ScalarField& delta) {
  const HermitianField g = metric_plus(form, u);
  require_positive(g, form.A);
  const HermitianField hd = complex_hessian(delta);
  const int n = g.grid().n;
  ScalarField out(g.grid());
  for (std::size_t p = 0; p < g.size(); ++p)
    out[p] = local::det(n, g.at(p)) * local::trace_pair(n, g.at(p), hd.at(p));
  return out;
}

ScalarField trace_pair(const HermitianField& Phi, const HermitianField& Psi) {
  if (!(Phi.grid() == Psi.grid()))
    throw Error(ErrorCode::dimension_mismatch, "trace_pair: fields live on different grids");
  const int n = Phi.grid().n;
  ScalarField out(Phi.grid());
  for (std::size_t p = 0; p < Phi.size(); ++p) {
    const Herm phi = Phi.at(p);
    const double l = local::lambda_min(n, phi);
    if (!(l >= kPositivityThreshold)) throw SingularMetricError(p, l);
    out[p] = local::trace_pair(n, phi, Psi.at(p));
  }
  return out;
}

ScalarField flow_laplacian(const HermitianField& metric, const ScalarField& f) {
  return trace_pair(metric, complex_hessian(f));
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::kahler_limit: return "KAHLER_LIMIT";
    case Regime::finite_time: return "FINITE_TIME";
    case Regime::collapsed: return "COLLAPSED";
  }
  return "UNKNOWN";
}

CMatrix ClassPath::at(double t) const { return Ainf + std::exp(-t) * (A0 - Ainf); }

ClassPath compute_T(const CMatrix& A0, const CMatrix& Ainf) {
  if (A0.rows() != A0.cols() || A0.rows() != Ainf.rows() || Ainf.rows() != Ainf.cols() ||
      (A0.rows() != 1 && A0.rows() != 2))
    throw Error(ErrorCode::invalid_input, "class matrices must be square of size 1 or 2");
  if (!is_hermitian(A0) || !is_hermitian(Ainf))
    throw Error(ErrorCode::invalid_input, "class matrices must be Hermitian");
  if (!(lambda_min(A0) > 0.0)) throw Error(ErrorCode::invalid_input, "A0 must be positive definite");

  ClassPath path{A0, Ainf};
  const double scale = std::max(1.0, Ainf.cwiseAbs().maxCoeff());
  const double zero_tol = 1e-12 * scale;

  Eigen::SelfAdjointEigenSolver<CMatrix> es(Ainf, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double mu0 = ev.minCoeff();

  if (mu0 > zero_tol) {
    path.regime = Regime::kahler_limit;
    return path;
  }
  if (mu0 >= -zero_tol) {
    path.regime = Regime::collapsed;
    path.r = static_cast<int>((ev.array().abs() <= zero_tol).count());
    return path;
  }

  // mu is concave with mu(0) < 0 < mu(1): a single sign change.
  auto mu = [&](double s) { return lambda_min((1.0 - s) * Ainf + s * A0); };
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-13) {
    const double mid = 0.5 * (lo + hi);
    if (mu(mid) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  path.s_star = hi;
  path.T = -std::log(hi);
  path.regime = Regime::finite_time;
  return path;
}

}  // namespace mkrf
