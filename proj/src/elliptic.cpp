#include "mkrf/elliptic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace mkrf {

EllipticProblem EllipticProblem::compatible(KahlerForm form, VolumeDensity Omega) {
  const double c = class_volume(form.A) / mean(Omega.h);
  return {std::move(form), std::move(Omega), c};
}

namespace {

using Vec = std::vector<double>;
using LinearMap = std::function<void(const Vec&, Vec&)>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sup_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

// Restarted GMRES for J x = b from x = 0. Returns the number of inner
// iterations.
int gmres(const LinearMap& J, const Vec& b, Vec& x, double tol, int restart, int max_iterations) {
  const std::size_t n = b.size();
  x.assign(n, 0.0);
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) return 0;
  int total = 0;
  Vec r = b, w(n);
  while (total < max_iterations) {
    const double beta = std::sqrt(dot(r, r));
    if (beta <= tol * bnorm) break;
    const int m = restart;
    std::vector<Vec> V(1, Vec(n));
    for (std::size_t i = 0; i < n; ++i) V[0][i] = r[i] / beta;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m + 1);
    std::vector<double> cs(m), sn(m);
    g(0) = beta;
    int k = 0;
    for (; k < m && total < max_iterations; ++k, ++total) {
      J(V[k], w);
      for (int i = 0; i <= k; ++i) {
        H(i, k) = dot(w, V[i]);
        for (std::size_t p = 0; p < n; ++p) w[p] -= H(i, k) * V[i][p];
      }
      H(k + 1, k) = std::sqrt(dot(w, w));
      for (int i = 0; i < k; ++i) {
        const double t = cs[i] * H(i, k) + sn[i] * H(i + 1, k);
        H(i + 1, k) = -sn[i] * H(i, k) + cs[i] * H(i + 1, k);
        H(i, k) = t;
      }
      const double rho = std::hypot(H(k, k), H(k + 1, k));
      const double hk1 = H(k + 1, k);
      cs[k] = H(k, k) / rho;
      sn[k] = hk1 / rho;
      H(k, k) = rho;
      H(k + 1, k) = 0.0;
      g(k + 1) = -sn[k] * g(k);
      g(k) = cs[k] * g(k);
      const bool done = std::abs(g(k + 1)) <= tol * bnorm || hk1 == 0.0;
      if (!done) {
        V.emplace_back(n);
        for (std::size_t p = 0; p < n; ++p) V[k + 1][p] = w[p] / hk1;
      } else {
        ++k;
        ++total;
        break;
      }
    }
    const Eigen::VectorXd y =
        H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    Vec update(n, 0.0);
    for (int i = 0; i < k; ++i)
      for (std::size_t p = 0; p < n; ++p) update[p] += y(i) * V[i][p];
    for (std::size_t p = 0; p < n; ++p) x[p] += update[p];
    J(x, w);
    for (std::size_t p = 0; p < n; ++p) r[p] = b[p] - w[p];
  }
  return total;
}

// det(background(t) + H[U]) = exp(log_target) solved with an extra unknown
// kappa absorbing the constant mode; the model supplies the Hessians.
class MongeAmpereNewton {
 public:
  MongeAmpereNewton(FlowModel& model, double t, Vec log_target, double scale, const NewtonOptions& options)
      : model_(model), t_(t), log_target_(std::move(log_target)), scale_(scale), opt_(options) {
    const GridSpec& g = model_.grid();
    model_.background(t_, background_);
    A_ = to_herm(model_.inputs().path.at(t_));
    metric_ = HermitianField(g);
    hz_ = HermitianField(g);
  }

  CySolution solve(Potential U) {
    const GridSpec& g = model_.grid();
    const std::size_t size = g.size();
    NewtonReport report;

    // Gauge: remove the mean of the initial guess.
    Vec full(size);
    model_.to_field(U, full);
    report.gauge_offset = mean(full);
    // A split potential's fibre part is mean-free, so the mean sits in the base.
    for (double& v : U.base.empty() ? U.fibre : U.base) v -= report.gauge_offset;

    double kappa = 0.0;
    Vec R(size), det(size);
    if (!residual(U, kappa, R, det)) throw NewtonFailure("initial guess is not admissible", report);
    double rnorm = sup_norm(R);

    for (int it = 0;; ++it) {
      report.log_residual = rnorm;
      report.residual = certificate(det);
      if (report.residual <= opt_.certificate) {
        report.converged = true;
        break;
      }
      if (it >= opt_.max_iterations) break;

      // Linear solve J z = -R with J z = Laplacian_g z - mean(z), right
      // preconditioned by P = (Laplacian of A) - mean, applied in the split
      // representation so fibre directions keep relative accuracy.
      Vec rhs(size), y;
      for (std::size_t p = 0; p < size; ++p) rhs[p] = -R[p];
      const HermitianField g_now = metric_;
      Potential z;
      Vec zfull(size);
      LinearMap JP = [&](const Vec& x, Vec& out) {
        precondition(x, z);
        model_.hessian(z, hz_);
        model_.to_field(z, zfull);
        const double m = mean(zfull);
        out.resize(size);
        for (std::size_t p = 0; p < size; ++p) out[p] = local::trace_pair(g.n, g_now.at(p), hz_.at(p)) - m;
      };
      report.linear_iterations += gmres(JP, rhs, y, opt_.linear_tolerance, opt_.restart, opt_.max_linear_iterations);
      Potential dU;
      precondition(y, dU);
      model_.to_field(dU, zfull);
      const double dkappa = mean(zfull);
      for (double& v : dU.base.empty() ? dU.fibre : dU.base) v -= dkappa;

      // Step-halving line search on the sup norm of the residual.
      double alpha = 1.0;
      bool accepted = false;
      Potential trial;
      Vec Rt(size), dett(size);
      for (int halving = 0; halving <= opt_.max_halvings; ++halving, alpha *= 0.5) {
        trial = U;
        for (std::size_t i = 0; i < trial.base.size(); ++i) trial.base[i] += alpha * dU.base[i];
        for (std::size_t i = 0; i < trial.fibre.size(); ++i) trial.fibre[i] += alpha * dU.fibre[i];
        if (!residual(trial, kappa + alpha * dkappa, Rt, dett)) continue;
        const double tn = sup_norm(Rt);
        if (tn < rnorm) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // Restore the metric of the current iterate for the report and stop.
        residual(U, kappa, R, det);
        report.residual = certificate(det);
        report.converged = report.residual <= opt_.certificate;
        break;
      }
      U = std::move(trial);
      kappa += alpha * dkappa;
      R.swap(Rt);
      det.swap(dett);
      rnorm = sup_norm(R);
      report.iterations = it + 1;
      report.residuals.push_back(rnorm);
      report.damping.push_back(alpha);
    }

    ScalarField out(g);
    model_.to_field(U, out.values());
    const double m = mean(out);
    for (double& v : out.values()) v -= m;
    if (!report.converged) {
      std::ostringstream os;
      os << "Newton did not reach the residual certificate after " << report.iterations
         << " iterations (relative residual " << report.residual << ")";
      throw NewtonFailure(os.str(), report);
    }
    return {std::move(out), std::move(report)};
  }

 private:
  // Fills R = log det - log target - kappa; false on positivity loss.
  bool residual(const Potential& U, double kappa, Vec& R, Vec& det) {
    model_.hessian(U, metric_);
    const int n = model_.grid().n;
    for (std::size_t p = 0; p < R.size(); ++p) {
      const Herm gp = local::add(background_.at(p), metric_.at(p));
      metric_.set(p, gp);
      if (!(local::relative_lambda_min(n, gp, A_) >= kPositivityThreshold)) return false;
      det[p] = local::det(n, gp);
      R[p] = std::log(det[p]) - log_target_[p] - kappa;
    }
    return true;
  }

  void precondition(const Vec& x, Potential& out) {
    const Potential split = model_.to_potential(ScalarField(model_.grid(), x));
    model_.apply_class_symbol(t_, [](double s) { return s == 0.0 ? -1.0 : 1.0 / s; }, split, out);
  }

  double certificate(const Vec& det) const {
    double worst = 0.0;
    for (std::size_t p = 0; p < det.size(); ++p) worst = std::max(worst, std::abs(det[p] - std::exp(log_target_[p])));
    return worst / scale_;
  }

  FlowModel& model_;
  double t_;
  Vec log_target_;
  double scale_;  // c mean(h)
  NewtonOptions opt_;
  HermitianField background_, metric_, hz_;
  Herm A_;
};

FlowInputs constant_inputs(const EllipticProblem& problem) {
  const GridSpec grid = problem.form.phi.grid();
  if (!(problem.Omega.h.grid() == grid))
    throw Error(ErrorCode::dimension_mismatch, "density and potential live on different grids");
  if (problem.form.A.rows() != grid.n || !is_hermitian(problem.form.A))
    throw Error(ErrorCode::invalid_input, "class matrix must be Hermitian of size n");
  if (!(lambda_min(problem.form.A) > 0.0))
    throw Error(ErrorCode::invalid_input, "Calabi-Yau solve needs a positive definite class");
  if (!(problem.c > 0.0)) throw Error(ErrorCode::invalid_input, "compatibility constant must be positive");
  problem.Omega.validate();
  ScalarField log_h(grid);
  for (std::size_t p = 0; p < grid.size(); ++p) log_h[p] = std::log(problem.Omega.h[p]);
  ClassPath path = compute_T(problem.form.A, problem.form.A);
  return FlowInputs{grid, std::move(path), problem.form.phi, problem.form.phi, std::move(log_h)};
}

}  // namespace

CySolution solve_cy(const EllipticProblem& problem, const ScalarField* U0, const NewtonOptions& options) {
  FlowModel model(constant_inputs(problem), FlowKind::raw);
  const GridSpec grid = model.grid();
  Vec target(grid.size());
  for (std::size_t p = 0; p < target.size(); ++p) target[p] = std::log(problem.c) + model.inputs().log_h[p];
  const double scale = problem.c * mean(problem.Omega.h);
  MongeAmpereNewton newton(model, 0.0, std::move(target), scale, options);
  const ScalarField zero(grid);
  const ScalarField& start = U0 ? *U0 : zero;
  if (!(start.grid() == grid)) throw Error(ErrorCode::dimension_mismatch, "initial guess grid mismatch");
  return newton.solve(model.to_potential(start));
}

ScalarField newton_operator(const EllipticProblem& problem, const ScalarField& U, const ScalarField& delta) {
  return ma_linearization(problem.form, U, delta);
}

std::vector<PsiSample> solve_psi_family(const FlowInputs& inputs, const std::vector<double>& times,
                                        const NewtonOptions& options) {
  if (inputs.path.regime != Regime::collapsed)
    throw Error(ErrorCode::inconsistent_regime, "the potential family needs a collapsing class path");
  FlowModel model(inputs, FlowKind::scaled);
  const GridSpec grid = model.grid();
  const double mean_h = [&] {
    ScalarField h(grid);
    for (std::size_t p = 0; p < grid.size(); ++p) h[p] = std::exp(inputs.log_h[p]);
    return mean(h);
  }();
  std::vector<PsiSample> out;
  Potential guess = model.to_potential(ScalarField(grid));
  for (double t : times) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorCode::invalid_input, "family times must be finite and >= 0");
    // c_t e^{-rt} h with c_t = det(A_t) e^{rt} / mean(h).
    const double level = class_volume(inputs.path.at(t)) / mean_h;
    Vec target(grid.size());
    for (std::size_t p = 0; p < target.size(); ++p) target[p] = std::log(level) + inputs.log_h[p];
    MongeAmpereNewton newton(model, t, std::move(target), level * mean_h, options);
    try {
      // Warm start from the previous time when that potential stays admissible.
      CySolution s = [&] {
        try {
          return newton.solve(guess);
        } catch (const NewtonFailure&) {
          return newton.solve(model.to_potential(ScalarField(grid)));
        }
      }();
      guess = model.to_potential(s.U);
      out.push_back({t, std::move(s.U), std::move(s.report)});
    } catch (const NewtonFailure& e) {
      std::ostringstream os;
      os << "potential family solve failed at t = " << t << ": " << e.what();
      throw NewtonFailure(os.str(), e.report());
    }
  }
  return out;
}

}  // namespace mkrf
