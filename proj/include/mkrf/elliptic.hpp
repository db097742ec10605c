#pragma once

// Damped Newton solver for det(A + H[phi] + H[U]) = c h on the torus, and the
// family of such solves along a collapsing class path.

#include <vector>

#include "mkrf/error.hpp"
#include "mkrf/flow.hpp"
#include "mkrf/kahler.hpp"

namespace mkrf {

struct EllipticProblem {
  KahlerForm form;
  VolumeDensity Omega;
  double c = 1.0;

  // Uses the discrete compatibility constant c = det(A) / mean(h).
  static EllipticProblem compatible(KahlerForm form, VolumeDensity Omega);
};

struct NewtonOptions {
  int max_iterations = 100;
  int max_halvings = 30;
  double linear_tolerance = 1e-8;  // relative, for the inner Krylov solve
  int restart = 40;
  int max_linear_iterations = 400;
  double certificate = 1e-10;  // sup|det - c h| <= certificate * c * mean(h)
};

struct NewtonReport {
  int iterations = 0;
  int linear_iterations = 0;
  double residual = 0.0;           // sup|det - c h| / (c mean(h)) at exit
  double log_residual = 0.0;       // sup of the log-form residual at exit
  std::vector<double> residuals;   // log-form residual after each accepted step
  std::vector<double> damping;     // accepted step length per iteration
  double gauge_offset = 0.0;       // mean removed from the final iterate
  bool converged = false;
};

class NewtonFailure : public Error {
 public:
  NewtonFailure(const std::string& what, NewtonReport report)
      : Error(ErrorCode::not_converged, what), report_(std::move(report)) {}
  const NewtonReport& report() const { return report_; }

 private:
  NewtonReport report_;
};

struct CySolution {
  ScalarField U;
  NewtonReport report;
};

// Requires A positive definite. U0 (optional) must be admissible; the zero
// potential is used otherwise. Throws NewtonFailure on non-convergence.
CySolution solve_cy(const EllipticProblem& problem, const ScalarField* U0 = nullptr,
                    const NewtonOptions& options = {});

// Newton's linear operator applied to delta: det(g) tr(g^{-1} H[delta]) at U.
ScalarField newton_operator(const EllipticProblem& problem, const ScalarField& U, const ScalarField& delta);

struct PsiSample {
  double t = 0.0;
  ScalarField psi;
  NewtonReport report;
};

// For each t solves det(A_t + H[phi_t] + H[psi]) = c_t e^{-rt} h with
// c_t = det(A_t) e^{rt} / mean(h). Needs a collapsed path. A failing time is
// reported as NewtonFailure naming that time.
std::vector<PsiSample> solve_psi_family(const FlowInputs& inputs, const std::vector<double>& times,
                                        const NewtonOptions& options = {});

}  // namespace mkrf
