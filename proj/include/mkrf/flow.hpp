#pragma once

// Time integration of the potential flows on the torus:
//
//   raw        du/dt = log det(omega_t + H[u]) / h
//   scaled     dv/dt = log det(omega_t + H[v]) / (e^{-rt} h)
//   comparison dw/dt = log det(omega_t + H[w]) / (e^{-rt} h) - w
//
// with omega_t = A_t + H[phi_t], phi_t = e^{-t} phi_0 + (1 - e^{-t}) phi_inf.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mkrf/kahler.hpp"
#include "mkrf/torus_field.hpp"

namespace mkrf {

struct FlowInputs {
  GridSpec grid;
  ClassPath path;
  ScalarField phi0;
  ScalarField phi_inf;
  ScalarField log_h;  // log of the volume density
};

namespace detail {
class FibreSplit;
}

enum class FlowKind { raw, scaled, comparison };
enum class Integrator { rk4, imex };

const char* to_string(Integrator i);

// A potential as integrated. For collapsing classes with a coordinate kernel
// it is held as its fibre average `base` plus the fibre-dependent remainder;
// otherwise `base` is empty and `fibre` is the whole field.
struct Potential {
  std::vector<double> base;
  std::vector<double> fibre;
};

struct FlowState {
  FlowKind kind = FlowKind::raw;
  double t = 0.0;
  Potential pot;          // integrated representation of u
  Potential rate;         // same representation of du/dt
  ScalarField u;          // u, v or w depending on kind
  ScalarField u_dot;      // right-hand side at (t, u)
  HermitianField metric;  // omega_t + H[u]
  ScalarField det;        // det(metric)
  double C3 = 0.0;
  double dt_last = 0.0;
  int retries_last = 0;
};

// Evaluates one flow's right-hand side; owns the spectral workspace, so each
// concurrently running flow needs its own model.
class FlowModel {
 public:
  FlowModel(FlowInputs inputs, FlowKind kind);
  ~FlowModel();
  FlowModel(FlowModel&&) noexcept;
  FlowModel& operator=(FlowModel&&) noexcept;

  const FlowInputs& inputs() const { return inputs_; }
  FlowKind kind() const { return kind_; }
  const GridSpec& grid() const { return inputs_.grid; }
  int r() const { return inputs_.path.r; }
  SpectralOps& ops();

  // omega_t pointwise.
  void background(double t, HermitianField& out) const;

  // True when potentials are stored split along the collapsing directions.
  bool split() const { return split_ != nullptr; }
  Potential to_potential(const ScalarField& u) const;
  void to_field(const Potential& y, std::span<double> out) const;

  // H[y] pointwise.
  void hessian(const Potential& y, HermitianField& out);

  // Right-hand side at (t, y) in both representations, plus the metric
  // omega_t + H[y] and its determinant. Throws SingularMetricError when the
  // metric fails the positivity test relative to A_t.
  void evaluate(double t, const Potential& y, Potential& rhs, std::span<double> rhs_full,
                HermitianField& metric, std::span<double> det);

  // f(symbol) applied as a Fourier multiplier, where symbol is that of the
  // constant-coefficient Laplacian of A_t (zero only on the constant mode).
  void apply_class_symbol(double t, const std::function<double(double)>& f, const Potential& y, Potential& out);

  // (I - gamma L)^{-1} y for L = beta * (Laplacian of A_t), and L y.
  void implicit_solve(double t, double beta, double gamma, const Potential& y, Potential& out);
  void apply_implicit(double t, double beta, const Potential& y, Potential& out);

  // Evaluates into a fresh state.
  FlowState make_state(double t, Potential y);
  FlowState make_state(double t, const ScalarField& u);

 private:
  FlowInputs inputs_;
  FlowKind kind_;
  HermitianField hess_phi0_, hess_phi_inf_;
  std::unique_ptr<SpectralOps> ops_;
  std::unique_ptr<detail::FibreSplit> split_;
  std::vector<double> full_, hbb_;
};

// Stateless right-hand sides (each builds a temporary model).
ScalarField rhs_mskrf(const FlowInputs& in, double t, const ScalarField& u);
ScalarField rhs_scaled(const FlowInputs& in, double t, const ScalarField& v);
ScalarField rhs_comparison(const FlowInputs& in, double t, const ScalarField& w);

// Flow started from zero potential at t = 0, with C3 filled in.
FlowState initial_state(FlowModel& model);

// Shift making the normalized potential u - C3 t non-increasing: the max of
// du/dt|_0 and of d/dt(du/dt + u)|_0 = Delta(du/dt) - <omega~_0, omega_0 - omega_inf> + du/dt.
double normalization_constant(FlowModel& model, const FlowState& initial);

// Explicit RK4 limit: 0.8 / (lambda_bar (pi N)^2 / 2), lambda_bar the largest
// eigenvalue of the inverse metric over the grid.
double stable_dt(const FlowState& state);

inline constexpr int kMaxStepRetries = 20;

// Classical RK4 step. On positivity loss in a stage the step is retried with
// dt halved, up to kMaxStepRetries times; after that Error(singularity_stop).
FlowState step_rk4(FlowModel& model, const FlowState& state, double dt);

// ARS(4,4,3) IMEX step: beta * (constant-coefficient A_t Laplacian) implicit,
// the rest explicit; beta is the largest relative inverse-metric eigenvalue
// at the step start. Same retry policy as step_rk4.
FlowState step_imex(FlowModel& model, const FlowState& state, double dt);

// Step-size controller for the IMEX integrator: grows dt geometrically, caps
// the predicted change of du/dt per step, never exceeds dt_max.
struct ImexController {
  double dt_max = 0.05;
  double growth = 1.25;
  double max_rate_change = 0.02;
  // `planned` is the step the controller asked for last time; a step cut
  // short to land on a given time then does not throttle the growth.
  double next(const FlowState& previous, const FlowState& current, double planned = 0.0) const;
};

}  // namespace mkrf
