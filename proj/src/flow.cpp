#include "mkrf/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>

#include "mkrf/error.hpp"
#include "fibre_split.hpp"
#include "parallel.hpp"

namespace mkrf {

const char* to_string(Integrator i) { return i == Integrator::rk4 ? "rk4" : "imex"; }

namespace {

void check_same_grid(const GridSpec& grid, const ScalarField& f, const char* what) {
  if (!(f.grid() == grid))
    throw Error(ErrorCode::dimension_mismatch, std::string(what) + " does not live on the flow grid");
}

bool positive_definite(const Herm& h, int n) { return local::lambda_min(n, h) > 0.0; }

}  // namespace

FlowModel::FlowModel(FlowInputs inputs, FlowKind kind) : inputs_(std::move(inputs)), kind_(kind) {
  inputs_.grid.validate();
  check_same_grid(inputs_.grid, inputs_.phi0, "phi0");
  check_same_grid(inputs_.grid, inputs_.phi_inf, "phi_inf");
  check_same_grid(inputs_.grid, inputs_.log_h, "log_h");
  if (inputs_.path.A0.rows() != inputs_.grid.n)
    throw Error(ErrorCode::dimension_mismatch, "class matrices do not match the complex dimension");
  if (!inputs_.log_h.all_finite()) throw Error(ErrorCode::invalid_input, "log_h has non-finite values");
  ops_ = std::make_unique<SpectralOps>(inputs_.grid);
  if (auto split = detail::FibreSplit::for_path(inputs_.grid, inputs_.path))
    split_ = std::make_unique<detail::FibreSplit>(std::move(*split));
  full_.resize(grid().size());
  hess_phi0_ = ops_->hessian(inputs_.phi0);
  if (split_) {
    // omega_inf >= 0 forces phi_inf to be constant along the kernel directions.
    const Potential p = to_potential(inputs_.phi_inf);
    double big = 0.0, fibre = 0.0;
    for (double v : inputs_.phi_inf.values()) big = std::max(big, std::abs(v));
    for (double v : p.fibre) fibre = std::max(fibre, std::abs(v));
    if (fibre > 1e-12 * std::max(1.0, big))
      throw Error(ErrorCode::invalid_input,
                  "phi_inf varies along the collapsing directions, so omega_inf is not semi-positive");
    Potential base_only{p.base, std::vector<double>(grid().size(), 0.0)};
    hess_phi_inf_ = HermitianField(grid());
    hessian(base_only, hess_phi_inf_);
  } else {
    hess_phi_inf_ = ops_->hessian(inputs_.phi_inf);
  }
}

FlowModel::~FlowModel() = default;
FlowModel::FlowModel(FlowModel&&) noexcept = default;
FlowModel& FlowModel::operator=(FlowModel&&) noexcept = default;

SpectralOps& FlowModel::ops() { return *ops_; }

Potential FlowModel::to_potential(const ScalarField& u) const {
  check_same_grid(grid(), u, "potential");
  Potential p;
  if (!split_) {
    p.fibre.assign(u.values().begin(), u.values().end());
    return p;
  }
  p.base.resize(split_->base_size());
  p.fibre.resize(u.size());
  split_->split(u.values(), p.base, p.fibre);
  return p;
}

void FlowModel::to_field(const Potential& y, std::span<double> out) const {
  if (!split_)
    std::copy(y.fibre.begin(), y.fibre.end(), out.begin());
  else
    split_->combine(y.base, y.fibre, out);
}

void FlowModel::hessian(const Potential& y, HermitianField& out) {
  ops_->hessian(y.fibre, out);
  if (!split_ || split_->base_axis() < 0) return;
  hbb_.resize(split_->base_size());
  split_->base_hessian(y.base, hbb_);
  auto entry = split_->base_axis() == 0 ? out.diag0() : out.diag1();
  for (std::size_t p = 0; p < entry.size(); ++p) entry[p] += hbb_[split_->base_index(p)];
}

void FlowModel::background(double t, HermitianField& out) const {
  if (!(out.grid() == grid())) out = HermitianField(grid());
  const Herm At = to_herm(inputs_.path.at(t));
  const double e = std::exp(-t);
  for (std::size_t p = 0; p < out.size(); ++p)
    out.set(p, local::add(At, local::add(local::scaled(hess_phi0_.at(p), e),
                                         local::scaled(hess_phi_inf_.at(p), 1.0 - e))));
}

void FlowModel::evaluate(double t, const Potential& y, Potential& rhs, std::span<double> rhs_full,
                         HermitianField& metric, std::span<double> det) {
  const GridSpec& g = grid();
  const std::size_t size = g.size();
  if (y.fibre.size() != size || rhs_full.size() != size || det.size() != size ||
      (split_ && y.base.size() != split_->base_size()))
    throw Error(ErrorCode::dimension_mismatch, "flow: buffer sizes do not match the grid");
  for (const auto* part : {&y.base, &y.fibre})
    for (double v : *part)
      if (!std::isfinite(v)) throw Error(ErrorCode::not_converged, "numerical breakdown: non-finite potential");

  if (!(metric.grid() == g)) metric = HermitianField(g);
  hessian(y, metric);
  if (kind_ == FlowKind::comparison) to_field(y, full_);

  const int n = g.n;
  const Herm At = to_herm(inputs_.path.at(t));
  const bool relative = positive_definite(At, n);
  const Herm ref = relative ? At : Herm{1.0, 1.0, {}};
  const double e = std::exp(-t);
  const double shift = kind_ == FlowKind::raw ? 0.0 : r() * t;
  const auto log_h = inputs_.log_h.values();

  double worst = std::numeric_limits<double>::infinity();
  std::size_t worst_at = 0;
  for (std::size_t p = 0; p < size; ++p) {
    const Herm gp = local::add(local::add(At, metric.at(p)),
                               local::add(local::scaled(hess_phi0_.at(p), e),
                                          local::scaled(hess_phi_inf_.at(p), 1.0 - e)));
    metric.set(p, gp);
    const double l = local::relative_lambda_min(n, gp, ref);
    if (!(l >= worst)) {
      worst = l;
      worst_at = p;
    }
    const double d = local::det(n, gp);
    det[p] = d;
    rhs_full[p] = std::log(d) - log_h[p] + shift;
    if (kind_ == FlowKind::comparison) rhs_full[p] -= full_[p];
  }
  if (!(worst >= kPositivityThreshold)) throw SingularMetricError(worst_at, worst);

  if (!split_) {
    rhs.base.clear();
    rhs.fibre.assign(rhs_full.begin(), rhs_full.end());
  } else {
    rhs.base.resize(split_->base_size());
    rhs.fibre.resize(size);
    split_->split(rhs_full, rhs.base, rhs.fibre);
  }
}

void FlowModel::apply_class_symbol(double t, const std::function<double(double)>& f, const Potential& y,
                                   Potential& out) {
  const int n = grid().n;
  const Herm A = to_herm(inputs_.path.at(t));
  const Herm inv = positive_definite(A, n) ? local::inverse(n, A) : Herm{1.0, 1.0, {}};
  std::vector<double> sym = ops_->laplacian_symbol(inv);
  for (double& v : sym) v = f(v);
  out.fibre.resize(y.fibre.size());
  ops_->apply_multiplier(y.fibre, sym, out.fibre);
  out.base.resize(y.base.size());
  if (split_) {
    std::vector<double> base = split_->base_symbol();
    const double coeff = split_->base_axis() == 1 ? inv.d : inv.a;
    for (double& v : base) v = f(coeff * v);
    split_->base_multiplier(y.base, base, out.base);
  }
}

void FlowModel::implicit_solve(double t, double beta, double gamma, const Potential& y, Potential& out) {
  apply_class_symbol(t, [&](double s) { return 1.0 / (1.0 - gamma * beta * s); }, y, out);
}

void FlowModel::apply_implicit(double t, double beta, const Potential& y, Potential& out) {
  apply_class_symbol(t, [&](double s) { return beta * s; }, y, out);
}

FlowState FlowModel::make_state(double t, Potential y) {
  FlowState s;
  s.kind = kind_;
  s.t = t;
  s.u = ScalarField(grid());
  s.u_dot = ScalarField(grid());
  s.det = ScalarField(grid());
  s.metric = HermitianField(grid());
  evaluate(t, y, s.rate, s.u_dot.values(), s.metric, s.det.values());
  to_field(y, s.u.values());
  s.pot = std::move(y);
  return s;
}

FlowState FlowModel::make_state(double t, const ScalarField& u) { return make_state(t, to_potential(u)); }

namespace {

ScalarField rhs_of(const FlowInputs& in, FlowKind kind, double t, const ScalarField& u) {
  FlowModel model(in, kind);
  check_same_grid(in.grid, u, "potential");
  return model.make_state(t, u).u_dot;
}

}  // namespace

ScalarField rhs_mskrf(const FlowInputs& in, double t, const ScalarField& u) {
  return rhs_of(in, FlowKind::raw, t, u);
}
ScalarField rhs_scaled(const FlowInputs& in, double t, const ScalarField& v) {
  return rhs_of(in, FlowKind::scaled, t, v);
}
ScalarField rhs_comparison(const FlowInputs& in, double t, const ScalarField& w) {
  return rhs_of(in, FlowKind::comparison, t, w);
}

FlowState initial_state(FlowModel& model) {
  FlowState s = model.make_state(0.0, ScalarField(model.grid()));
  if (model.kind() != FlowKind::comparison) s.C3 = normalization_constant(model, s);
  return s;
}

double normalization_constant(FlowModel& model, const FlowState& initial) {
  if (initial.t != 0.0) throw Error(ErrorCode::invalid_input, "normalization needs the state at t = 0");
  const FlowInputs& in = model.inputs();
  const int n = model.grid().n;
  // At t = 0 the raw and scaled right-hand sides coincide.
  const ScalarField& ut = initial.u_dot;
  HermitianField hess_ut = model.ops().hessian(ut);
  ScalarField diff(model.grid());
  for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = in.phi0[p] - in.phi_inf[p];
  HermitianField hess_diff = model.ops().hessian(diff);
  const Herm dA = to_herm(in.path.A0 - in.path.Ainf);

  double best = ut.max();
  for (std::size_t p = 0; p < ut.size(); ++p) {
    const Herm g = initial.metric.at(p);
    const double lap = local::trace_pair(n, g, hess_ut.at(p));
    const double pairing = local::trace_pair(n, g, local::add(dA, hess_diff.at(p)));
    best = std::max(best, lap - pairing + ut[p]);
  }
  return best;
}

double stable_dt(const FlowState& state) {
  const double lambda_bar = max_inverse_eigenvalue(state.metric);
  const double N = state.metric.grid().N;
  const double radius = lambda_bar * (M_PI * N) * (M_PI * N) / 2.0;
  return 0.8 / radius;
}

namespace {

// Runs `attempt(dt)` with dt halved after each positivity failure.
template <class F>
FlowState with_retries(const FlowState& state, double dt, F&& attempt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::invalid_input, "time step must be positive");
  for (int retry = 0;; ++retry) {
    try {
      FlowState next = attempt(dt);
      next.dt_last = dt;
      next.retries_last = retry;
      next.C3 = state.C3;
      return next;
    } catch (const SingularMetricError& e) {
      if (retry >= kMaxStepRetries)
        throw Error(ErrorCode::singularity_stop,
                    "positivity lost at t = " + std::to_string(state.t) + " after " +
                        std::to_string(kMaxStepRetries) + " step halvings: " + e.what());
      dt *= 0.5;
    }
  }
}

// out = x + sum a_j y_j on both parts of the representation.
void lincomb(Potential& out, const Potential& x, std::initializer_list<std::pair<double, const Potential*>> terms) {
  auto part = [&](std::vector<double> Potential::*member) {
    const std::vector<double>& xs = x.*member;
    std::vector<double>& os = out.*member;
    os.resize(xs.size());
    for (std::size_t p = 0; p < xs.size(); ++p) {
      double acc = xs[p];
      for (const auto& [a, y] : terms) acc += a * (y->*member)[p];
      os[p] = acc;
    }
  };
  part(&Potential::base);
  part(&Potential::fibre);
}

void scale(Potential& x, double a) {
  for (double& v : x.base) v *= a;
  for (double& v : x.fibre) v *= a;
}

}  // namespace

FlowState step_rk4(FlowModel& model, const FlowState& state, double dt) {
  const GridSpec& g = model.grid();
  return with_retries(state, dt, [&](double h) {
    const std::size_t size = g.size();
    Potential k2, k3, k4, y;
    std::vector<double> full(size), det(size);
    HermitianField metric(g);
    const Potential& u = state.pot;
    const Potential& k1 = state.rate;
    lincomb(y, u, {{0.5 * h, &k1}});
    model.evaluate(state.t + 0.5 * h, y, k2, full, metric, det);
    lincomb(y, u, {{0.5 * h, &k2}});
    model.evaluate(state.t + 0.5 * h, y, k3, full, metric, det);
    lincomb(y, u, {{h, &k3}});
    model.evaluate(state.t + h, y, k4, full, metric, det);
    lincomb(y, u, {{h / 6.0, &k1}, {h / 3.0, &k2}, {h / 3.0, &k3}, {h / 6.0, &k4}});
    return model.make_state(state.t + h, std::move(y));
  });
}

namespace {

// ARS(4,4,3): stiffly accurate, L-stable implicit part.
constexpr int kStages = 5;
constexpr double kGamma = 0.5;
constexpr std::array<double, kStages> kC{0.0, 0.5, 2.0 / 3.0, 0.5, 1.0};
constexpr double kAE[kStages][kStages] = {
    {0, 0, 0, 0, 0},
    {0.5, 0, 0, 0, 0},
    {11.0 / 18.0, 1.0 / 18.0, 0, 0, 0},
    {5.0 / 6.0, -5.0 / 6.0, 0.5, 0, 0},
    {0.25, 1.75, 0.75, -1.75, 0},
};
constexpr double kAI[kStages][kStages] = {
    {0, 0, 0, 0, 0},
    {0, 0.5, 0, 0, 0},
    {0, 1.0 / 6.0, 0.5, 0, 0},
    {0, -0.5, 0.5, 0.5, 0},
    {0, 1.5, -1.5, 0.5, 0.5},
};

// Largest eigenvalue of A^{1/2} g^{-1} A^{1/2} over the grid.
double implicit_weight(const HermitianField& metric, const Herm& At) {
  const int n = metric.grid().n;
  const Herm ref = positive_definite(At, n) ? At : Herm{1.0, 1.0, {}};
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < metric.size(); ++p) lo = std::min(lo, local::relative_lambda_min(n, metric.at(p), ref));
  return 1.0 / lo;
}

}  // namespace

FlowState step_imex(FlowModel& model, const FlowState& state, double dt) {
  const GridSpec& g = model.grid();
  const double beta = implicit_weight(state.metric, to_herm(model.inputs().path.at(state.t)));

  return with_retries(state, dt, [&](double h) {
    const std::size_t size = g.size();
    std::array<Potential, kStages> fe, ki;
    const Potential& u = state.pot;

    // Stage 1 is explicit: Y1 = u with F(Y1) cached in the state.
    model.apply_implicit(state.t, beta, u, ki[0]);
    lincomb(fe[0], state.rate, {{-1.0, &ki[0]}});

    Potential rhs, y, f;
    std::vector<double> full(size), det(size);
    HermitianField metric(g);
    for (int i = 1; i < kStages; ++i) {
      lincomb(rhs, u, {});
      for (int j = 0; j < i; ++j) {
        if (kAE[i][j] != 0.0) lincomb(rhs, rhs, {{h * kAE[i][j], &fe[j]}});
        if (kAI[i][j] != 0.0) lincomb(rhs, rhs, {{h * kAI[i][j], &ki[j]}});
      }
      const double ti = state.t + kC[i] * h;
      model.implicit_solve(ti, beta, h * kGamma, rhs, y);
      // L Y_i recovered from the solve itself: Y_i - rhs_i = h gamma L Y_i.
      lincomb(ki[i], y, {{-1.0, &rhs}});
      scale(ki[i], 1.0 / (h * kGamma));
      if (i == kStages - 1) break;
      model.evaluate(ti, y, f, full, metric, det);
      lincomb(fe[i], f, {{-1.0, &ki[i]}});
    }
    return model.make_state(state.t + h, std::move(y));
  });
}

double ImexController::next(const FlowState& previous, const FlowState& current, double planned) const {
  double dt = std::min(dt_max, growth * std::max(current.dt_last, current.retries_last ? 0.0 : planned));
  if (current.dt_last > 0.0) {
    double change = 0.0;
    for (std::size_t p = 0; p < current.u_dot.size(); ++p)
      change = std::max(change, std::abs(current.u_dot[p] - previous.u_dot[p]));
    const double rate = change / current.dt_last;
    if (rate > 0.0) dt = std::min(dt, max_rate_change / rate);
  }
  return dt;
}

}  // namespace mkrf
