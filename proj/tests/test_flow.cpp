#include "doctest.h"
#include "mkrf/error.hpp"
#include "support.hpp"

using namespace mkrf;
using namespace mkrf::test;

namespace {

const std::vector<Mode> kPhi0{{{1, 0, 0, 0}, 0.004, 0.0}, {{0, 0, 0, 1}, 0.003, 0.7}};
const std::vector<Mode> kPhiInfFibreConstant{{{0, 1, 0, 0}, 0.003, 0.2}};

FlowInputs collapsed_inputs(int N = 8) {
  return inputs({2, N}, diag({1, 1}), diag({1, 0}), kPhi0, kPhiInfFibreConstant);
}

FlowInputs smooth_kahler_inputs(int N = 16) {
  return inputs({1, N}, diag({1}), diag({1}), {{{1, 0}, 0.004, 0.0}, {{0, 2}, 0.002, 1.0}},
                {{{1, 1}, 0.003, 0.5}}, {{{0, 1}, 0.1, 0.0}});
}

double sup_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) d = std::max(d, std::abs(a[p] - b[p]));
  return d;
}

}  // namespace

TEST_CASE("rhs of the flat stationary solution vanishes") {
  const FlowInputs in = inputs({2, 8}, diag({1, 1}), diag({1, 1}));
  const ScalarField r = rhs_mskrf(in, 0.7, ScalarField(in.grid));
  CHECK(r.min() == 0.0);
  CHECK(r.max() == 0.0);
  const ScalarField w = rhs_comparison(in, 0.0, ScalarField(in.grid));
  CHECK(std::max(w.max(), -w.min()) == 0.0);
}

TEST_CASE("rhs for eps cos(2 pi x) in the identity class") {
  const double eps = 0.02;
  const FlowInputs in = inputs({1, 32}, diag({1}), diag({1}));
  const ScalarField u = trig_field(in.grid, std::vector<Mode>{{{1, 0}, eps, 0.0}});
  const ScalarField r = rhs_mskrf(in, 0.3, u);
  double err = 0.0;
  for (std::size_t p = 0; p < u.size(); ++p)
    err = std::max(err, std::abs(r[p] - std::log(1.0 - eps * M_PI * M_PI * std::cos(2 * M_PI * coordinate(in.grid, p, 0)))));
  CHECK(err <= 1e-13);
}

TEST_CASE("rhs approaches the frozen limit form for large t") {
  const FlowInputs in = smooth_kahler_inputs();
  FlowInputs frozen = in;
  frozen.phi0 = in.phi_inf;
  frozen.path = compute_T(in.path.Ainf, in.path.Ainf);
  const ScalarField u = trig_field(in.grid, std::vector<Mode>{{{2, 1}, 0.001, 0.0}});
  CHECK(sup_diff(rhs_mskrf(in, 40.0, u), rhs_mskrf(frozen, 0.0, u)) <= 1e-12);
  // The gap decays like e^{-t}.
  const double d5 = sup_diff(rhs_mskrf(in, 5.0, u), rhs_mskrf(frozen, 0.0, u));
  const double d6 = sup_diff(rhs_mskrf(in, 6.0, u), rhs_mskrf(frozen, 0.0, u));
  CHECK(d6 / d5 == doctest::Approx(std::exp(-1.0)).epsilon(0.05));
}

TEST_CASE("scaled and raw right-hand sides differ by r t") {
  const FlowInputs co = collapsed_inputs();
  const ScalarField v = trig_field(co.grid, std::vector<Mode>{{{1, 1, 0, 0}, 0.002, 0.0}, {{0, 0, 1, 0}, 0.001, 0.3}});
  for (double t : {0.0, 0.5, 3.0}) {
    const ScalarField s = rhs_scaled(co, t, v), r = rhs_mskrf(co, t, v);
    double err = 0.0;
    for (std::size_t p = 0; p < v.size(); ++p) err = std::max(err, std::abs(s[p] - r[p] - t));
    CHECK(err <= 1e-12);
  }
  const FlowInputs kl = smooth_kahler_inputs();
  const ScalarField u(kl.grid, 0.0);
  CHECK(sup_diff(rhs_scaled(kl, 2.0, u), rhs_mskrf(kl, 2.0, u)) == 0.0);
}

TEST_CASE("scaled and comparison rhs at t = 0 from zero potential") {
  const FlowInputs co = collapsed_inputs();
  const KahlerForm form{co.path.A0, co.phi0};
  const ScalarField det = ma_density(form, ScalarField(co.grid));
  ScalarField expected(co.grid);
  for (std::size_t p = 0; p < det.size(); ++p) expected[p] = std::log(det[p]) - co.log_h[p];
  CHECK(sup_diff(rhs_scaled(co, 0.0, ScalarField(co.grid)), expected) <= 1e-14);
  CHECK(sup_diff(rhs_comparison(co, 0.0, ScalarField(co.grid)), expected) <= 1e-14);
}

TEST_CASE("comparison rhs becomes stationary at large t") {
  const FlowInputs co = collapsed_inputs();
  // w constant along the collapsing fibre
  const ScalarField w = trig_field(co.grid, std::vector<Mode>{{{1, 1, 0, 0}, 0.002, 0.0}});
  CHECK(sup_diff(rhs_comparison(co, 30.0, w), rhs_comparison(co, 40.0, w)) <= 1e-3);
}

TEST_CASE("stable_dt plug-in value and scaling") {
  FlowModel flat(inputs({1, 32}, diag({1}), diag({1})), FlowKind::raw);
  const double dt = stable_dt(initial_state(flat));
  CHECK(dt == doctest::Approx(0.8 * 2.0 / std::pow(M_PI * 32, 2)).epsilon(1e-12));
  CHECK(dt == doctest::Approx(1.58e-4).epsilon(0.002));

  FlowModel big(inputs({1, 32}, diag({4}), diag({4})), FlowKind::raw);
  CHECK(stable_dt(initial_state(big)) == doctest::Approx(4 * dt).epsilon(1e-12));
  FlowModel small(inputs({1, 32}, diag({0.5}), diag({0.5})), FlowKind::raw);
  CHECK(stable_dt(initial_state(small)) == doctest::Approx(dt / 2).epsilon(1e-12));
}

TEST_CASE("rk4 keeps the flat stationary state") {
  FlowModel m(inputs({2, 8}, diag({1, 1}), diag({1, 1})), FlowKind::raw);
  FlowState s = initial_state(m);
  const double dt = stable_dt(s);
  for (int i = 0; i < 10; ++i) s = step_rk4(m, s, dt);
  CHECK(std::max(s.u.max(), -s.u.min()) <= 1e-14);
  CHECK(s.t == doctest::Approx(10 * dt));
}

TEST_CASE("rk4 Richardson ratio is close to 32") {
  FlowModel m(smooth_kahler_inputs(), FlowKind::raw);
  const FlowState s0 = initial_state(m);
  const double base = 0.5 * stable_dt(s0);
  auto richardson = [&](double dt) {
    const FlowState one = step_rk4(m, s0, dt);
    const FlowState two = step_rk4(m, step_rk4(m, s0, dt / 2), dt / 2);
    return sup_diff(one.u.values(), two.u.values());
  };
  const double d1 = richardson(base), d2 = richardson(base / 2);
  INFO("differences " << d1 << " and " << d2);
  CHECK(d1 / d2 == doctest::Approx(32.0).epsilon(0.15));
}

TEST_CASE("an oversized step takes the retry path") {
  // A small mode near the grid cutoff makes RK4 blow up far above the bound.
  FlowModel m(inputs({1, 32}, diag({1}), diag({1}), {{{12, 3}, 1e-5, 0.0}}), FlowKind::raw);
  const FlowState s0 = initial_state(m);
  const double big = 50 * stable_dt(s0);
  const FlowState s1 = step_rk4(m, s0, big);
  CHECK(s1.retries_last > 0);
  CHECK(s1.dt_last < big);
  CHECK(s1.t == doctest::Approx(s1.dt_last));
}

TEST_CASE("normalization constant") {
  FlowModel flat(inputs({1, 16}, diag({1}), diag({1})), FlowKind::raw);
  CHECK(initial_state(flat).C3 == 0.0);
  for (double c : {-0.3, 0.3}) {
    FlowModel m(inputs({1, 16}, diag({1}), diag({1}), {}, {}, {{{0, 0}, c, 0.0}}), FlowKind::raw);
    // du/dt = -c everywhere, and the second quantity reduces to du/dt as well.
    CHECK(initial_state(m).C3 == doctest::Approx(-c).epsilon(1e-14));
  }
  FlowModel generic(smooth_kahler_inputs(), FlowKind::raw);
  CHECK(std::isfinite(initial_state(generic).C3));
}

TEST_CASE("scaled and raw flows differ by r t^2 / 2") {
  const FlowInputs co = collapsed_inputs();
  FlowModel raw(co, FlowKind::raw), scaled(co, FlowKind::scaled);
  FlowState u = initial_state(raw), v = initial_state(scaled);
  const double dt = 0.5 * stable_dt(u);
  for (int i = 0; i < 200; ++i) u = step_rk4(raw, u, dt), v = step_rk4(scaled, v, dt);
  double err = 0.0;
  for (std::size_t p = 0; p < u.u.size(); ++p) err = std::max(err, std::abs(v.u[p] - u.u[p] - 0.5 * v.t * v.t));
  CHECK(err <= 1e-10);
}

TEST_CASE("imex agrees with rk4 and converges at third order") {
  FlowModel m(smooth_kahler_inputs(), FlowKind::raw);
  const FlowState s0 = initial_state(m);
  const double t_end = 0.08;
  FlowState ref = s0;
  const double h = 0.5 * stable_dt(s0);
  const int n_ref = static_cast<int>(std::ceil(t_end / h));
  for (int i = 0; i < n_ref; ++i) ref = step_rk4(m, ref, t_end / n_ref);
  auto imex = [&](int steps) {
    FlowState s = s0;
    for (int i = 0; i < steps; ++i) s = step_imex(m, s, t_end / steps);
    return sup_diff(s.u.values(), ref.u.values());
  };
  const double e1 = imex(8), e2 = imex(16);
  INFO("errors " << e1 << " and " << e2);
  CHECK(e2 <= 1e-6);
  CHECK(e1 / e2 >= 6.0);
}

TEST_CASE("imex controller respects its caps") {
  FlowModel m(smooth_kahler_inputs(), FlowKind::raw);
  const FlowState s0 = initial_state(m);
  const FlowState s1 = step_imex(m, s0, 1e-3);
  ImexController c;
  const double dt = c.next(s0, s1, 1e-3);
  CHECK(dt <= c.dt_max);
  CHECK(dt <= c.growth * 1e-3 + 1e-15);
  CHECK(dt > 0.0);
  ImexController tight = c;
  tight.max_rate_change = 1e-9;
  CHECK(tight.next(s0, s1, 1e-3) < dt);
}

TEST_CASE("flow inputs are checked") {
  FlowInputs bad = smooth_kahler_inputs();
  bad.log_h = ScalarField(GridSpec{1, 8});
  CHECK_THROWS_AS(FlowModel(bad, FlowKind::raw), Error);
  FlowInputs varying = collapsed_inputs();
  varying.phi_inf = trig_field(varying.grid, std::vector<Mode>{{{0, 0, 1, 0}, 0.003, 0.0}});
  CHECK_THROWS_AS(FlowModel(varying, FlowKind::scaled), Error);
}
