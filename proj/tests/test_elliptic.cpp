#include "doctest.h"
#include "mkrf/elliptic.hpp"
#include "mkrf/error.hpp"
#include "mkrf/monitors.hpp"
#include "support.hpp"

using namespace mkrf;
using namespace mkrf::test;

namespace {

EllipticProblem smooth_problem(int N = 16) {
  const GridSpec g{2, N};
  KahlerForm form{diag({1.0, 1.5}), trig_field(g, std::vector<Mode>{{{1, 0, 1, 0}, 0.003, 0.2}})};
  VolumeDensity h = VolumeDensity::from_log(
      trig_field(g, std::vector<Mode>{{{0, 1, 0, 0}, 0.1, 0.0}, {{0, 0, 2, 1}, 0.05, 0.4}}));
  return EllipticProblem::compatible(std::move(form), std::move(h));
}

// Central difference of det (or of log det, divided through by det) along
// delta against the Newton operator. det is a polynomial of degree n in eps,
// so its central difference is exact up to rounding; log det is not, and
// shows the second-order truncation error.
double relative_fd_error(const EllipticProblem& pr, const ScalarField& U, const ScalarField& delta, double eps,
                         bool log_form) {
  ScalarField up = U, um = U;
  for (std::size_t p = 0; p < U.size(); ++p) up[p] += eps * delta[p], um[p] -= eps * delta[p];
  const ScalarField dp = ma_density(pr.form, up), dm = ma_density(pr.form, um), d0 = ma_density(pr.form, U);
  const ScalarField lin = newton_operator(pr, U, delta);
  double err = 0.0, scale = 0.0;
  for (std::size_t p = 0; p < U.size(); ++p) {
    const double fd = log_form ? (std::log(dp[p]) - std::log(dm[p])) / (2 * eps) : (dp[p] - dm[p]) / (2 * eps);
    const double exact = log_form ? lin[p] / d0[p] : lin[p];
    err = std::max(err, std::abs(fd - exact));
    scale = std::max(scale, std::abs(exact));
  }
  return err / scale;
}

}  // namespace

TEST_CASE("flat problem has the zero solution") {
  const GridSpec g{2, 8};
  const auto pr = EllipticProblem::compatible({diag({1, 1}), ScalarField(g)}, {ScalarField(g, 1.0)});
  CHECK(pr.c == 1.0);
  const CySolution s = solve_cy(pr);
  CHECK(std::max(s.U.max(), -s.U.min()) <= 1e-14);
  CHECK(s.report.converged);
}

TEST_CASE("manufactured solution in one variable") {
  const GridSpec g{1, 32};
  const ScalarField Ustar = trig_field(g, std::vector<Mode>{{{1, 0}, 0.1, 0.0}});
  const KahlerForm form{diag({1}), ScalarField(g)};
  const VolumeDensity h{ma_density(form, Ustar)};
  const auto pr = EllipticProblem::compatible(form, h);
  CHECK(pr.c == doctest::Approx(1.0).epsilon(1e-14));
  const CySolution s = solve_cy(pr);
  CHECK(sup_diff(s.U, minus_mean(Ustar)) <= 1e-9);
  CHECK(s.report.residual <= 1e-10);
}

TEST_CASE("residual certificate, gauge and monotone residuals") {
  const auto pr = smooth_problem();
  const CySolution s = solve_cy(pr);
  REQUIRE(s.report.converged);
  const ScalarField d = ma_density(pr.form, s.U);
  double res = 0.0;
  for (std::size_t p = 0; p < d.size(); ++p) res = std::max(res, std::abs(d[p] - pr.c * pr.Omega.h[p]));
  CHECK(res <= 1e-10 * pr.c * mean(pr.Omega.h));
  CHECK(std::abs(mean(s.U)) <= 1e-12);
  for (std::size_t i = 1; i < s.report.residuals.size(); ++i)
    CHECK(s.report.residuals[i] <= s.report.residuals[i - 1]);
}

TEST_CASE("two initial guesses give the same solution") {
  const auto pr = smooth_problem();
  const GridSpec g = pr.form.phi.grid();
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> k(-3, 3);
  std::uniform_real_distribution<double> a(-0.001, 0.001);
  auto guess = [&] {
    std::vector<Mode> m;
    for (int i = 0; i < 6; ++i) m.push_back({{k(rng), k(rng), k(rng), k(rng)}, a(rng), a(rng) * 1000});
    return trig_field(g, m);
  };
  const ScalarField g1 = guess(), g2 = guess();
  const CySolution s1 = solve_cy(pr, &g1), s2 = solve_cy(pr, &g2);
  CHECK(sup_diff(s1.U, s2.U) <= 1e-8);
}

TEST_CASE("newton operator matches finite differences at second order") {
  const auto pr = smooth_problem(8);
  const GridSpec g = pr.form.phi.grid();
  const ScalarField U = trig_field(g, std::vector<Mode>{{{1, 1, 0, 0}, 0.002, 0.0}, {{0, 0, 1, 2}, 0.001, 0.5}});
  const ScalarField delta = trig_field(g, std::vector<Mode>{{{2, 0, 1, 0}, 0.01, 0.1}, {{0, 1, 1, 1}, 0.01, 0.0}});
  CHECK(relative_fd_error(pr, U, delta, 1e-5, false) <= 1e-6);
  CHECK(relative_fd_error(pr, U, delta, 1e-5, true) <= 1e-6);
  const double e1 = relative_fd_error(pr, U, delta, 0.4, true), e2 = relative_fd_error(pr, U, delta, 0.2, true);
  INFO("errors " << e1 << ", " << e2);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));

  const ScalarField lin = ma_linearization(pr.form, U, delta);
  CHECK(sup_diff(lin, newton_operator(pr, U, delta)) <= 1e-14);
}

TEST_CASE("solver rejects degenerate classes and bad guesses") {
  const GridSpec g{2, 8};
  const VolumeDensity h{ScalarField(g, 1.0)};
  EllipticProblem degenerate{{diag({1, 0}), ScalarField(g)}, h, 1.0};
  CHECK_THROWS_AS(solve_cy(degenerate), Error);
  const auto pr = EllipticProblem::compatible({diag({1, 1}), ScalarField(g)}, h);
  const ScalarField wild = trig_field(g, std::vector<Mode>{{{1, 0, 0, 0}, 1.0, 0.0}});
  CHECK_THROWS_AS(solve_cy(pr, &wild), NewtonFailure);
}

TEST_CASE("potential family along a collapsing path") {
  const FlowInputs flat = inputs({2, 8}, diag({1, 1}), diag({1, 0}));
  const auto fam = solve_psi_family(flat, {0.0});
  REQUIRE(fam.size() == 1);
  CHECK(std::max(fam[0].psi.max(), -fam[0].psi.min()) <= 1e-14);

  const FlowInputs co = inputs({2, 8}, diag({1, 1}), diag({1, 0}), {{{1, 0, 0, 0}, 0.004, 0.0}},
                               {{{0, 1, 0, 0}, 0.003, 0.0}});
  const auto family = solve_psi_family(co, {0.0, 2.0, 4.0});
  REQUIRE(family.size() == 3);
  for (const auto& s : family) {
    CHECK(s.report.converged);
    CHECK(std::abs(mean(s.psi)) <= 1e-12);
  }
  const TrendReport rep = check_psi_family(family, co);
  CHECK(rep.passed());

  const FlowInputs kl = inputs({2, 8}, diag({1, 1}), diag({1, 1}));
  CHECK_THROWS_AS(solve_psi_family(kl, {0.0}), Error);
  CHECK_THROWS_AS(solve_psi_family(co, {-1.0}), Error);
}
