#include "doctest.h"
#include "mkrf/error.hpp"
#include "support.hpp"

using namespace mkrf;
using namespace mkrf::test;

namespace {

HermitianField random_positive_field(const GridSpec& g, std::mt19937_64& rng) {
  HermitianField f(g);
  for (std::size_t p = 0; p < g.size(); ++p) f.set(p, random_positive(rng));
  return f;
}

}  // namespace

TEST_CASE("ma_density of the flat identity form is one") {
  const GridSpec g{2, 8};
  const KahlerForm form{diag({1, 1}), ScalarField(g)};
  const ScalarField d = ma_density(form, ScalarField(g));
  for (std::size_t p = 0; p < g.size(); ++p) CHECK(d[p] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("ma_density in one variable") {
  const double a = 1.7, eps = 0.02;
  const GridSpec g{1, 16};
  const KahlerForm form{diag({a}), ScalarField(g)};
  const ScalarField d = ma_density(form, trig_field(g, std::vector<Mode>{{{1, 0}, eps, 0.0}}));
  double err = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p)
    err = std::max(err, std::abs(d[p] - (a - eps * M_PI * M_PI * std::cos(2 * M_PI * coordinate(g, p, 0)))));
  CHECK(err <= 1e-13);
}

TEST_CASE("ma_density matches a dense determinant per point") {
  std::mt19937_64 rng(5);
  const GridSpec g{2, 8};
  const std::vector<Mode> phi{{{1, 0, 1, 0}, 0.003, 0.2}, {{0, 1, 0, 2}, 0.002, 1.0}};
  const std::vector<Mode> u{{{2, 1, 0, 0}, 0.001, 0.5}, {{0, 0, 1, 1}, 0.002, 0.0}};
  const CMatrix A = to_matrix(2, random_positive(rng));
  const KahlerForm form{A, trig_field(g, phi)};
  const ScalarField uf = trig_field(g, u);
  const ScalarField d = ma_density(form, uf);
  const HermitianField Hp = complex_hessian(form.phi), Hu = complex_hessian(uf);
  double err = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    CMatrix M = A;
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) M(j, k) += Hp.entry(p, j, k) + Hu.entry(p, j, k);
    err = std::max(err, std::abs(M.determinant().real() - d[p]));
  }
  CHECK(err <= 1e-13);
}

TEST_CASE("ma_density reports positivity loss with its location") {
  const GridSpec g{1, 16};
  const KahlerForm form{diag({1}), ScalarField(g)};
  // 1 - 2 cos(2 pi x) is negative at x = 0.
  const ScalarField u = trig_field(g, std::vector<Mode>{{{1, 0}, 2.0 / (M_PI * M_PI), 0.0}});
  try {
    ma_density(form, u);
    FAIL("expected a singular metric");
  } catch (const SingularMetricError& e) {
    CHECK(e.code() == ErrorCode::singular_metric);
    CHECK(e.index() == 0);
    CHECK(e.lambda_min() == doctest::Approx(-1.0));
  }
}

TEST_CASE("cohomology conservation of the Monge-Ampere mass") {
  std::mt19937_64 rng(9);
  const GridSpec g{2, 16};
  std::uniform_int_distribution<int> k(-3, 3);
  std::uniform_real_distribution<double> a(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Mode> phi, u;
    for (int i = 0; i < 4; ++i) {
      phi.push_back({{k(rng), k(rng), k(rng), k(rng)}, 0.001 * a(rng), a(rng)});
      u.push_back({{k(rng), k(rng), k(rng), k(rng)}, 0.001 * a(rng), a(rng)});
    }
    const KahlerForm form{to_matrix(2, random_positive(rng)), trig_field(g, phi)};
    const double m0 = mean(ma_density(form, ScalarField(g)));
    const double m1 = mean(ma_density(form, trig_field(g, u)));
    CHECK(std::abs(m1 - m0) <= 1e-9);
    CHECK(std::abs(m0 - class_volume(form.A)) <= 1e-9 * class_volume(form.A));
  }
}

TEST_CASE("trace_pair examples") {
  const GridSpec g{2, 8};
  std::mt19937_64 rng(13);
  HermitianField id(g);
  for (std::size_t p = 0; p < g.size(); ++p) id.set(p, {1.0, 1.0, {}});
  const ScalarField n_id = trace_pair(id, id);
  CHECK(n_id.min() == 2.0);
  CHECK(n_id.max() == 2.0);

  const HermitianField phi = random_positive_field(g, rng);
  const ScalarField self = trace_pair(phi, phi);
  CHECK(self.min() == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(self.max() == doctest::Approx(2.0).epsilon(1e-13));

  const HermitianField psi = random_positive_field(g, rng);
  const ScalarField tr = trace_pair(phi, psi);
  double err = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const CMatrix P = to_matrix(2, phi.at(p)), Q = to_matrix(2, psi.at(p));
    err = std::max(err, std::abs((P.inverse() * Q).trace().real() - tr[p]));
  }
  CHECK(err <= 1e-12);

  HermitianField bad(g);
  CHECK_THROWS_AS(trace_pair(bad, psi), SingularMetricError);
}

TEST_CASE("trace inequalities on random positive pairs") {
  std::mt19937_64 rng(17);
  for (int n : {1, 2}) {
    const std::size_t count = 1000;
    int cs_violations = 0, elem_violations = 0;
    double cs_worst = 1e300, elem_worst = 1e300;
    for (std::size_t i = 0; i < count; ++i) {
      Herm a = random_positive(rng), b = random_positive(rng);
      if (n == 1) a = {a.a, 0.0, {}}, b = {b.a, 0.0, {}};
      const double ab = local::trace_pair(n, a, b), ba = local::trace_pair(n, b, a);
      const double cs = ab * ba - n * n;
      const double elem = std::pow(ab, n - 1) * local::det(n, a) / local::det(n, b) - ba;
      cs_worst = std::min(cs_worst, cs);
      elem_worst = std::min(elem_worst, elem);
      cs_violations += cs < -1e-12;
      elem_violations += elem < -1e-12;
    }
    INFO("n = " << n << ", worst Cauchy-Schwarz margin " << cs_worst << ", worst elementary margin " << elem_worst);
    CHECK(cs_violations == 0);
    CHECK(elem_violations == 0);
  }
}

TEST_CASE("flow_laplacian of the identity metric") {
  const GridSpec g{1, 16};
  HermitianField id(g);
  for (std::size_t p = 0; p < g.size(); ++p) id.set(p, {1.0, 0.0, {}});
  // f = cos(2 pi (x + 2y)): (f_xx + f_yy) / 4 = -pi^2 (1 + 4) f
  const ScalarField f = trig_field(g, std::vector<Mode>{{{1, 2}, 1.0, 0.0}});
  const ScalarField lap = flow_laplacian(id, f);
  double err = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) err = std::max(err, std::abs(lap[p] + 5.0 * M_PI * M_PI * f[p]));
  CHECK(err <= 1e-11);
  const ScalarField zero = flow_laplacian(id, ScalarField(g, 3.0));
  CHECK(std::max(zero.max(), -zero.min()) <= 1e-14);
  CHECK(std::abs(mean(lap)) <= 1e-12);
}

TEST_CASE("compute_T and the regime trichotomy") {
  const ClassPath same = compute_T(diag({1, 1}), diag({1, 1}));
  CHECK(same.regime == Regime::kahler_limit);
  CHECK(std::isinf(same.T));

  const ClassPath ft = compute_T(diag({1, 1}), diag({2, -1}));
  CHECK(ft.regime == Regime::finite_time);
  CHECK(std::abs(ft.T - std::log(2.0)) <= 1e-10);
  CHECK(std::abs(ft.s_star - 0.5) <= 1e-12);
  // mu(s) > 0 just above s*, mu(s*) ~ 0
  auto mu = [&](double s) { return lambda_min((1.0 - s) * ft.Ainf + s * ft.A0); };
  CHECK(std::abs(mu(ft.s_star)) <= 1e-10);
  for (double s = ft.s_star + 1e-10; s <= 1.0; s += 0.01) CHECK(mu(s) > 0.0);

  const ClassPath co = compute_T(diag({1, 1}), diag({1, 0}));
  CHECK(co.regime == Regime::collapsed);
  CHECK(std::isinf(co.T));
  CHECK(co.r == 1);

  const ClassPath zero = compute_T(diag({1, 1}), diag({0, 0}));
  CHECK(zero.regime == Regime::collapsed);
  CHECK(zero.r == 2);

  // A rotated finite-time pencil: the same spectrum in another basis.
  CMatrix U(2, 2);
  U << cplx(0.6, 0), cplx(0, -0.8), cplx(0, -0.8), cplx(0.6, 0);
  const ClassPath rot = compute_T(diag({1, 1}), U * diag({2, -1}) * U.adjoint());
  CHECK(std::abs(rot.T - std::log(2.0)) <= 1e-10);

  CHECK(compute_T(diag({1}), diag({0.5})).regime == Regime::kahler_limit);
  CHECK(compute_T(diag({1}), diag({-1})).T == doctest::Approx(std::log(2.0)));

  CHECK_THROWS_AS(compute_T(diag({1, -1}), diag({1, 1})), Error);
  CMatrix nh = diag({1, 1});
  nh(0, 1) = 0.5;
  CHECK_THROWS_AS(compute_T(diag({1, 1}), nh), Error);
}

TEST_CASE("class volume and path") {
  CHECK(class_volume(diag({1, 1})) == doctest::Approx(1.0));
  CHECK(class_volume(diag({1, 0})) == 0.0);
  CHECK(class_volume(diag({2, 3})) == doctest::Approx(6.0));
  const ClassPath p = compute_T(diag({1, 1}), diag({2, -1}));
  CHECK(std::abs(lambda_min(p.at(p.T))) <= 1e-10);
}

TEST_CASE("volume density") {
  const GridSpec g{1, 8};
  const VolumeDensity v = VolumeDensity::from_log(trig_field(g, std::vector<Mode>{{{1, 0}, 0.3, 0.0}}));
  CHECK(v.h.min() > 0.0);
  VolumeDensity bad{ScalarField(g, 0.0)};
  CHECK_THROWS_AS(bad.validate(), Error);
}
