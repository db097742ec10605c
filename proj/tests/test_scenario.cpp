#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mkrf/error.hpp"
#include "mkrf/scenario.hpp"
#include "support.hpp"

using namespace mkrf;
using namespace mkrf::test;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string error_of(const std::string& text) {
  try {
    validate(scenario_from_json(text));
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

nlohmann::json preset_json(const std::string& name) { return nlohmann::json::parse(scenario_to_json(preset(name))); }

}  // namespace

TEST_CASE("presets are valid and classify into the three regimes") {
  CHECK(preset_names() == std::vector<std::string>{"kahler-limit", "finite-time", "collapsed"});
  CHECK(classify(preset("kahler-limit")).regime == Regime::kahler_limit);
  const ClassPath ft = classify(preset("finite-time"));
  CHECK(ft.regime == Regime::finite_time);
  CHECK(std::abs(ft.T - std::log(2.0)) <= 1e-10);
  const ClassPath co = classify(preset("collapsed"));
  CHECK(co.regime == Regime::collapsed);
  CHECK(co.r == 1);
  for (const auto& name : preset_names()) CHECK_NOTHROW(validate(preset(name)));
  CHECK_THROWS_AS(preset("nope"), Error);
}

TEST_CASE("config serialization round-trips exactly") {
  for (const auto& name : preset_names()) {
    const std::string a = scenario_to_json(preset(name));
    CHECK(scenario_to_json(scenario_from_json(a)) == a);
  }
  Scenario s = preset("collapsed");
  s.phi0_random = 3;
  s.seed = 12345678901234ULL;
  s.integrator = Integrator::rk4;
  s.t_max = 0.1 + 0.2;  // not exactly representable in short decimal
  s.monitors = {"u_hat_nonpositive", "conservation"};
  const std::string a = scenario_to_json(s);
  const Scenario b = scenario_from_json(a);
  CHECK(b.t_max == s.t_max);
  CHECK(b.seed == s.seed);
  CHECK(scenario_to_json(b) == a);
}

TEST_CASE("config errors name the offending field") {
  auto j = preset_json("finite-time");
  j["A0"] = {{{1, 0}, {0.5, 0}}, {{0, 0}, {1, 0}}};
  const std::string msg = error_of(j.dump());
  CHECK(msg.find("A0") != std::string::npos);
  CHECK(msg.find("Hermitian") != std::string::npos);

  auto k = preset_json("finite-time");
  k["colour"] = 3;
  CHECK(error_of(k.dump()).find("colour") != std::string::npos);

  auto c = preset_json("kahler-limit");
  c["phi0"][0]["amplitude"] = 0.01;
  CHECK(error_of(c.dump()).find("phi0[0].amplitude") != std::string::npos);

  auto g = preset_json("kahler-limit");
  g["grid"]["N"] = 9;
  CHECK(error_of(g.dump()).find("grid.N") != std::string::npos);

  auto p = preset_json("finite-time");
  p["run_psi_family"] = true;
  CHECK(error_of(p.dump()).find("run_psi_family") != std::string::npos);

  auto a = preset_json("finite-time");
  a["A0"] = {{{-1, 0}, {0, 0}}, {{0, 0}, {1, 0}}};
  CHECK(error_of(a.dump()).find("A0") != std::string::npos);

  try {
    scenario_from_json("{ not json");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::format);
  }
  CHECK_THROWS_AS(load_scenario("/nonexistent/config.json"), Error);
}

TEST_CASE("seeded bumps are deterministic and admissible") {
  Scenario s = preset("finite-time");
  s.phi0_random = 6;
  s.seed = 99;
  const FlowInputs a = flow_inputs(s), b = flow_inputs(s);
  CHECK(std::memcmp(a.phi0.values().data(), b.phi0.values().data(), a.phi0.size() * sizeof(double)) == 0);
  s.seed = 100;
  CHECK(sup_diff(flow_inputs(s).phi0, a.phi0) > 0.0);
  CHECK_NOTHROW(validate(s));
}

TEST_CASE("short runs write a complete, deterministic run directory") {
  Scenario s = preset("kahler-limit");
  s.grid.N = 16;
  s.t_max = 0.5;
  const auto d1 = scratch_dir("run1"), d2 = scratch_dir("run2");
  const RunRecord r1 = run_scenario(s, {d1, {}});
  const RunRecord r2 = run_scenario(s, {d2, {}});
  CHECK(r1.status == "completed");
  CHECK(r1.exit_code == 0);
  CHECK(r1.t_final == doctest::Approx(0.5).epsilon(1e-12));
  for (const char* f : {"scenario.json", "series.csv", "summary.json", "snapshots/final.mkrf",
                        "snapshots/t000.000.mkrf", "snapshots/cy_solution.mkrf"})
    CHECK_MESSAGE(std::filesystem::exists(d1 / f), f);
  CHECK(slurp(d1 / "series.csv") == slurp(d2 / "series.csv"));
  CHECK(series_csv(r1) == slurp(d1 / "series.csv"));
  CHECK(scenario_from_json(slurp(d1 / "scenario.json")).t_max == 0.5);

  const auto summary = nlohmann::json::parse(slurp(d1 / "summary.json"));
  CHECK(summary["status"] == "completed");
  CHECK(summary["monitors"]["u_hat_nonpositive"]["passed"] == true);

  const std::string csv = series_csv(r1);
  CHECK(csv.rfind("t,dt,min_u_hat,max_u_hat,min_ut_hat,max_ut_hat,lambda_min_metric,mean_det,class_det", 0) == 0);
  CHECK(csv.find("cy_gap") != std::string::npos);
}

TEST_CASE("rk4 through the runner agrees with imex on a short horizon") {
  Scenario s = preset("kahler-limit");
  s.grid.N = 16;
  s.t_max = 0.05;
  const RunRecord imex = run_scenario(s);
  s.integrator = Integrator::rk4;
  const RunRecord rk4 = run_scenario(s);
  CHECK(rk4.exit_code == 0);
  CHECK(rk4.steps > imex.steps);
  CHECK(std::abs(rk4.rows.back().min_u_hat - imex.rows.back().min_u_hat) <= 1e-6);
  CHECK(std::abs(rk4.rows.back().max_ut_hat - imex.rows.back().max_ut_hat) <= 1e-5);
}

TEST_CASE("finite-time runs stop before T with the singularity-stop status") {
  Scenario s = preset("finite-time");
  s.grid.N = 8;
  const RunRecord r = run_scenario(s);
  CHECK(r.status == "singularity-stop");
  CHECK(r.exit_code == 0);
  CHECK(r.t_final < r.path.T);
  CHECK(r.t_final >= r.path.T - 0.05);
  CHECK(r.trends.at("finite_time").passed());
}

TEST_CASE("report writes plots and is idempotent") {
  Scenario s = preset("finite-time");
  s.grid.N = 8;
  s.t_max = 0.2;
  const auto dir = scratch_dir("report");
  run_scenario(s, {dir, {}});
  const ReportResult a = write_report(dir);
  CHECK(!a.plots.empty());
  const std::string svg = slurp(a.plots.front());
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  const std::string txt = slurp(a.summary);
  CHECK(txt.find("status: ") != std::string::npos);
  const ReportResult b = write_report(dir);
  CHECK(slurp(b.plots.front()) == svg);
  CHECK(slurp(b.summary) == txt);

  const auto empty = scratch_dir("report_empty");
  try {
    write_report(empty);
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }
  std::ofstream(empty / "series.csv") << "";
  CHECK_THROWS_AS(write_report(empty), Error);
}

TEST_CASE("the smallest grid runs every preset") {
  for (const auto& name : preset_names()) {
    Scenario s = preset(name);
    s.grid.N = 8;
    s.t_max = 0.2;
    const RunRecord r = run_scenario(s);
    CHECK_MESSAGE(r.exit_code == 0, name);
  }
}

TEST_CASE("cy_solve needs a positive-definite target class") {
  CHECK_THROWS_AS(cy_solve(preset("collapsed")), Error);
  Scenario s = preset("kahler-limit");
  s.grid.N = 16;
  const auto dir = scratch_dir("cy");
  const CySolveRecord rec = cy_solve(s, dir);
  CHECK(rec.solution.report.converged);
  CHECK(rec.solution.report.residual <= 1e-10);
  CHECK(rec.uniqueness_gap <= 1e-8);
  CHECK(std::filesystem::exists(dir / "cy_solution.mkrf"));
  CHECK(std::filesystem::exists(dir / "newton_report.json"));
}
