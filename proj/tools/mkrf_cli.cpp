// Command-line front end over the C interface.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mkrf/mkrf.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBreakdown = 3;
constexpr int kExitInvalid = 4;

struct Source {
  std::string config;
  std::string preset;
  std::optional<double> t_max;
  std::optional<int> grid;
  std::optional<std::uint64_t> seed;
};

void add_source(CLI::App* cmd, Source& src) {
  auto* config = cmd->add_option("--config", src.config, "Scenario JSON file");
  auto* preset = cmd->add_option("--preset", src.preset, "Preset: kahler-limit, finite-time, collapsed");
  config->excludes(preset);
  cmd->add_option("--t-max", src.t_max, "Override the final time");
  cmd->add_option("--grid", src.grid, "Override the points per real axis");
  cmd->add_option("--seed", src.seed, "Override the seed for random bumps");
}

int exit_for(mkrf_status st) {
  switch (st) {
    case MKRF_OK: return kExitOk;
    case MKRF_E_NUMERIC: return kExitBreakdown;
    case MKRF_E_INVALID:
    case MKRF_E_IO: return kExitInvalid;
    default: return kExitBreakdown;
  }
}

int fail(mkrf_status st) {
  std::fprintf(stderr, "error: %s\n", mkrf_last_error());
  return exit_for(st);
}

// Loads the scenario and applies overrides; returns nullptr after printing.
mkrf_scenario* load(const Source& src, mkrf_status& st) {
  mkrf_scenario* s = nullptr;
  if (!src.config.empty())
    st = mkrf_scenario_load(src.config.c_str(), &s);
  else if (!src.preset.empty())
    st = mkrf_scenario_preset(src.preset.c_str(), &s);
  else {
    std::fprintf(stderr, "error: give --config PATH or --preset NAME\n");
    st = MKRF_E_INVALID;
    return nullptr;
  }
  if (st != MKRF_OK) return nullptr;
  if (src.t_max && (st = mkrf_scenario_set_t_max(s, *src.t_max)) != MKRF_OK) return mkrf_scenario_free(s), nullptr;
  if (src.grid && (st = mkrf_scenario_set_grid(s, *src.grid)) != MKRF_OK) return mkrf_scenario_free(s), nullptr;
  if (src.seed && (st = mkrf_scenario_set_seed(s, *src.seed)) != MKRF_OK) return mkrf_scenario_free(s), nullptr;
  return s;
}

const char* regime_name(mkrf_regime r) {
  switch (r) {
    case MKRF_KAHLER_LIMIT: return "KAHLER_LIMIT";
    case MKRF_FINITE_TIME: return "FINITE_TIME";
    default: return "COLLAPSED";
  }
}

int cmd_classify(const Source& src, bool as_json) {
  mkrf_status st;
  mkrf_scenario* s = load(src, st);
  if (!s) return fail(st);
  mkrf_classification c{};
  st = mkrf_classify(s, &c);
  mkrf_scenario_free(s);
  if (st != MKRF_OK) return fail(st);
  if (as_json) {
    if (std::isfinite(c.T))
      std::printf("{\"T\": %.17g, \"regime\": \"%s\", \"r\": %d}\n", c.T, regime_name(c.regime), c.r);
    else
      std::printf("{\"T\": \"inf\", \"regime\": \"%s\", \"r\": %d}\n", regime_name(c.regime), c.r);
    return kExitOk;
  }
  if (std::isfinite(c.T))
    std::printf("T=%g regime=%s", c.T, regime_name(c.regime));
  else
    std::printf("T=inf regime=%s", regime_name(c.regime));
  if (c.regime == MKRF_COLLAPSED) std::printf(" r=%d", c.r);
  std::printf("\n");
  return kExitOk;
}

void print_line(const char* line, void*) {
  std::fprintf(stderr, "%s\n", line);
  std::fflush(stderr);
}

int cmd_run(const Source& src, std::string out, bool quiet) {
  mkrf_status st;
  mkrf_scenario* s = load(src, st);
  if (!s) return fail(st);
  if (out.empty()) out = "runs/" + (src.preset.empty() ? std::string("custom") : src.preset);
  mkrf_run* run = nullptr;
  st = mkrf_run_scenario(s, out.c_str(), quiet ? nullptr : print_line, nullptr, &run);
  mkrf_scenario_free(s);
  if (st != MKRF_OK) return fail(st);
  const int code = mkrf_run_exit_code(run);
  std::printf("status=%s t_final=%.10g exit=%d dir=%s\n", mkrf_run_status(run), mkrf_run_final_time(run), code,
              out.c_str());
  for (int i = 0; i < mkrf_run_violation_count(run); ++i) std::printf("violation: %s\n", mkrf_run_violation(run, i));
  mkrf_run_free(run);
  return code;
}

int cmd_cy_solve(const Source& src, const std::string& out) {
  mkrf_status st;
  mkrf_scenario* s = load(src, st);
  if (!s) return fail(st);
  char* report = nullptr;
  st = mkrf_cy_solve(s, out.empty() ? nullptr : out.c_str(), &report);
  mkrf_scenario_free(s);
  if (st != MKRF_OK) return fail(st);
  std::printf("%s\n", report);
  mkrf_string_free(report);
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  if (dir.empty()) {
    std::fprintf(stderr, "error: give the run directory\n");
    return kExitInvalid;
  }
  int plots = 0;
  const mkrf_status st = mkrf_report(dir.c_str(), &plots);
  if (st != MKRF_OK) {
    std::fprintf(stderr, "error: %s\n", mkrf_last_error());
    return kExitInvalid;
  }
  std::printf("wrote %d plots and summary.txt to %s/report\n", plots, dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modified Kahler-Ricci flow laboratory on flat complex tori"};
  app.require_subcommand(1);

  Source run_src, cls_src, cy_src;
  std::string run_out, cy_out, report_dir;
  bool quiet = false, as_json = false;

  auto* run = app.add_subcommand("run", "Integrate a scenario with monitors and write a run directory");
  add_source(run, run_src);
  run->add_option("--out", run_out, "Run directory (default runs/<preset>)");
  run->add_flag("--quiet", quiet, "No progress lines");

  auto* cls = app.add_subcommand("classify", "Print T, regime and r for the class pencil");
  add_source(cls, cls_src);
  cls->add_flag("--json", as_json, "Machine-readable output");

  auto* cy = app.add_subcommand("cy-solve", "Solve the Calabi-Yau equation in the limit class");
  add_source(cy, cy_src);
  cy->add_option("--out", cy_out, "Directory for the solution snapshot and Newton report");

  auto* rep = app.add_subcommand("report", "SVG plots and summary text for a run directory");
  rep->add_option("dir", report_dir, "Run directory");
  rep->add_option("--out", report_dir, "Run directory (alternative to the positional form)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (*run) return cmd_run(run_src, run_out, quiet);
  if (*cls) return cmd_classify(cls_src, as_json);
  if (*cy) return cmd_cy_solve(cy_src, cy_out);
  return cmd_report(report_dir);
}
