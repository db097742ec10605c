#include <cmath>
#include <cstring>
#include <string>

#include "json.hpp"
#include "mkrf/error.hpp"
#include "mkrf/mkrf.h"
#include "mkrf/scenario.hpp"

struct mkrf_scenario {
  mkrf::Scenario value;
};

struct mkrf_run {
  mkrf::RunRecord value;
};

namespace {

thread_local std::string last_error;

mkrf_status status_of(mkrf::ErrorCode code) {
  switch (code) {
    case mkrf::ErrorCode::invalid_input:
    case mkrf::ErrorCode::dimension_mismatch:
    case mkrf::ErrorCode::inconsistent_regime:
      return MKRF_E_INVALID;
    case mkrf::ErrorCode::format:
    case mkrf::ErrorCode::header:
    case mkrf::ErrorCode::io:
      return MKRF_E_IO;
    case mkrf::ErrorCode::singular_metric:
    case mkrf::ErrorCode::not_converged:
    case mkrf::ErrorCode::singularity_stop:
      return MKRF_E_NUMERIC;
  }
  return MKRF_E_INTERNAL;
}

template <class F>
mkrf_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return MKRF_OK;
  } catch (const mkrf::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return MKRF_E_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MKRF_E_INTERNAL;
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mkrf_status null_argument(const char* what) {
  last_error = std::string(what) + " must not be null";
  return MKRF_E_INVALID;
}

}  // namespace

extern "C" {

const char* mkrf_last_error(void) { return last_error.c_str(); }

void mkrf_string_free(char* s) { delete[] s; }

mkrf_status mkrf_scenario_preset(const char* name, mkrf_scenario** out) {
  if (!name || !out) return null_argument("name and out");
  return guarded([&] { *out = new mkrf_scenario{mkrf::preset(name)}; });
}

mkrf_status mkrf_scenario_load(const char* path, mkrf_scenario** out) {
  if (!path || !out) return null_argument("path and out");
  return guarded([&] { *out = new mkrf_scenario{mkrf::load_scenario(path)}; });
}

mkrf_status mkrf_scenario_parse(const char* json_text, mkrf_scenario** out) {
  if (!json_text || !out) return null_argument("json_text and out");
  return guarded([&] { *out = new mkrf_scenario{mkrf::scenario_from_json(json_text)}; });
}

mkrf_status mkrf_scenario_to_json(const mkrf_scenario* s, char** out) {
  if (!s || !out) return null_argument("scenario and out");
  return guarded([&] { *out = copy_string(mkrf::scenario_to_json(s->value)); });
}

mkrf_status mkrf_scenario_set_t_max(mkrf_scenario* s, double t_max) {
  if (!s) return null_argument("scenario");
  if (!(t_max > 0.0) || !std::isfinite(t_max)) {
    last_error = "t_max: must be positive and finite";
    return MKRF_E_INVALID;
  }
  s->value.t_max = t_max;
  return MKRF_OK;
}

mkrf_status mkrf_scenario_set_grid(mkrf_scenario* s, int N) {
  if (!s) return null_argument("scenario");
  if (N < 8 || N % 2 != 0) {
    last_error = "grid.N: must be even and at least 8";
    return MKRF_E_INVALID;
  }
  s->value.grid.N = N;
  return MKRF_OK;
}

mkrf_status mkrf_scenario_set_seed(mkrf_scenario* s, uint64_t seed) {
  if (!s) return null_argument("scenario");
  s->value.seed = seed;
  return MKRF_OK;
}

mkrf_status mkrf_scenario_validate(const mkrf_scenario* s) {
  if (!s) return null_argument("scenario");
  return guarded([&] { mkrf::validate(s->value); });
}

void mkrf_scenario_free(mkrf_scenario* s) { delete s; }

mkrf_status mkrf_classify(const mkrf_scenario* s, mkrf_classification* out) {
  if (!s || !out) return null_argument("scenario and out");
  return guarded([&] {
    const mkrf::ClassPath p = mkrf::classify(s->value);
    out->T = p.T;
    out->r = p.r;
    out->regime = p.regime == mkrf::Regime::kahler_limit ? MKRF_KAHLER_LIMIT
                  : p.regime == mkrf::Regime::finite_time ? MKRF_FINITE_TIME
                                                          : MKRF_COLLAPSED;
  });
}

mkrf_status mkrf_run_scenario(const mkrf_scenario* s, const char* out_dir, mkrf_log_fn log, void* user,
                              mkrf_run** out) {
  if (!s || !out) return null_argument("scenario and out");
  return guarded([&] {
    mkrf::RunOptions opt;
    if (out_dir) opt.out = out_dir;
    if (log) opt.log = [log, user](const std::string& line) { log(line.c_str(), user); };
    *out = new mkrf_run{mkrf::run_scenario(s->value, opt)};
  });
}

int mkrf_run_exit_code(const mkrf_run* run) { return run ? run->value.exit_code : 3; }

const char* mkrf_run_status(const mkrf_run* run) { return run ? run->value.status.c_str() : ""; }

double mkrf_run_final_time(const mkrf_run* run) { return run ? run->value.t_final : 0.0; }

int mkrf_run_violation_count(const mkrf_run* run) {
  return run ? static_cast<int>(run->value.violations.size()) : 0;
}

const char* mkrf_run_violation(const mkrf_run* run, int i) {
  if (!run || i < 0 || i >= static_cast<int>(run->value.violations.size())) return "";
  return run->value.violations[static_cast<std::size_t>(i)].c_str();
}

mkrf_status mkrf_run_series_csv(const mkrf_run* run, char** out) {
  if (!run || !out) return null_argument("run and out");
  return guarded([&] { *out = copy_string(mkrf::series_csv(run->value)); });
}

void mkrf_run_free(mkrf_run* run) { delete run; }

mkrf_status mkrf_cy_solve(const mkrf_scenario* s, const char* out_dir, char** report_json) {
  if (!s) return null_argument("scenario");
  return guarded([&] {
    const auto rec = mkrf::cy_solve(s->value, out_dir ? std::filesystem::path(out_dir) : std::filesystem::path());
    if (report_json) {
      nlohmann::ordered_json j;
      j["iterations"] = rec.solution.report.iterations;
      j["linear_iterations"] = rec.solution.report.linear_iterations;
      j["residual"] = rec.solution.report.residual;
      j["c"] = rec.problem.c;
      j["uniqueness_gap"] = rec.uniqueness_gap;
      j["converged"] = rec.solution.report.converged;
      *report_json = copy_string(j.dump());
    }
  });
}

mkrf_status mkrf_report(const char* run_dir, int* plot_count) {
  if (!run_dir) return null_argument("run_dir");
  return guarded([&] {
    const auto r = mkrf::write_report(run_dir);
    if (plot_count) *plot_count = static_cast<int>(r.plots.size());
  });
}

}  // extern "C"
