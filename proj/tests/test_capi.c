/* Exercises the shared library through its C header only. */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mkrf/mkrf.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static int lines = 0;
static void count_line(const char* line, void* user) {
  (void)line;
  ++*(int*)user;
}

int main(int argc, char** argv) {
  const char* out = argc > 1 ? argv[1] : "capi_run";
  mkrf_scenario* s = NULL;
  mkrf_classification c;
  char* text = NULL;

  EXPECT(mkrf_scenario_preset("finite-time", &s) == MKRF_OK);
  EXPECT(mkrf_classify(s, &c) == MKRF_OK);
  EXPECT(c.regime == MKRF_FINITE_TIME);
  EXPECT(fabs(c.T - log(2.0)) <= 1e-10);
  EXPECT(mkrf_scenario_to_json(s, &text) == MKRF_OK);
  EXPECT(text && strstr(text, "\"A0\"") != NULL);
  mkrf_string_free(text);
  mkrf_scenario_free(s);

  EXPECT(mkrf_scenario_preset("collapsed", &s) == MKRF_OK);
  EXPECT(mkrf_classify(s, &c) == MKRF_OK);
  EXPECT(c.regime == MKRF_COLLAPSED && c.r == 1 && isinf(c.T));
  EXPECT(mkrf_cy_solve(s, NULL, NULL) == MKRF_E_INVALID);
  EXPECT(strstr(mkrf_last_error(), "Ainf") != NULL);
  mkrf_scenario_free(s);

  s = NULL;
  EXPECT(mkrf_scenario_preset("unknown", &s) == MKRF_E_INVALID);
  EXPECT(s == NULL);
  EXPECT(strlen(mkrf_last_error()) > 0);
  EXPECT(mkrf_scenario_parse("{ broken", &s) == MKRF_E_IO);
  EXPECT(mkrf_scenario_parse("{\"grid\": 3}", &s) == MKRF_E_INVALID);
  EXPECT(strstr(mkrf_last_error(), "grid") != NULL);
  EXPECT(mkrf_classify(NULL, &c) == MKRF_E_INVALID);
  EXPECT(mkrf_scenario_load("/nonexistent.json", &s) == MKRF_E_IO);

  EXPECT(mkrf_scenario_preset("kahler-limit", &s) == MKRF_OK);
  EXPECT(mkrf_scenario_set_grid(s, 7) == MKRF_E_INVALID);
  EXPECT(mkrf_scenario_set_t_max(s, -1.0) == MKRF_E_INVALID);
  EXPECT(mkrf_scenario_set_grid(s, 16) == MKRF_OK);
  EXPECT(mkrf_scenario_set_t_max(s, 0.3) == MKRF_OK);
  EXPECT(mkrf_scenario_set_seed(s, 5) == MKRF_OK);
  EXPECT(mkrf_scenario_validate(s) == MKRF_OK);

  mkrf_run* run = NULL;
  EXPECT(mkrf_run_scenario(s, out, count_line, &lines, &run) == MKRF_OK);
  EXPECT(run != NULL);
  EXPECT(lines > 0);
  EXPECT(mkrf_run_exit_code(run) == 0);
  EXPECT(strcmp(mkrf_run_status(run), "completed") == 0);
  EXPECT(fabs(mkrf_run_final_time(run) - 0.3) <= 1e-12);
  EXPECT(mkrf_run_violation_count(run) == 0);
  EXPECT(strcmp(mkrf_run_violation(run, 0), "") == 0);
  EXPECT(mkrf_run_series_csv(run, &text) == MKRF_OK);
  EXPECT(text && strncmp(text, "t,dt,", 5) == 0);
  mkrf_string_free(text);
  mkrf_run_free(run);

  int plots = 0;
  EXPECT(mkrf_report(out, &plots) == MKRF_OK);
  EXPECT(plots > 5);
  EXPECT(mkrf_report("/nonexistent_run_dir", &plots) == MKRF_E_IO);

  EXPECT(mkrf_cy_solve(s, NULL, &text) == MKRF_OK);
  EXPECT(text && strstr(text, "\"residual\"") != NULL);
  mkrf_string_free(text);
  mkrf_scenario_free(s);

  if (failures) fprintf(stderr, "%d expectation(s) failed\n", failures);
  else printf("C interface: all expectations met\n");
  return failures ? 1 : 0;
}
