#ifndef MKRF_MKRF_H
#define MKRF_MKRF_H

/* C interface to the flow laboratory. Objects are opaque handles; every
 * function returns an mkrf_status and leaves a message for mkrf_last_error()
 * on failure. Strings returned through char** are owned by the caller and
 * released with mkrf_string_free(). */

#include <stdint.h>

#if defined(_WIN32)
#define MKRF_API __declspec(dllexport)
#else
#define MKRF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mkrf_status {
  MKRF_OK = 0,
  MKRF_E_INVALID = 1,   /* bad argument or configuration */
  MKRF_E_IO = 2,        /* file system or format problem */
  MKRF_E_NUMERIC = 3,   /* breakdown or solver non-convergence */
  MKRF_E_INTERNAL = 4
} mkrf_status;

typedef enum mkrf_regime {
  MKRF_KAHLER_LIMIT = 0,
  MKRF_FINITE_TIME = 1,
  MKRF_COLLAPSED = 2
} mkrf_regime;

typedef struct mkrf_scenario mkrf_scenario;
typedef struct mkrf_run mkrf_run;

typedef struct mkrf_classification {
  double T; /* +inf when the flow exists for all time */
  mkrf_regime regime;
  int r;
} mkrf_classification;

typedef void (*mkrf_log_fn)(const char* line, void* user);

/* Message of the last failure on the calling thread ("" if none). */
MKRF_API const char* mkrf_last_error(void);
MKRF_API void mkrf_string_free(char* s);

MKRF_API mkrf_status mkrf_scenario_preset(const char* name, mkrf_scenario** out);
MKRF_API mkrf_status mkrf_scenario_load(const char* path, mkrf_scenario** out);
MKRF_API mkrf_status mkrf_scenario_parse(const char* json_text, mkrf_scenario** out);
MKRF_API mkrf_status mkrf_scenario_to_json(const mkrf_scenario* s, char** out);
MKRF_API mkrf_status mkrf_scenario_set_t_max(mkrf_scenario* s, double t_max);
MKRF_API mkrf_status mkrf_scenario_set_grid(mkrf_scenario* s, int N);
MKRF_API mkrf_status mkrf_scenario_set_seed(mkrf_scenario* s, uint64_t seed);
MKRF_API mkrf_status mkrf_scenario_validate(const mkrf_scenario* s);
MKRF_API void mkrf_scenario_free(mkrf_scenario* s);

MKRF_API mkrf_status mkrf_classify(const mkrf_scenario* s, mkrf_classification* out);

/* Runs the scenario, writing the run directory when out_dir is non-empty.
 * A run that completes with monitor violations still returns MKRF_OK; its
 * verdict is in mkrf_run_exit_code (0 pass, 2 violations, 3 breakdown). */
MKRF_API mkrf_status mkrf_run_scenario(const mkrf_scenario* s, const char* out_dir, mkrf_log_fn log, void* user,
                                       mkrf_run** out);
MKRF_API int mkrf_run_exit_code(const mkrf_run* run);
MKRF_API const char* mkrf_run_status(const mkrf_run* run);
MKRF_API double mkrf_run_final_time(const mkrf_run* run);
MKRF_API int mkrf_run_violation_count(const mkrf_run* run);
MKRF_API const char* mkrf_run_violation(const mkrf_run* run, int i);
MKRF_API mkrf_status mkrf_run_series_csv(const mkrf_run* run, char** out);
MKRF_API void mkrf_run_free(mkrf_run* run);

/* Calabi-Yau solve in the class of Ainf; writes cy_solution.mkrf and
 * newton_report.json to out_dir when given. report_json may be NULL. */
MKRF_API mkrf_status mkrf_cy_solve(const mkrf_scenario* s, const char* out_dir, char** report_json);

/* SVG plots and summary text for a run directory; MKRF_E_IO when the
 * series is missing. */
MKRF_API mkrf_status mkrf_report(const char* run_dir, int* plot_count);

#ifdef __cplusplus
}
#endif

#endif
