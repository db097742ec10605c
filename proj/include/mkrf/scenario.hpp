#pragma once

// Scenario configuration, the preset library, run orchestration with
// per-step monitors, run-directory persistence and offline reporting.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mkrf/elliptic.hpp"
#include "mkrf/flow.hpp"
#include "mkrf/monitors.hpp"

namespace mkrf {

// Per-mode amplitude cap for potentials, 0.05 / pi^2: one unit mode then
// moves the metric by at most 0.05.
inline constexpr double kAmplitudeCap = 0.05 / (M_PI * M_PI);

struct Scenario {
  std::string name = "custom";
  GridSpec grid;
  CMatrix A0;
  CMatrix Ainf;
  std::vector<Mode> phi0;
  std::vector<Mode> phi_inf;
  std::vector<Mode> log_h;  // empty means h = 1
  int phi0_random = 0;      // extra seeded bumps added to phi0
  double t_max = 1.0;
  Integrator integrator = Integrator::imex;
  double dt_max = 0.1;            // IMEX step cap
  double max_rate_change = 0.02;  // IMEX bound on the change of du/dt per step
  bool run_comparison_flow = false;
  bool run_psi_family = false;
  std::vector<double> psi_times;
  std::vector<std::string> monitors;  // core monitors to enforce; empty means all
  std::uint64_t seed = 0;
};

// Names accepted by preset().
std::vector<std::string> preset_names();
// Throws Error(invalid_input) for an unknown name.
Scenario preset(const std::string& name);

// Parsing reports the offending field in the message; both throw
// Error(invalid_input) (or Error(format) for malformed text).
Scenario scenario_from_json(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& s);

// Checks matrices, amplitudes, grid, times and positivity of omega_0.
void validate(const Scenario& s);

// Builds the fields on the scenario grid (including seeded bumps).
FlowInputs flow_inputs(const Scenario& s);
ClassPath classify(const Scenario& s);

struct MonitorSummary {
  std::string name;
  double worst = 0.0;  // smallest margin seen
  double tolerance = 0.0;
  double t = 0.0;  // time of the worst margin
  std::size_t location = 0;
  bool passed() const { return worst >= -tolerance; }
};

struct RunRecord {
  std::string status;       // completed, singularity-stop, breakdown
  std::string stop_reason;  // human-readable
  int exit_code = 0;        // 0 pass, 2 monitor violations, 3 breakdown
  ClassPath path;
  double C3 = 0.0;
  double t_final = 0.0;
  int steps = 0;
  int retries = 0;
  double seconds = 0.0;
  std::vector<std::string> margin_names;
  std::vector<HistoryRow> rows;
  std::vector<MonitorSummary> monitors;
  std::map<std::string, TrendReport> trends;
  std::optional<NewtonReport> cy_report;
  std::vector<PsiSample> psi;
  std::vector<std::string> violations;
  std::filesystem::path directory;
};

struct RunOptions {
  std::filesystem::path out;  // empty: nothing is written
  std::function<void(const std::string&)> log;
};

// Integrates the scenario with monitors on every accepted step and writes
// scenario.json, series.csv, summary.json and snapshots/ to options.out.
// Throws Error(invalid_input) for an invalid scenario.
RunRecord run_scenario(const Scenario& s, const RunOptions& options = {});

// CSV text of a finished run; identical runs give identical bytes.
std::string series_csv(const RunRecord& record);

// Solves the Calabi-Yau equation in the class A_inf with phi_inf and h.
struct CySolveRecord {
  CySolution solution;
  EllipticProblem problem;
  double uniqueness_gap = 0.0;  // sup of the gauge-fixed difference of two solves
};
CySolveRecord cy_solve(const Scenario& s, const std::filesystem::path& out = {});

// Writes report/<column>.svg and report/summary.txt for a run directory.
// Throws Error(io) when series.csv is missing or empty.
struct ReportResult {
  std::vector<std::filesystem::path> plots;
  std::filesystem::path summary;
};
ReportResult write_report(const std::filesystem::path& run_dir);

}  // namespace mkrf
