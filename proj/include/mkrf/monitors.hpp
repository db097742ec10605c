#pragma once

// Pointwise estimate monitors evaluated on snapshots of a run, and trend
// diagnostics evaluated on the recorded history.
//
// A margin is signed: it passes while margin >= -tolerance.

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mkrf/elliptic.hpp"
#include "mkrf/kahler.hpp"

namespace mkrf {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Margin {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  std::size_t location = 0;  // grid index of the worst point

  bool passed() const { return value >= -tolerance; }
};

struct MonitorReport {
  double t = 0.0;
  std::vector<Margin> margins;

  bool passed() const;
  const Margin* find(std::string_view name) const;
};

// Normalized fields u^ = u - C3 t (raw potential) and du^/dt at one time.
struct CoreSnapshot {
  GridSpec grid;
  double t = 0.0;
  double T = std::numeric_limits<double>::infinity();  // finite only for finite-time runs
  std::span<const double> u_hat;
  std::span<const double> ut_hat;
  double prev_min_sum = kNaN;  // min(du^/dt + u^) at the previous step, NaN at the first
  double mean_det = 0.0;       // mean of the Monge-Ampere density
  double class_det = 0.0;      // det(A_t)
  double det_A0 = 1.0;
};

inline constexpr double kBoundTolerance = 1e-8;
inline constexpr double kMonitorTolerance = 1e-6;
inline constexpr double kConservationTolerance = 1e-8;  // relative to det(A_0)

// Names in the order check_core reports them.
std::vector<std::string> core_monitor_names(bool finite_time);

MonitorReport check_core(const CoreSnapshot& snapshot);

// min_x(du^/dt + u^), the quantity whose monotonicity check_core tracks.
double min_sum(std::span<const double> u_hat, std::span<const double> ut_hat);

// One recorded time of a run. Regime-specific entries are NaN when absent.
struct HistoryRow {
  double t = 0.0;
  double dt = 0.0;
  double min_u_hat = kNaN, max_u_hat = kNaN;
  double min_ut_hat = kNaN, max_ut_hat = kNaN;
  double lambda_min_metric = kNaN;  // relative to A_t
  double mean_det = kNaN, class_det = kNaN;
  double min_sum = kNaN;
  // finite-time
  double min_F = kNaN;         // min((1 - e^{t-T}) du^/dt + u^)
  double volume_ratio = kNaN;  // mean(e^{du^/dt + u^ + C3} h) / det(A_t)
  // Kahler limit
  double cy_gap = kNaN;  // sup|(u^ - mean u^) - U|
  // collapsed
  double min_v = kNaN, max_v = kNaN, min_vt = kNaN, max_vt = kNaN;
  double min_w = kNaN, max_w = kNaN, min_wt = kNaN, max_wt = kNaN;
  double appendix_q = kNaN;  // max((e^t - 1) dw/dt - w - (n - r) t - r e^t)
  double q_s[3] = {kNaN, kNaN, kNaN};  // min((1 - e^S) dv/dt + v - w(t - S)), S = 1, 3, 5
  std::vector<double> margins;         // worst core margins since the previous row
};

inline constexpr double kShiftS[3] = {1.0, 3.0, 5.0};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct TrendReport {
  std::string status = "pass";  // pass, fail, not applicable, inconclusive, partial
  std::vector<Check> checks;
  std::map<std::string, double> measured;

  void add(std::string name, bool passed, std::string detail = {});
  bool passed() const { return status == "pass"; }
};

// Blow-up trend at T - {0.2, 0.1, 0.05}, potential lower bound, volume sanity.
TrendReport check_finite_time(const std::vector<HistoryRow>& rows, const ClassPath& path);

inline constexpr double kFiniteTimeOffsets[3] = {0.2, 0.1, 0.05};

// Growth constants A, C, C(S) of the scaled flow and comparison-flow bounds.
TrendReport check_collapsed(const std::vector<HistoryRow>& rows, const ClassPath& path);

// Gap to the Calabi-Yau solution over the final half of the run.
TrendReport check_convergence(const std::vector<HistoryRow>& rows);

// Bounds on the potential family along a collapsing path.
TrendReport check_psi_family(const std::vector<PsiSample>& family, const FlowInputs& inputs);

// Names of the constants compared across resolutions.
std::vector<std::string> collapsed_constant_names();

// |a - b| <= rel * max(|a|, |b|) for every named constant present in both.
TrendReport compare_constants(const TrendReport& coarse, const TrendReport& fine, double rel = 0.2);

}  // namespace mkrf
