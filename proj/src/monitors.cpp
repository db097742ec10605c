#include "mkrf/monitors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mkrf/error.hpp"

namespace mkrf {

bool MonitorReport::passed() const {
  return std::all_of(margins.begin(), margins.end(), [](const Margin& m) { return m.passed(); });
}

const Margin* MonitorReport::find(std::string_view name) const {
  for (const auto& m : margins)
    if (m.name == name) return &m;
  return nullptr;
}

std::vector<std::string> core_monitor_names(bool finite_time) {
  std::vector<std::string> names{"u_hat_nonpositive", "ut_hat_nonpositive", "ut_by_u"};
  if (finite_time) {
    names.emplace_back("chain_lower");
    names.emplace_back("chain_upper");
    names.emplace_back("chain_T");
  }
  names.emplace_back("sum_monotone");
  names.emplace_back("conservation");
  return names;
}

double min_sum(std::span<const double> u_hat, std::span<const double> ut_hat) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < u_hat.size(); ++p) m = std::min(m, ut_hat[p] + u_hat[p]);
  return m;
}

namespace {

// Worst (smallest) value of f(p) over the grid and where it occurs.
template <class F>
Margin worst(std::string name, double tolerance, std::size_t size, F&& f) {
  Margin m{std::move(name), std::numeric_limits<double>::infinity(), tolerance, 0};
  for (std::size_t p = 0; p < size; ++p) {
    const double v = f(p);
    if (!(v >= m.value)) {
      m.value = v;
      m.location = p;
      if (std::isnan(v)) break;
    }
  }
  return m;
}

}  // namespace

MonitorReport check_core(const CoreSnapshot& s) {
  const std::size_t size = s.u_hat.size();
  if (s.ut_hat.size() != size || size != s.grid.size())
    throw Error(ErrorCode::dimension_mismatch, "monitor snapshot fields do not match the grid");
  const double t = s.t;
  const int n = s.grid.n;
  const double em1 = std::expm1(t);
  const double et = std::exp(t);
  const auto& u = s.u_hat;
  const auto& ut = s.ut_hat;

  MonitorReport r;
  r.t = t;
  r.margins.push_back(worst("u_hat_nonpositive", kBoundTolerance, size, [&](std::size_t p) { return -u[p]; }));
  r.margins.push_back(worst("ut_hat_nonpositive", kBoundTolerance, size, [&](std::size_t p) { return -ut[p]; }));
  r.margins.push_back(worst("ut_by_u", kMonitorTolerance, size,
                            [&](std::size_t p) { return u[p] - (em1 * ut[p] - n * t); }));
  if (std::isfinite(s.T)) {
    const double eT = std::exp(s.T);
    r.margins.push_back(worst("chain_lower", kMonitorTolerance, size,
                              [&](std::size_t p) { return (ut[p] + u[p]) - (et * ut[p] - n * t); }));
    r.margins.push_back(worst("chain_upper", kMonitorTolerance, size,
                              [&](std::size_t p) { return ut[p] - (ut[p] + u[p]); }));
    r.margins.push_back(worst("chain_T", kMonitorTolerance, size, [&](std::size_t p) {
      return (et * ut[p] - n * t) - (eT * ut[p] - n * s.T);
    }));
  }
  Margin mono = worst("sum_monotone", kMonitorTolerance, size, [&](std::size_t p) { return ut[p] + u[p]; });
  // worst() located the minimum of du^/dt + u^; the margin is its decrease since the last step.
  const double current = mono.value;
  mono.value = std::isnan(s.prev_min_sum) ? 0.0 : s.prev_min_sum - current;
  r.margins.push_back(mono);
  r.margins.push_back(Margin{"conservation", -std::abs(s.mean_det - s.class_det),
                             kConservationTolerance * s.det_A0, 0});
  return r;
}

void TrendReport::add(std::string name, bool passed, std::string detail) {
  checks.push_back({std::move(name), passed, std::move(detail)});
  if (!passed && status == "pass") status = "fail";
}

namespace {

const HistoryRow* row_at(const std::vector<HistoryRow>& rows, double t) {
  for (const auto& r : rows)
    if (std::abs(r.t - t) <= 1e-9) return &r;
  return nullptr;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

TrendReport check_finite_time(const std::vector<HistoryRow>& rows, const ClassPath& path) {
  TrendReport rep;
  if (!path.finite()) {
    rep.status = "not applicable";
    return rep;
  }
  double m[3];
  for (int i = 0; i < 3; ++i) {
    const HistoryRow* r = row_at(rows, path.T - kFiniteTimeOffsets[i]);
    if (!r) {
      rep.status = "inconclusive";
      rep.checks.push_back({"samples_present", false, "run ended before T - " + fmt(kFiniteTimeOffsets[i])});
      return rep;
    }
    m[i] = r->min_ut_hat;
    rep.measured["min_ut_hat(T-" + fmt(kFiniteTimeOffsets[i]) + ")"] = m[i];
  }
  rep.add("blowdown_strictly_decreasing", m[0] > m[1] && m[1] > m[2],
          fmt(m[0]) + " > " + fmt(m[1]) + " > " + fmt(m[2]));
  rep.add("blowdown_drop_at_least_1", m[2] <= m[0] - 1.0, "drop " + fmt(m[0] - m[2]));

  double min_u = std::numeric_limits<double>::infinity();
  double min_F = std::numeric_limits<double>::infinity();
  double volume = 0.0;
  for (const auto& r : rows) {
    min_u = std::min(min_u, r.min_u_hat);
    if (!std::isnan(r.min_F)) min_F = std::min(min_F, r.min_F);
    if (!std::isnan(r.volume_ratio)) volume = std::max(volume, r.volume_ratio);
  }
  rep.measured["B"] = -min_u;
  rep.measured["min_F"] = min_F;
  rep.measured["max_volume_ratio"] = volume;
  rep.add("potential_bounded_below", min_u >= -10.0, "min u^ = " + fmt(min_u));
  rep.add("volume_sanity", volume <= 1.0 + 1e-6, "max ratio " + fmt(volume));
  return rep;
}

std::vector<std::string> collapsed_constant_names() { return {"A", "C", "C(S=1)", "C(S=3)", "C(S=5)"}; }

TrendReport check_collapsed(const std::vector<HistoryRow>& rows, const ClassPath& path) {
  TrendReport rep;
  if (path.regime != Regime::collapsed || path.r <= 0)
    throw Error(ErrorCode::inconsistent_regime, "collapsed diagnostics need a collapsing class (r > 0)");
  if (rows.empty()) {
    rep.status = "inconclusive";
    return rep;
  }
  const int r = path.r;
  const double t_max = rows.back().t;

  // Shift v -> v + K (1 + t) so that the shifted potential is non-negative.
  double K = 0.0;
  for (const auto& row : rows) K = std::max(K, -row.min_v / (1.0 + row.t));
  rep.measured["K"] = K;

  // A: least-squares slope of the running max of max v over [5, t_max].
  std::vector<double> runmax(rows.size());
  double acc = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    acc = std::max(acc, rows[i].max_v + K * (1.0 + rows[i].t));
    runmax[i] = acc;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].t < 5.0) continue;
    const double x = rows[i].t, y = runmax[i];
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++count;
  }
  if (count < 2) {
    rep.status = "inconclusive";
    rep.checks.push_back({"window_present", false, "run shorter than t = 5"});
    return rep;
  }
  const double denom = count * sxx - sx * sx;
  const double A = std::max(0.0, (count * sxy - sx * sy) / denom);
  double C = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) C = std::max(C, runmax[i] - A * rows[i].t);
  rep.measured["A"] = A;
  rep.measured["C"] = C;
  rep.measured["A_intercept"] = (sy - A * sx) / count;

  // C(S) from both S-bounds on the shifted dv/dt = dv/dt + K.
  auto c_of_s = [&](double S, double t_limit) {
    const double lower = A / (-std::expm1(-S));
    const double upper = A / std::expm1(S);
    double c = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
      if (row.t > t_limit) break;
      c = std::max(c, -lower * row.t - (row.min_vt + K));
      c = std::max(c, (row.max_vt + K) - upper * row.t);
    }
    return c;
  };
  for (double S : kShiftS) rep.measured["C(S=" + fmt(S) + ")"] = c_of_s(S, t_max);

  bool finite = std::isfinite(A) && std::isfinite(C);
  for (double S : kShiftS) finite = finite && std::isfinite(rep.measured["C(S=" + fmt(S) + ")"]);
  rep.add("constants_finite", finite);

  // Predictive form of the S = 5 damping: C(5) fitted on [0, 20] bounds [20, 30].
  if (t_max >= 30.0 - 1e-9) {
    const double c5 = c_of_s(5.0, 20.0);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows)
      if (row.t >= 20.0 && row.t <= 30.0) worst = std::max(worst, (row.max_vt + K) - (0.1 * row.t + c5));
    rep.measured["C5_early"] = c5;
    rep.measured["vt_damping_margin"] = -worst;
    rep.add("vt_damping", worst <= 0.0, "max over [20,30] of dv/dt - (0.1 t + C(5)) = " + fmt(worst));
  } else {
    rep.checks.push_back({"vt_damping", false, "run shorter than t = 30"});
    rep.status = "partial";
  }

  // Comparison flow bounds: no growth of |w|, |dw/dt| in the second half.
  const bool have_w = std::none_of(rows.begin(), rows.end(), [](const HistoryRow& row) { return std::isnan(row.max_w); });
  if (!have_w) {
    rep.checks.push_back({"w_history", false, "comparison flow not recorded"});
    rep.status = "partial";
  } else {
    double w1 = 0, w2 = 0, wt1 = 0, wt2 = 0, q = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
      const double w = std::max(std::abs(row.min_w), std::abs(row.max_w));
      const double wt = std::max(std::abs(row.min_wt), std::abs(row.max_wt));
      if (row.t <= t_max / 2) {
        w1 = std::max(w1, w), wt1 = std::max(wt1, wt);
      } else {
        w2 = std::max(w2, w), wt2 = std::max(wt2, wt);
      }
      q = std::max(q, row.appendix_q);
    }
    rep.measured["sup_w_first_half"] = w1;
    rep.measured["sup_w_second_half"] = w2;
    rep.measured["sup_wt_first_half"] = wt1;
    rep.measured["sup_wt_second_half"] = wt2;
    rep.measured["appendix_q_max"] = q;
    rep.add("w_bounded", w2 <= w1 + 0.1, fmt(w2) + " <= " + fmt(w1) + " + 0.1");
    rep.add("wt_bounded", wt2 <= wt1 + 0.1, fmt(wt2) + " <= " + fmt(wt1) + " + 0.1");
    // The maximum principle caps the appendix quantity by its initial value -r.
    rep.add("appendix_quantity_bounded", q <= -r + kMonitorTolerance, "sup " + fmt(q) + " vs " + fmt(-r));

    for (int i = 0; i < 3; ++i) {
      const double S = kShiftS[i];
      double lo = std::numeric_limits<double>::infinity();
      for (const auto& row : rows)
        if (!std::isnan(row.q_s[i])) lo = std::min(lo, row.q_s[i] + K * (2.0 - std::exp(S) + row.t));
      rep.measured["Q_min(S=" + fmt(S) + ")"] = lo;
    }
  }

  // Theorem 5 form, recomputed through u = v - (r/2) t^2.
  bool u_form = true;
  for (const auto& row : rows) {
    const double half = 0.5 * r * row.t * row.t;
    const double u_min = row.min_v - half, u_max = row.max_v - half;
    const double shift = K * (1.0 + row.t);
    u_form = u_form && u_min + half + shift >= -1e-12 && u_max + half + shift <= C + A * row.t + 1e-12;
  }
  rep.add("u_form_bounds", u_form);
  return rep;
}

TrendReport check_convergence(const std::vector<HistoryRow>& rows) {
  TrendReport rep;
  std::vector<const HistoryRow*> gaps;
  for (const auto& r : rows)
    if (!std::isnan(r.cy_gap)) gaps.push_back(&r);
  if (gaps.empty()) {
    rep.status = "not applicable";
    return rep;
  }
  const double t_end = gaps.back()->t;
  // Below this floor the gap is rounding noise and carries no trend.
  constexpr double kFloor = 1e-10;
  bool decreasing = true;
  double worst_rise = 0.0;
  for (std::size_t i = 1; i < gaps.size(); ++i) {
    if (gaps[i]->t < t_end / 2) continue;
    const double rise = gaps[i]->cy_gap - gaps[i - 1]->cy_gap;
    if (rise > 0.0 && gaps[i]->cy_gap > kFloor) {
      decreasing = false;
      worst_rise = std::max(worst_rise, rise);
    }
  }
  rep.measured["final_gap"] = gaps.back()->cy_gap;
  rep.measured["final_t"] = t_end;
  rep.add("gap_decreasing_final_half", decreasing, "largest rise above floor " + fmt(worst_rise));
  return rep;
}

TrendReport check_psi_family(const std::vector<PsiSample>& family, const FlowInputs& inputs) {
  TrendReport rep;
  if (family.size() < 2) {
    rep.status = "inconclusive";
    return rep;
  }
  FlowModel model(inputs, FlowKind::scaled);
  const GridSpec grid = model.grid();
  const int n = grid.n;
  const int r = inputs.path.r;
  std::vector<double> sup(family.size());
  double density_hi = 0.0, density_lo = std::numeric_limits<double>::infinity();
  HermitianField back(grid), hess(grid);
  for (std::size_t i = 0; i < family.size(); ++i) {
    const auto& s = family[i];
    sup[i] = std::max(s.psi.max(), -s.psi.min());
    model.background(s.t, back);
    model.hessian(model.to_potential(s.psi), hess);
    for (std::size_t p = 0; p < grid.size(); ++p) {
      const double d = local::det(n, local::add(back.at(p), hess.at(p)));
      const double ratio = d / (std::exp(-r * s.t) * std::exp(inputs.log_h[p]));
      density_hi = std::max(density_hi, ratio);
      density_lo = std::min(density_lo, ratio);
    }
  }
  double rate = 0.0, rate_first = 0.0, rate_last = 0.0;
  const std::size_t m = family.size();
  for (std::size_t i = 0; i + 1 < m; ++i) {
    double diff = 0.0;
    for (std::size_t p = 0; p < grid.size(); ++p)
      diff = std::max(diff, std::abs(family[i + 1].psi[p] - family[i].psi[p]));
    const double q = diff / (family[i + 1].t - family[i].t);
    rate = std::max(rate, q);
    if (i + 1 < m / 2 + 1) rate_first = std::max(rate_first, q);
    else rate_last = std::max(rate_last, q);
  }
  const double first = std::max(sup[0], sup[1]);
  const double last = std::max(sup[m - 2], sup[m - 1]);
  rep.measured["sup_psi"] = *std::max_element(sup.begin(), sup.end());
  rep.measured["sup_psi_first"] = first;
  rep.measured["sup_psi_last"] = last;
  rep.measured["psi_rate"] = rate;
  rep.measured["density_C"] = std::max(density_hi, 1.0 / density_lo);
  rep.add("psi_non_trending", last <= first + 0.1, fmt(last) + " <= " + fmt(first) + " + 0.1");
  rep.add("psi_rate_bounded", std::isfinite(rate) && rate_last <= rate_first + 0.1,
          "late rate " + fmt(rate_last) + ", early rate " + fmt(rate_first));
  rep.add("density_sandwich", std::isfinite(density_hi) && density_lo > 0.0,
          "ratio in [" + fmt(density_lo) + ", " + fmt(density_hi) + "]");
  return rep;
}

TrendReport compare_constants(const TrendReport& coarse, const TrendReport& fine, double rel) {
  TrendReport rep;
  for (const auto& name : collapsed_constant_names()) {
    auto a = coarse.measured.find(name);
    auto b = fine.measured.find(name);
    if (a == coarse.measured.end() || b == fine.measured.end()) {
      rep.checks.push_back({name, false, "missing"});
      rep.status = "inconclusive";
      continue;
    }
    const double x = a->second, y = b->second;
    const double diff = std::abs(x - y);
    const double scale = std::max(std::abs(x), std::abs(y));
    rep.measured[name + "_rel_change"] = scale > 0.0 ? diff / scale : 0.0;
    rep.add(name, diff <= rel * std::max(std::abs(x), std::abs(y)), fmt(x) + " vs " + fmt(y));
  }
  return rep;
}

}  // namespace mkrf
