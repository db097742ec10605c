#include "mkrf/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mkrf/error.hpp"

namespace mkrf {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::invalid_input, field + ": " + what);
}

CMatrix real_diag(std::initializer_list<double> d) {
  CMatrix m = CMatrix::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double v : d) m(i, i) = v, ++i;
  return m;
}

// ---- JSON <-> Scenario ----

double number(const json& j, const std::string& field) {
  if (!j.is_number()) bad(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(field, "must be finite");
  return v;
}

CMatrix parse_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) bad(field, "expected a non-empty list of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  CMatrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const json& row = j[r];
    const std::string rf = field + "[" + std::to_string(r) + "]";
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) bad(rf, "expected a row of " + std::to_string(n) + " entries");
    for (Eigen::Index c = 0; c < n; ++c) {
      const json& e = row[c];
      const std::string ef = rf + "[" + std::to_string(c) + "]";
      if (e.is_number()) {
        m(r, c) = number(e, ef);
      } else if (e.is_array() && e.size() == 2) {
        m(r, c) = cplx(number(e[0], ef + "[0]"), number(e[1], ef + "[1]"));
      } else {
        bad(ef, "expected a [re, im] pair");
      }
    }
  }
  return m;
}

json matrix_json(const CMatrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
    rows.push_back(row);
  }
  return rows;
}

std::vector<Mode> parse_modes(const json& j, const std::string& field) {
  if (!j.is_array()) bad(field, "expected a list of modes");
  std::vector<Mode> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    const std::string mf = field + "[" + std::to_string(i) + "]";
    if (!e.is_object()) bad(mf, "expected an object with k, amplitude, phase");
    for (auto it = e.begin(); it != e.end(); ++it)
      if (it.key() != "k" && it.key() != "amplitude" && it.key() != "phase") bad(mf + "." + it.key(), "unknown key");
    Mode m;
    if (!e.contains("k") || !e["k"].is_array() || e["k"].empty() || e["k"].size() > 4)
      bad(mf + ".k", "expected 2 or 4 integer wave numbers");
    for (std::size_t a = 0; a < e["k"].size(); ++a) {
      const json& k = e["k"][a];
      if (!k.is_number_integer()) bad(mf + ".k[" + std::to_string(a) + "]", "expected an integer");
      m.k[a] = k.get<int>();
    }
    if (!e.contains("amplitude")) bad(mf + ".amplitude", "missing");
    m.amplitude = number(e["amplitude"], mf + ".amplitude");
    m.phase = e.contains("phase") ? number(e["phase"], mf + ".phase") : 0.0;
    out.push_back(m);
  }
  return out;
}

json modes_json(const std::vector<Mode>& modes, int n) {
  json out = json::array();
  for (const Mode& m : modes) {
    json k = json::array();
    for (int a = 0; a < 2 * n; ++a) k.push_back(m.k[a]);
    out.push_back({{"k", k}, {"amplitude", m.amplitude}, {"phase", m.phase}});
  }
  return out;
}

bool boolean(const json& j, const std::string& field) {
  if (!j.is_boolean()) bad(field, "expected true or false");
  return j.get<bool>();
}

// ---- seeded bumps ----

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<Mode> random_bumps(int n, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Mode> out;
  while (static_cast<int>(out.size()) < count) {
    Mode m;
    int k2 = 0;
    for (int a = 0; a < 2 * n; ++a) {
      m.k[a] = static_cast<int>(rng() % 9) - 4;
      k2 += m.k[a] * m.k[a];
    }
    if (k2 == 0) continue;
    // |H| of one bump is pi^2 |k|^2 amplitude <= 0.05.
    m.amplitude = kAmplitudeCap * unit_draw(rng) / k2;
    m.phase = 2.0 * M_PI * unit_draw(rng);
    out.push_back(m);
  }
  return out;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

// ---- presets ----

std::vector<std::string> preset_names() { return {"kahler-limit", "finite-time", "collapsed"}; }

Scenario preset(const std::string& name) {
  Scenario s;
  s.name = name;
  if (name == "kahler-limit") {
    s.grid = {1, 64};
    s.A0 = real_diag({1.0});
    s.Ainf = real_diag({1.0});
    s.phi0 = {{{1, 0, 0, 0}, 0.004, 0.0}, {{0, 2, 0, 0}, 0.002, 1.0}};
    s.phi_inf = {{{1, 1, 0, 0}, 0.003, 0.5}};
    s.log_h = {{{0, 1, 0, 0}, 0.1, 0.0}, {{2, 0, 0, 0}, 0.05, 0.2}};
    s.t_max = 20.0;
  } else if (name == "finite-time") {
    s.grid = {2, 16};
    s.A0 = real_diag({1.0, 1.0});
    s.Ainf = real_diag({2.0, -1.0});
    s.phi0 = {{{1, 0, 0, 0}, 0.004, 0.0}, {{0, 0, 0, 1}, 0.003, 0.7}};
    s.phi_inf = {{{0, 1, 1, 0}, 0.003, 0.2}};
    s.t_max = 1.0;
  } else if (name == "collapsed") {
    s.grid = {2, 16};
    s.A0 = real_diag({1.0, 1.0});
    s.Ainf = real_diag({1.0, 0.0});
    s.phi0 = {{{1, 0, 0, 0}, 0.005, 0.0}, {{0, 0, 1, 0}, 0.004, 0.3}, {{0, 1, 0, 1}, 0.002, 0.0}};
    s.phi_inf = {{{0, 1, 0, 0}, 0.005, 0.0}};
    s.t_max = 30.0;
    s.run_comparison_flow = true;
    s.run_psi_family = true;
    s.psi_times = {0.0, 5.0, 10.0, 15.0, 20.0};
  } else {
    std::string known;
    for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
    bad("preset", "unknown name '" + name + "' (known: " + known + ")");
  }
  return s;
}

Scenario scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::format, std::string("config: ") + e.what());
  }
  if (!j.is_object()) bad("config", "expected a JSON object");
  static const std::set<std::string> known{
      "name", "grid", "A0", "Ainf", "phi0", "phiInf", "h", "phi0_random", "t_max", "integrator", "dt_max",
      "max_rate_change", "run_comparison_flow", "run_psi_family", "psi_times", "monitors", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) bad(it.key(), "unknown key");

  Scenario s;
  if (j.contains("name")) {
    if (!j["name"].is_string()) bad("name", "expected a string");
    s.name = j["name"].get<std::string>();
  }
  if (!j.contains("grid") || !j["grid"].is_object()) bad("grid", "expected an object {n, N}");
  for (const char* key : {"n", "N"}) {
    const json& g = j["grid"];
    if (!g.contains(key) || !g[key].is_number_integer()) bad(std::string("grid.") + key, "expected an integer");
  }
  s.grid = {j["grid"]["n"].get<int>(), j["grid"]["N"].get<int>()};
  for (const char* key : {"A0", "Ainf"})
    if (!j.contains(key)) bad(key, "missing");
  s.A0 = parse_matrix(j["A0"], "A0");
  s.Ainf = parse_matrix(j["Ainf"], "Ainf");
  if (j.contains("phi0")) s.phi0 = parse_modes(j["phi0"], "phi0");
  if (j.contains("phiInf")) s.phi_inf = parse_modes(j["phiInf"], "phiInf");
  if (j.contains("h")) s.log_h = parse_modes(j["h"], "h");
  if (j.contains("phi0_random")) {
    if (!j["phi0_random"].is_number_integer()) bad("phi0_random", "expected an integer count");
    s.phi0_random = j["phi0_random"].get<int>();
  }
  if (!j.contains("t_max")) bad("t_max", "missing");
  s.t_max = number(j["t_max"], "t_max");
  if (j.contains("integrator")) {
    const json& i = j["integrator"];
    if (i == "rk4")
      s.integrator = Integrator::rk4;
    else if (i == "imex")
      s.integrator = Integrator::imex;
    else
      bad("integrator", "expected \"rk4\" or \"imex\"");
  }
  if (j.contains("dt_max")) s.dt_max = number(j["dt_max"], "dt_max");
  if (j.contains("max_rate_change")) s.max_rate_change = number(j["max_rate_change"], "max_rate_change");
  if (j.contains("run_comparison_flow")) s.run_comparison_flow = boolean(j["run_comparison_flow"], "run_comparison_flow");
  if (j.contains("run_psi_family")) s.run_psi_family = boolean(j["run_psi_family"], "run_psi_family");
  if (j.contains("psi_times")) {
    if (!j["psi_times"].is_array()) bad("psi_times", "expected a list of times");
    for (std::size_t i = 0; i < j["psi_times"].size(); ++i)
      s.psi_times.push_back(number(j["psi_times"][i], "psi_times[" + std::to_string(i) + "]"));
  }
  if (j.contains("monitors")) {
    if (!j["monitors"].is_array()) bad("monitors", "expected a list of monitor names");
    for (std::size_t i = 0; i < j["monitors"].size(); ++i) {
      if (!j["monitors"][i].is_string()) bad("monitors[" + std::to_string(i) + "]", "expected a string");
      s.monitors.push_back(j["monitors"][i].get<std::string>());
    }
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0))
      bad("seed", "expected a non-negative integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return scenario_from_json(ss.str());
}

std::string scenario_to_json(const Scenario& s) {
  const int n = s.grid.n;
  json j;
  j["name"] = s.name;
  j["grid"] = {{"n", s.grid.n}, {"N", s.grid.N}};
  j["A0"] = matrix_json(s.A0);
  j["Ainf"] = matrix_json(s.Ainf);
  j["phi0"] = modes_json(s.phi0, n);
  j["phiInf"] = modes_json(s.phi_inf, n);
  j["h"] = modes_json(s.log_h, n);
  j["phi0_random"] = s.phi0_random;
  j["t_max"] = s.t_max;
  j["integrator"] = to_string(s.integrator);
  j["dt_max"] = s.dt_max;
  j["max_rate_change"] = s.max_rate_change;
  j["run_comparison_flow"] = s.run_comparison_flow;
  j["run_psi_family"] = s.run_psi_family;
  j["psi_times"] = s.psi_times;
  j["monitors"] = s.monitors;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

// ---- validation and inputs ----

namespace {

void check_matrix(const CMatrix& m, int n, const std::string& field) {
  if (m.rows() != n || m.cols() != n) bad(field, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c)
      if (std::abs(m(r, c) - std::conj(m(c, r))) > 1e-12)
        bad(field, "matrix is not Hermitian (entry [" + std::to_string(r) + "][" + std::to_string(c) + "] vs [" +
                       std::to_string(c) + "][" + std::to_string(r) + "])");
}

void check_modes(const std::vector<Mode>& modes, int n, const std::string& field, bool capped) {
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const std::string mf = field + "[" + std::to_string(i) + "]";
    for (int a = 2 * n; a < 4; ++a)
      if (modes[i].k[a] != 0) bad(mf + ".k", "has more entries than the 2n = " + std::to_string(2 * n) + " real axes");
    if (capped && std::abs(modes[i].amplitude) > kAmplitudeCap)
      bad(mf + ".amplitude", fmt(modes[i].amplitude) + " exceeds the admissibility cap 0.05/pi^2 = " + fmt(kAmplitudeCap));
  }
}

std::vector<std::string> enforced_monitors(const Scenario& s, bool finite) {
  const auto all = core_monitor_names(finite);
  if (s.monitors.empty()) return all;
  std::vector<std::string> out;
  for (const auto& name : all)
    if (std::find(s.monitors.begin(), s.monitors.end(), name) != s.monitors.end()) out.push_back(name);
  return out;
}

}  // namespace

ClassPath classify(const Scenario& s) {
  check_matrix(s.A0, s.grid.n, "A0");
  check_matrix(s.Ainf, s.grid.n, "Ainf");
  if (!(lambda_min(s.A0) > 0.0)) bad("A0", "must be positive definite");
  return compute_T(s.A0, s.Ainf);
}

FlowInputs flow_inputs(const Scenario& s) {
  const GridSpec& g = s.grid;
  std::vector<Mode> phi0 = s.phi0;
  const auto extra = random_bumps(g.n, s.phi0_random, s.seed);
  phi0.insert(phi0.end(), extra.begin(), extra.end());
  FlowInputs in{g, classify(s), {}, {}, {}};
  in.phi0 = trig_field(g, phi0);
  in.phi_inf = trig_field(g, s.phi_inf);
  in.log_h = trig_field(g, s.log_h);
  return in;
}

void validate(const Scenario& s) {
  if (s.grid.n != 1 && s.grid.n != 2) bad("grid.n", "complex dimension must be 1 or 2");
  if (s.grid.N < 8 || s.grid.N % 2 != 0) bad("grid.N", "must be even and at least 8");
  if (s.grid.N > 512 || (s.grid.n == 2 && s.grid.N > 64)) bad("grid.N", "too large for a desk-scale run");
  const int n = s.grid.n;
  check_matrix(s.A0, n, "A0");
  check_matrix(s.Ainf, n, "Ainf");
  if (!(lambda_min(s.A0) > 0.0)) bad("A0", "must be positive definite");
  check_modes(s.phi0, n, "phi0", true);
  check_modes(s.phi_inf, n, "phiInf", true);
  check_modes(s.log_h, n, "h", false);
  if (s.phi0_random < 0 || s.phi0_random > 16) bad("phi0_random", "count must be between 0 and 16");
  if (!(s.t_max > 0.0) || !std::isfinite(s.t_max)) bad("t_max", "must be positive and finite");
  if (!(s.dt_max > 0.0)) bad("dt_max", "must be positive");
  if (!(s.max_rate_change > 0.0)) bad("max_rate_change", "must be positive");
  for (std::size_t i = 0; i < s.psi_times.size(); ++i) {
    const std::string f = "psi_times[" + std::to_string(i) + "]";
    if (!(s.psi_times[i] >= 0.0) || !std::isfinite(s.psi_times[i])) bad(f, "must be finite and >= 0");
    if (i > 0 && !(s.psi_times[i] > s.psi_times[i - 1])) bad(f, "times must increase");
  }
  const auto known = core_monitor_names(true);
  for (std::size_t i = 0; i < s.monitors.size(); ++i)
    if (std::find(known.begin(), known.end(), s.monitors[i]) == known.end())
      bad("monitors[" + std::to_string(i) + "]", "unknown monitor '" + s.monitors[i] + "'");

  const ClassPath path = compute_T(s.A0, s.Ainf);
  if (s.run_psi_family && path.regime != Regime::collapsed)
    bad("run_psi_family", "the potential family needs a collapsing class (A_inf semi-definite with a kernel)");

  const FlowInputs in = flow_inputs(s);
  const PositivityScan scan = scan_positivity(KahlerForm{s.A0, in.phi0}.metric(), s.A0);
  if (!(scan.lambda_min >= kPositivityThreshold))
    bad("phi0", "omega_0 = A0 + H[phi0] is not positive at grid point " + std::to_string(scan.index));
  // Also rejects phi_inf varying along collapsing directions.
  FlowModel check(in, FlowKind::scaled);
}

// ---- run orchestration ----

namespace {

constexpr double kRowSpacing = 0.01;
constexpr double kHistorySpacing = 0.1;
constexpr double kSnapshotSpacing = 5.0;
constexpr double kTimeEps = 1e-9;

struct Extremes {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
};

Extremes extremes(std::span<const double> v) {
  Extremes e;
  for (double x : v) e.lo = std::min(e.lo, x), e.hi = std::max(e.hi, x);
  return e;
}

// w snapshots on the 0.1 lattice for w(t - S) lookups.
class WHistory {
 public:
  void store(double t, std::span<const double> w) {
    const long k = std::lround(t / kHistorySpacing);
    if (std::abs(t - k * kHistorySpacing) > kTimeEps) return;
    slots_.emplace_back(k, std::vector<double>(w.begin(), w.end()));
    const long keep = k - static_cast<long>(std::ceil(kShiftS[2] / kHistorySpacing)) - 2;
    while (!slots_.empty() && slots_.front().first < keep) slots_.pop_front();
  }

  // Linear interpolation in t; false when the bracketing slots are missing.
  bool at(double tau, std::vector<double>& out) const {
    if (tau < -kTimeEps) return false;
    const long k = static_cast<long>(std::floor(tau / kHistorySpacing + kTimeEps));
    const double theta = std::clamp(tau / kHistorySpacing - k, 0.0, 1.0);
    const std::vector<double>* a = find(k);
    const std::vector<double>* b = theta > 0.0 ? find(k + 1) : a;
    if (!a || !b) return false;
    out.resize(a->size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0 - theta) * (*a)[p] + theta * (*b)[p];
    return true;
  }

 private:
  const std::vector<double>* find(long k) const {
    for (const auto& [key, v] : slots_)
      if (key == k) return &v;
    return nullptr;
  }
  std::deque<std::pair<long, std::vector<double>>> slots_;
};

std::string snapshot_name(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%07.3f.mkrf", t);
  return buf;
}

class Runner {
 public:
  Runner(const Scenario& s, const RunOptions& opt)
      : sc_(s), opt_(opt), in_(flow_inputs(s)), path_(in_.path), n_(s.grid.n), r_(path_.r),
        finite_(path_.finite()), collapsed_(path_.regime == Regime::collapsed),
        model_(in_, collapsed_ ? FlowKind::scaled : FlowKind::raw) {
    if (sc_.run_comparison_flow) wmodel_.emplace(in_, FlowKind::comparison);
    rec_.path = path_;
    rec_.margin_names = enforced_monitors(sc_, finite_);
    for (const auto& name : rec_.margin_names) rec_.monitors.push_back({name, std::numeric_limits<double>::infinity(), 0.0, 0.0, 0});
    row_margins_.assign(rec_.margin_names.size(), std::numeric_limits<double>::infinity());
    det_A0_ = class_volume(path_.A0);
    h_.resize(s.grid.size());
    for (std::size_t p = 0; p < h_.size(); ++p) h_[p] = std::exp(in_.log_h[p]);
  }

  RunRecord run() {
    const auto start = std::chrono::steady_clock::now();
    if (!opt_.out.empty()) {
      std::filesystem::create_directories(opt_.out / "snapshots");
      rec_.directory = opt_.out;
      write_text(opt_.out / "scenario.json", scenario_to_json(sc_));
    }
    try {
      if (!collapsed_ && path_.regime == Regime::kahler_limit) solve_reference();
      integrate();
      if (sc_.run_psi_family) psi_family();
    } catch (const NewtonFailure& e) {
      breakdown(std::string("Newton failure: ") + e.what());
    } catch (const SingularMetricError& e) {
      breakdown(e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::invalid_input || e.code() == ErrorCode::io) throw;
      breakdown(e.what());
    }
    trends();
    verdict();
    rec_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!opt_.out.empty()) persist();
    return std::move(rec_);
  }

 private:
  void log(const std::string& line) const {
    if (opt_.log) opt_.log(line);
  }

  static void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorCode::io, "cannot write " + p.string());
    os << text;
  }

  void breakdown(const std::string& why) {
    if (rec_.status.empty() || rec_.status == "completed") {
      rec_.status = "breakdown";
      rec_.stop_reason = why;
    }
    log("breakdown: " + why);
  }

  void solve_reference() {
    const auto pb = EllipticProblem::compatible(KahlerForm{path_.Ainf, in_.phi_inf}, VolumeDensity::from_log(in_.log_h));
    CySolution cy = solve_cy(pb);
    rec_.cy_report = cy.report;
    U_ = std::move(cy.U);
    const double m = mean(U_);
    for (double& v : U_.values()) v -= m;
    if (!opt_.out.empty()) {
      const std::vector<NamedField> f{{"U", U_}};
      write_snapshot(opt_.out / "snapshots" / "cy_solution.mkrf", f);
    }
  }

  // Normalized fields of the main flow.
  void normalize(const FlowState& s) {
    const double t = s.t;
    const double quad = 0.5 * r_ * t * t;
    const std::size_t size = s.u.size();
    uh_.resize(size);
    uth_.resize(size);
    for (std::size_t p = 0; p < size; ++p) {
      uh_[p] = s.u[p] - quad - C3_ * t;
      uth_[p] = s.u_dot[p] - r_ * t - C3_;
    }
  }

  void monitor(const FlowState& s) {
    CoreSnapshot snap{s.u.grid(), s.t, finite_ ? path_.T : std::numeric_limits<double>::infinity(),
                      uh_, uth_, prev_min_sum_, mean(s.det), class_volume(path_.at(s.t)), det_A0_};
    const MonitorReport rep = check_core(snap);
    prev_min_sum_ = min_sum(uh_, uth_);
    for (std::size_t i = 0; i < rec_.margin_names.size(); ++i) {
      const Margin* m = rep.find(rec_.margin_names[i]);
      if (!m) continue;
      MonitorSummary& ms = rec_.monitors[i];
      ms.tolerance = m->tolerance;
      if (!(m->value >= ms.worst)) {
        ms.worst = m->value;
        ms.t = s.t;
        ms.location = m->location;
      }
      if (!m->passed() && violations_logged_ < 20) {
        rec_.violations.push_back(m->name + " margin " + fmt(m->value) + " at t = " + fmt(s.t, 10) + ", point " +
                                  std::to_string(m->location));
        ++violations_logged_;
      }
      row_margins_[i] = std::min(row_margins_[i], m->value);
    }
  }

  void record_row(const FlowState& s) {
    HistoryRow row;
    const double t = s.t;
    row.t = t;
    row.dt = s.dt_last;
    const Extremes u = extremes(uh_), ut = extremes(uth_);
    row.min_u_hat = u.lo, row.max_u_hat = u.hi;
    row.min_ut_hat = ut.lo, row.max_ut_hat = ut.hi;
    row.lambda_min_metric = scan_positivity(s.metric, path_.at(t)).lambda_min;
    row.mean_det = mean(s.det);
    row.class_det = class_volume(path_.at(t));
    row.min_sum = min_sum(uh_, uth_);
    double vol = 0.0;
    for (std::size_t p = 0; p < uh_.size(); ++p) vol += std::exp(uth_[p] + uh_[p] + C3_) * h_[p];
    row.volume_ratio = vol / static_cast<double>(uh_.size()) / row.class_det;
    if (finite_) {
      const double f = -std::expm1(t - path_.T);
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < uh_.size(); ++p) lo = std::min(lo, f * uth_[p] + uh_[p]);
      row.min_F = lo;
    }
    if (U_.size() == uh_.size()) {
      const double m = mean(std::span<const double>(uh_));
      double gap = 0.0;
      for (std::size_t p = 0; p < uh_.size(); ++p) gap = std::max(gap, std::abs(uh_[p] - m - U_[p]));
      row.cy_gap = gap;
    }
    if (collapsed_) {
      const Extremes v = extremes(s.u.values()), vt = extremes(s.u_dot.values());
      row.min_v = v.lo, row.max_v = v.hi, row.min_vt = vt.lo, row.max_vt = vt.hi;
      if (w_) {
        const FlowState& w = *w_;
        const Extremes wv = extremes(w.u.values()), wt = extremes(w.u_dot.values());
        row.min_w = wv.lo, row.max_w = wv.hi, row.min_wt = wt.lo, row.max_wt = wt.hi;
        const double et = std::exp(t), em1 = std::expm1(t);
        double q = -std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < w.u.size(); ++p)
          q = std::max(q, em1 * w.u_dot[p] - w.u[p] - (n_ - r_) * t - r_ * et);
        row.appendix_q = q;
        for (int i = 0; i < 3; ++i) {
          const double S = kShiftS[i];
          if (t < S - kTimeEps || !history_.at(t - S, wpast_)) continue;
          const double c = -std::expm1(S);
          double lo = std::numeric_limits<double>::infinity();
          for (std::size_t p = 0; p < wpast_.size(); ++p) lo = std::min(lo, c * s.u_dot[p] + s.u[p] - wpast_[p]);
          row.q_s[i] = lo;
        }
      }
    }
    row.margins = row_margins_;
    std::fill(row_margins_.begin(), row_margins_.end(), std::numeric_limits<double>::infinity());
    rec_.rows.push_back(std::move(row));
  }

  void snapshot(const FlowState& s, const std::string& file, bool final) {
    if (opt_.out.empty()) return;
    const GridSpec& g = s.u.grid();
    std::vector<NamedField> f;
    f.push_back({collapsed_ ? "v" : "u", s.u});
    f.push_back({collapsed_ ? "v_dot" : "u_dot", s.u_dot});
    f.push_back({"u_hat", ScalarField(g, uh_)});
    f.push_back({"ut_hat", ScalarField(g, uth_)});
    f.push_back({"det", s.det});
    if (w_) {
      f.push_back({"w", w_->u});
      f.push_back({"w_dot", w_->u_dot});
    }
    if (final && finite_) {
      std::vector<double> V(uh_.size());
      for (std::size_t p = 0; p < V.size(); ++p) V[p] = uth_[p] + uh_[p];
      f.push_back({"V", ScalarField(g, std::move(V))});
    }
    write_snapshot(opt_.out / "snapshots" / file, f);
  }

  // Times a step must land on exactly.
  double next_landing(double t) const {
    double next = sc_.t_max;
    const double lattice = (std::floor(t / kHistorySpacing + kTimeEps) + 1.0) * kHistorySpacing;
    next = std::min(next, lattice);
    if (finite_)
      for (double d : kFiniteTimeOffsets) {
        const double x = path_.T - d;
        if (x > t + kTimeEps) next = std::min(next, x);
      }
    return next;
  }

  double initial_dt(const FlowState& s) const {
    double dt = stable_dt(s);
    if (w_) dt = std::min(dt, stable_dt(*w_));
    return dt;
  }

  void integrate() {
    FlowState s = initial_state(model_);
    C3_ = s.C3;
    rec_.C3 = C3_;
    if (wmodel_) {
      w_ = initial_state(*wmodel_);
      history_.store(0.0, w_->u.values());
    }
    const ImexController ctl{sc_.dt_max, 1.25, sc_.max_rate_change};
    double dt = initial_dt(s);
    normalize(s);
    monitor(s);
    record_row(s);
    snapshot(s, snapshot_name(0.0), false);
    double next_row = kRowSpacing;
    double next_snapshot = kSnapshotSpacing;
    double next_log = 1.0;
    log("start: regime " + std::string(to_string(path_.regime)) + ", C3 = " + fmt(C3_) + ", " +
        to_string(sc_.integrator) + " integrator");

    rec_.status = "completed";
    rec_.stop_reason = "reached t_max";
    while (true) {
      double stop = sc_.t_max;
      if (finite_) {
        const double window = path_.T - std::max(10.0 * s.dt_last, 1e-3);
        if (window < stop) stop = window;
      }
      if (s.t >= stop - kTimeEps) {
        if (finite_ && stop < sc_.t_max) {
          rec_.status = "singularity-stop";
          rec_.stop_reason = "reached the stop window before T = " + fmt(path_.T, 10);
        }
        break;
      }
      const double target = std::min(stop, next_landing(s.t));
      double h = sc_.integrator == Integrator::rk4 ? initial_dt(s) : dt;
      if (h >= target - s.t || target - s.t - h < 1e-3 * h) h = target - s.t;
      const bool landing = h == target - s.t;

      FlowState next;
      try {
        next = sc_.integrator == Integrator::rk4 ? step_rk4(model_, s, h) : step_imex(model_, s, h);
        if (w_) {
          FlowState wn = step_flow(*wmodel_, *w_, next.dt_last);
          while (wn.t < next.t - 1e-14) wn = step_flow(*wmodel_, wn, next.t - wn.t);
          wnext_ = std::move(wn);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::singularity_stop) throw;
        rec_.status = finite_ ? "singularity-stop" : "breakdown";
        rec_.stop_reason = e.what();
        log("stop: " + std::string(e.what()));
        break;
      }
      rec_.retries += next.retries_last;
      ++rec_.steps;
      if (landing && next.retries_last == 0) next.t = target;
      if (sc_.integrator == Integrator::imex) {
        const double planned = dt;
        dt = ctl.next(s, next, planned);
        if (w_) dt = std::min(dt, ctl.next(*w_, *wnext_, planned));
      }
      s = std::move(next);
      if (w_) {
        wnext_->t = s.t;
        w_ = std::move(wnext_);
        wnext_.reset();
        history_.store(s.t, w_->u.values());
      }

      normalize(s);
      monitor(s);
      bool row = false;
      if (s.t >= next_row - kTimeEps) {
        row = true;
        next_row = (std::floor(s.t / kRowSpacing + kTimeEps) + 1.0) * kRowSpacing;
      }
      if (landing) row = true;
      if (row) record_row(s);
      if (s.t >= next_snapshot - kTimeEps) {
        snapshot(s, snapshot_name(s.t), false);
        next_snapshot += kSnapshotSpacing;
      }
      if (s.t >= next_log - kTimeEps) {
        log("t = " + fmt(s.t, 6) + ", dt = " + fmt(s.dt_last, 3) + ", steps = " + std::to_string(rec_.steps) +
            ", max u^ = " + fmt(rec_.rows.back().max_u_hat, 4) + ", max du^/dt = " + fmt(rec_.rows.back().max_ut_hat, 4));
        next_log = std::floor(s.t + kTimeEps) + 1.0;
      }
    }
    if (rec_.rows.empty() || rec_.rows.back().t != s.t) record_row(s);
    snapshot(s, "final.mkrf", true);
    rec_.t_final = s.t;
    log("end: " + rec_.status + " at t = " + fmt(s.t, 10) + " after " + std::to_string(rec_.steps) + " steps");
  }

  FlowState step_flow(FlowModel& m, const FlowState& x, double h) {
    return sc_.integrator == Integrator::rk4 ? step_rk4(m, x, h) : step_imex(m, x, h);
  }

  void psi_family() {
    std::vector<double> times;
    for (double t : sc_.psi_times)
      if (t <= rec_.t_final + kTimeEps) times.push_back(t);
    if (times.empty()) return;
    rec_.psi = solve_psi_family(in_, times);
    if (!opt_.out.empty()) {
      std::vector<NamedField> f;
      for (const auto& p : rec_.psi) f.push_back({"psi_t=" + fmt(p.t), p.psi});
      write_snapshot(opt_.out / "snapshots" / "psi_family.mkrf", f);
    }
  }

  void trends() {
    if (rec_.rows.empty()) return;
    if (finite_) rec_.trends["finite_time"] = check_finite_time(rec_.rows, path_);
    if (collapsed_ && r_ > 0) rec_.trends["collapsed"] = check_collapsed(rec_.rows, path_);
    if (!rec_.psi.empty()) rec_.trends["psi_family"] = check_psi_family(rec_.psi, in_);
    if (U_.size() > 0) {
      TrendReport rep = check_convergence(rec_.rows);
      if (rec_.t_final >= 20.0 - kTimeEps) {
        const double gap = rec_.rows.back().cy_gap;
        rep.add("final_gap_at_t20", gap <= 1e-4, "gap " + fmt(gap) + " <= 1e-4");
      }
      if (rec_.cy_report) {
        rep.measured["newton_residual"] = rec_.cy_report->residual;
        rep.add("newton_certificate", rec_.cy_report->residual <= 1e-10, "residual " + fmt(rec_.cy_report->residual));
      }
      rec_.trends["convergence"] = rep;
    }
  }

  void verdict() {
    bool ok = true;
    for (const auto& m : rec_.monitors)
      if (!m.passed()) ok = false;
    for (const auto& [name, rep] : rec_.trends)
      for (const auto& c : rep.checks)
        if (!c.passed && rep.status == "fail") {
          ok = false;
          rec_.violations.push_back(name + "." + c.name + ": " + c.detail);
        }
    if (rec_.status == "breakdown")
      rec_.exit_code = 3;
    else
      rec_.exit_code = ok ? 0 : 2;
  }

  void persist() {
    write_text(opt_.out / "series.csv", series_csv(rec_));
    ordered_json j;
    j["scenario"] = sc_.name;
    j["status"] = rec_.status;
    j["stop_reason"] = rec_.stop_reason;
    j["exit_code"] = rec_.exit_code;
    j["regime"] = to_string(path_.regime);
    j["T"] = path_.finite() ? ordered_json(path_.T) : ordered_json("inf");
    j["r"] = path_.r;
    j["C3"] = rec_.C3;
    j["t_final"] = rec_.t_final;
    j["steps"] = rec_.steps;
    j["retries"] = rec_.retries;
    j["integrator"] = to_string(sc_.integrator);
    j["seconds"] = rec_.seconds;
    ordered_json mons = ordered_json::object();
    for (const auto& m : rec_.monitors)
      mons[m.name] = {{"worst_margin", m.worst}, {"tolerance", m.tolerance}, {"t", m.t},
                      {"location", m.location}, {"passed", m.passed()}};
    j["monitors"] = mons;
    ordered_json tr = ordered_json::object();
    for (const auto& [name, rep] : rec_.trends) {
      ordered_json checks = ordered_json::array();
      for (const auto& c : rep.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      ordered_json measured = ordered_json::object();
      for (const auto& [k, v] : rep.measured) measured[k] = std::isfinite(v) ? ordered_json(v) : ordered_json(fmt(v));
      tr[name] = {{"status", rep.status}, {"checks", checks}, {"measured", measured}};
    }
    j["trends"] = tr;
    if (rec_.cy_report)
      j["newton"] = {{"iterations", rec_.cy_report->iterations}, {"linear_iterations", rec_.cy_report->linear_iterations},
                     {"residual", rec_.cy_report->residual}};
    if (!rec_.psi.empty()) {
      ordered_json ps = ordered_json::array();
      for (const auto& p : rec_.psi)
        ps.push_back({{"t", p.t}, {"sup_psi", std::max(p.psi.max(), -p.psi.min())},
                      {"iterations", p.report.iterations}, {"residual", p.report.residual}});
      j["psi_family"] = ps;
    }
    j["violations"] = rec_.violations;
    write_text(opt_.out / "summary.json", j.dump(2) + "\n");
  }

  const Scenario& sc_;
  const RunOptions& opt_;
  FlowInputs in_;
  ClassPath path_;
  int n_, r_;
  bool finite_, collapsed_;
  FlowModel model_;
  std::optional<FlowModel> wmodel_;
  std::optional<FlowState> w_, wnext_;
  WHistory history_;
  std::vector<double> wpast_;
  RunRecord rec_;
  double C3_ = 0.0;
  double det_A0_ = 1.0;
  double prev_min_sum_ = kNaN;
  std::vector<double> uh_, uth_, h_;
  std::vector<double> row_margins_;
  ScalarField U_;
  int violations_logged_ = 0;
};

void put(std::string& out, double v) {
  char buf[32];
  if (v == 0.0) v = 0.0;  // no "-0" cells
  if (std::isnan(v))
    std::snprintf(buf, sizeof buf, "nan");
  else
    std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

RunRecord run_scenario(const Scenario& s, const RunOptions& options) {
  validate(s);
  Runner runner(s, options);
  return runner.run();
}

std::string series_csv(const RunRecord& rec) {
  const bool finite = rec.path.finite();
  const bool collapsed = rec.path.regime == Regime::collapsed;
  const bool cy = std::any_of(rec.rows.begin(), rec.rows.end(), [](const HistoryRow& r) { return !std::isnan(r.cy_gap); });
  const bool w = std::any_of(rec.rows.begin(), rec.rows.end(), [](const HistoryRow& r) { return !std::isnan(r.max_w); });

  std::string out = "t,dt,min_u_hat,max_u_hat,min_ut_hat,max_ut_hat,lambda_min_metric,mean_det,class_det";
  for (const auto& name : rec.margin_names) out += ",margin_" + name;
  out += ",min_sum,volume_ratio";
  if (finite) out += ",min_F";
  if (cy) out += ",cy_gap";
  if (collapsed) out += ",min_v,max_v,min_vt,max_vt";
  if (w) out += ",min_w,max_w,min_wt,max_wt,appendix_q,q_S1,q_S3,q_S5";
  out += "\n";
  for (const auto& r : rec.rows) {
    std::vector<double> vals{r.t, r.dt, r.min_u_hat, r.max_u_hat, r.min_ut_hat, r.max_ut_hat,
                             r.lambda_min_metric, r.mean_det, r.class_det};
    for (double m : r.margins) vals.push_back(m);
    vals.push_back(r.min_sum);
    vals.push_back(r.volume_ratio);
    if (finite) vals.push_back(r.min_F);
    if (cy) vals.push_back(r.cy_gap);
    if (collapsed) vals.insert(vals.end(), {r.min_v, r.max_v, r.min_vt, r.max_vt});
    if (w) vals.insert(vals.end(), {r.min_w, r.max_w, r.min_wt, r.max_wt, r.appendix_q, r.q_s[0], r.q_s[1], r.q_s[2]});
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out += ',';
      put(out, vals[i]);
    }
    out += '\n';
  }
  return out;
}

CySolveRecord cy_solve(const Scenario& s, const std::filesystem::path& out) {
  validate(s);
  const FlowInputs in = flow_inputs(s);
  if (!(lambda_min(s.Ainf) > 0.0)) bad("Ainf", "the Calabi-Yau solve needs a positive-definite target class");
  auto problem = EllipticProblem::compatible(KahlerForm{s.Ainf, in.phi_inf}, VolumeDensity::from_log(in.log_h));
  CySolution first = solve_cy(problem);
  // Uniqueness: a second solve from a perturbed admissible start.
  ScalarField start(s.grid);
  const Mode bump{{1, 0, 0, 0}, 0.2 * kAmplitudeCap, 0.4};
  start = trig_field(s.grid, std::span<const Mode>(&bump, 1));
  CySolution second = solve_cy(problem, &start);
  const double m1 = mean(first.U), m2 = mean(second.U);
  double gap = 0.0;
  for (std::size_t p = 0; p < first.U.size(); ++p) gap = std::max(gap, std::abs((first.U[p] - m1) - (second.U[p] - m2)));
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    const std::vector<NamedField> f{{"U", first.U}};
    write_snapshot(out / "cy_solution.mkrf", f);
    ordered_json j;
    j["iterations"] = first.report.iterations;
    j["linear_iterations"] = first.report.linear_iterations;
    j["residual"] = first.report.residual;
    j["log_residual"] = first.report.log_residual;
    j["residuals"] = first.report.residuals;
    j["damping"] = first.report.damping;
    j["c"] = problem.c;
    j["uniqueness_gap"] = gap;
    j["converged"] = first.report.converged;
    std::ofstream os(out / "newton_report.json", std::ios::binary);
    if (!os) throw Error(ErrorCode::io, "cannot write " + (out / "newton_report.json").string());
    os << j.dump(2) << "\n";
  }
  return {std::move(first), std::move(problem), gap};
}

}  // namespace mkrf
