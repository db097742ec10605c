#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mkrf/error.hpp"
#include "mkrf/scenario.hpp"

namespace mkrf {

namespace {

struct Series {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  return out;
}

Series read_series(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::io, "report: missing series " + file.string());
  Series s;
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw Error(ErrorCode::io, "report: empty series " + file.string());
  s.names = split_csv(line);
  if (s.names.empty() || s.names[0] != "t") throw Error(ErrorCode::format, "report: series header must start with t");
  s.columns.resize(s.names.size());
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != s.names.size())
      throw Error(ErrorCode::format, "report: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                         " cells, header has " + std::to_string(s.names.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) s.columns[c].push_back(std::strtod(cells[c].c_str(), nullptr));
  }
  if (s.columns[0].empty()) throw Error(ErrorCode::io, "report: series has no rows");
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Static SVG 1.1 line plot of y against t; non-finite samples break the line.
std::string line_plot(const std::string& title, const std::vector<double>& t, const std::vector<double>& y) {
  constexpr double W = 640, H = 400, L = 80, R = 20, T = 40, B = 50;
  double t0 = t.front(), t1 = t.back();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : y)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo <= 1e-300 * std::max(1.0, std::abs(hi))) lo -= 0.5, hi += 0.5;
  if (t1 <= t0) t1 = t0 + 1.0;
  auto X = [&](double v) { return L + (v - t0) / (t1 - t0) * (W - L - R); };
  auto Y = [&](double v) { return H - B - (v - lo) / (hi - lo) * (H - T - B); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << xml_escape(title) << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  const auto label = [&](double x, double yy, const char* anchor, const std::string& text) {
    os << "<text x=\"" << num(x) << "\" y=\"" << num(yy) << "\" text-anchor=\"" << anchor
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(text) << "</text>\n";
  };
  label(L, H - B + 18, "middle", num(t0));
  label(W - R, H - B + 18, "middle", num(t1));
  label((L + W - R) / 2, H - 12, "middle", "t");
  label(L - 6, Y(lo) + 4, "end", num(lo));
  label(L - 6, Y(hi) + 4, "end", num(hi));

  std::string points;
  auto flush = [&] {
    if (!points.empty()) os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
    points.clear();
  };
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(y[i])) {
      flush();
      continue;
    }
    if (!points.empty()) points += ' ';
    points += num(X(t[i])) + "," + num(Y(y[i]));
  }
  flush();
  os << "</svg>\n";
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "report: cannot write " + p.string());
  os << text;
}

std::string value_text(const nlohmann::ordered_json& v) {
  if (v.is_number_float()) return num(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

ReportResult write_report(const std::filesystem::path& run_dir) {
  const Series s = read_series(run_dir / "series.csv");
  const auto dir = run_dir / "report";
  std::filesystem::create_directories(dir);
  ReportResult out;
  for (std::size_t c = 1; c < s.names.size(); ++c) {
    const auto file = dir / (s.names[c] + ".svg");
    write_file(file, line_plot(s.names[c] + " vs t", s.columns[0], s.columns[c]));
    out.plots.push_back(file);
  }

  std::ostringstream txt;
  txt << "run: " << run_dir.filename().string() << "\n";
  txt << "rows: " << s.columns[0].size() << ", t in [" << num(s.columns[0].front()) << ", " << num(s.columns[0].back())
      << "]\n";
  const auto summary_file = run_dir / "summary.json";
  if (std::filesystem::exists(summary_file)) {
    std::ifstream is(summary_file);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, std::string("report: bad summary.json: ") + e.what());
    }
    for (const char* key : {"scenario", "status", "regime", "T", "r", "C3", "t_final", "steps"})
      if (j.contains(key)) txt << key << ": " << value_text(j[key]) << "\n";
    if (j.contains("monitors")) {
      txt << "\nmonitors (worst margin, tolerance):\n";
      for (auto it = j["monitors"].begin(); it != j["monitors"].end(); ++it)
        txt << "  " << it.key() << ": " << value_text((*it)["worst_margin"]) << " (" << value_text((*it)["tolerance"])
            << ") " << ((*it)["passed"].get<bool>() ? "pass" : "FAIL") << "\n";
    }
    if (j.contains("trends")) {
      for (auto it = j["trends"].begin(); it != j["trends"].end(); ++it) {
        txt << "\n" << it.key() << ": " << value_text((*it)["status"]) << "\n";
        for (const auto& c : (*it)["checks"])
          txt << "  " << (c["passed"].get<bool>() ? "pass " : "FAIL ") << c["name"].get<std::string>() << "  "
              << c["detail"].get<std::string>() << "\n";
        for (auto m = (*it)["measured"].begin(); m != (*it)["measured"].end(); ++m)
          txt << "  " << m.key() << " = " << value_text(*m) << "\n";
      }
    }
  }
  txt << "\ncolumn ranges:\n";
  for (std::size_t c = 1; c < s.names.size(); ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : s.columns[c])
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    txt << "  " << s.names[c] << ": ";
    if (std::isfinite(lo))
      txt << "[" << num(lo) << ", " << num(hi) << "]\n";
    else
      txt << "no finite values\n";
  }
  out.summary = dir / "summary.txt";
  write_file(out.summary, txt.str());
  return out;
}

}  // namespace mkrf
