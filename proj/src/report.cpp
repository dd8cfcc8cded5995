#include "cdssl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cdssl/errors.hpp"

namespace cdssl {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(where + ": '" + cell + "' is not a number");
}

Percent parse_percent(const std::string& cell, const std::string& where) {
  const double v = parse_number(cell, where);
  if (v < 0.0 || v > 100.0) throw ValidationError(where + ": '" + cell + "' is outside [0, 100]");
  return {static_cast<std::int64_t>(std::llround(v * 100.0)), false};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string percent_label(double fraction) {
  const double p = fraction * 100.0;
  return std::abs(p - std::round(p)) < 1e-9 ? fmt("%.0f%%", p) : fmt("%g%%", p);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

template <typename Key>
std::vector<Key> first_appearance(const std::vector<ResultRow>& rows, Key (*key)(const ResultRow&)) {
  std::vector<Key> out;
  for (const auto& r : rows) {
    const Key k = key(r);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

std::pair<std::string, std::string> group_key(const ResultRow& r) { return {r.dataset, r.task}; }
std::string task_key(const ResultRow& r) { return r.task; }

std::vector<ResultRow> sorted_by_fraction(std::vector<ResultRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.fraction < b.fraction; });
  return rows;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string format_fraction(double fraction) { return fmt("%g", fraction); }

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + r.task + "," + format_fraction(r.fraction) + "," + r.accuracy.str() + "," +
           r.precision.str() + "," + r.recall.str() + "," + r.f1.str() + "\n";
  }
  return out;
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << results_csv(rows);
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ResultRow> parse_results_csv(const std::string& text, const std::string& origin) {
  std::vector<ResultRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (column.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) column[trim(cells[i])] = i;
      for (const char* need : {"dataset", "task", "fraction", "accuracy", "precision", "recall", "f1"}) {
        if (!column.count(need)) throw ValidationError(origin + ": missing column '" + need + "'");
      }
      continue;
    }
    const std::string where = origin + ":" + std::to_string(line_no);
    if (cells.size() < column.size()) throw ValidationError(where + ": expected " + std::to_string(column.size()) + " fields");
    auto cell = [&](const char* name) { return trim(cells[column.at(name)]); };
    ResultRow r;
    r.dataset = cell("dataset");
    r.task = cell("task");
    r.fraction = parse_number(cell("fraction"), where);
    r.accuracy = parse_percent(cell("accuracy"), where);
    r.precision = parse_percent(cell("precision"), where);
    r.recall = parse_percent(cell("recall"), where);
    r.f1 = parse_percent(cell("f1"), where);
    rows.push_back(std::move(r));
  }
  if (column.empty() && line_no > 0) throw ValidationError(origin + ": missing header");
  return rows;
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_results_csv(buf.str(), path.string());
}

std::string render_report(const std::vector<ResultRow>& rows, const std::string& provenance) {
  std::string out = "# Label-efficiency results\n\n";
  if (!provenance.empty()) out += provenance + "\n\n";
  if (rows.empty()) return out + "No results.\n";
  for (const auto& [dataset, task] : first_appearance(rows, group_key)) {
    std::vector<ResultRow> group;
    for (const auto& r : rows)
      if (r.dataset == dataset && r.task == task) group.push_back(r);
    out += "## " + dataset + " (" + task + ")\n\n";
    out += "| Labels | Accuracy | Precision | Recall | F1-Score |\n";
    out += "|---|---|---|---|---|\n";
    for (const auto& r : sorted_by_fraction(group)) {
      out += "| " + percent_label(r.fraction) + " | " + r.accuracy.str() + " | " + r.precision.str() + " | " +
             r.recall.str() + " | " + r.f1.str() + " |\n";
    }
    out += "\n";
  }
  return out;
}

std::vector<PlotOutput> render_plots(const std::vector<ResultRow>& rows, const std::string& provenance) {
  constexpr double kW = 640, kH = 420, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto sx = [&](double f) { return kLeft + f * pw; };
  auto sy = [&](double acc) { return kTop + (1.0 - acc / 100.0) * ph; };

  std::vector<PlotOutput> plots;
  for (const auto& task : first_appearance(rows, task_key)) {
    PlotOutput plot;
    plot.task = task;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
        << kW << " " << kH << "\">\n";
    if (!provenance.empty()) svg << "<!-- " << xml_escape(provenance) << " -->\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << fmt("%.2f", kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\">Label efficiency (" << xml_escape(task) << ")</text>\n";
    for (int i = 0; i <= 5; ++i) {
      const double acc = 20.0 * i, y = sy(acc);
      svg << "<line x1=\"" << fmt("%.2f", kLeft) << "\" y1=\"" << fmt("%.2f", y) << "\" x2=\"" << fmt("%.2f", kLeft + pw)
          << "\" y2=\"" << fmt("%.2f", y) << "\" stroke=\"#dddddd\"/>\n";
      svg << "<text x=\"" << fmt("%.2f", kLeft - 6) << "\" y=\"" << fmt("%.2f", y + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.0f", acc) << "</text>\n";
    }
    for (int i = 0; i <= 10; i += 2) {
      const double f = i / 10.0, x = sx(f);
      svg << "<text x=\"" << fmt("%.2f", x) << "\" y=\"" << fmt("%.2f", kTop + ph + 16)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << percent_label(f) << "</text>\n";
    }
    svg << "<rect x=\"" << fmt("%.2f", kLeft) << "\" y=\"" << fmt("%.2f", kTop) << "\" width=\"" << fmt("%.2f", pw)
        << "\" height=\"" << fmt("%.2f", ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt("%.2f", kLeft + pw / 2) << "\" y=\"" << fmt("%.2f", kH - 10)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">Label fraction</text>\n";
    svg << "<text x=\"16\" y=\"" << fmt("%.2f", kTop + ph / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"12\" transform=\"rotate(-90 16 " << fmt("%.2f", kTop + ph / 2) << ")\">Accuracy (%)</text>\n";

    std::vector<ResultRow> task_rows;
    for (const auto& r : rows)
      if (r.task == task) task_rows.push_back(r);
    std::size_t series = 0;
    for (const auto& [dataset, t] : first_appearance(task_rows, group_key)) {
      (void)t;
      std::vector<ResultRow> pts;
      for (const auto& r : task_rows)
        if (r.dataset == dataset) pts.push_back(r);
      pts = sorted_by_fraction(pts);
      if (pts.size() < 2) plot.warnings.push_back("series '" + dataset + "' for task '" + task + "' has a single point");
      const char* color = kPalette[series % std::size(kPalette)];
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        svg << (i ? " " : "") << fmt("%.2f", sx(pts[i].fraction)) << "," << fmt("%.2f", sy(pts[i].accuracy.value()));
      }
      svg << "\"/>\n";
      for (const auto& p : pts) {
        svg << "<circle cx=\"" << fmt("%.2f", sx(p.fraction)) << "\" cy=\"" << fmt("%.2f", sy(p.accuracy.value()))
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
      const double ly = kTop + 14 + 18.0 * static_cast<double>(series);
      svg << "<line x1=\"" << fmt("%.2f", kLeft + pw + 12) << "\" y1=\"" << fmt("%.2f", ly) << "\" x2=\""
          << fmt("%.2f", kLeft + pw + 32) << "\" y2=\"" << fmt("%.2f", ly) << "\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
      svg << "<text x=\"" << fmt("%.2f", kLeft + pw + 38) << "\" y=\"" << fmt("%.2f", ly + 4)
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(dataset) << "</text>\n";
      ++series;
    }
    svg << "</svg>\n";
    plot.svg = svg.str();
    plots.push_back(std::move(plot));
  }
  return plots;
}

}  // namespace cdssl
