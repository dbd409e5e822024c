#include "mkd/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mkd/image_io.hpp"

namespace mkd {

using nlohmann::json;

ParsedLog parse_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read log '" + path + "'");
  ParsedLog out;
  for (const char* n : {"sup", "st", "ss", "total"}) out.losses.push_back({n, {}, {}});
  std::map<std::string, std::size_t> branch_index;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    bool ok = j.is_object() && j.contains("type") && j.contains("step") &&
              j["step"].is_number();
    if (ok && j["type"] == "step") {
      for (const auto& s : out.losses) ok = ok && j.contains(s.name) && j[s.name].is_number();
      if (ok) {
        for (auto& s : out.losses) {
          s.x.push_back(j["step"].get<double>());
          s.y.push_back(j[s.name].get<double>());
        }
        continue;
      }
    } else if (ok && j["type"] == "eval" && j.contains("miou") && j["miou"].is_number() &&
               j.contains("branch") && j["branch"].is_string()) {
      const std::string b = j["branch"].get<std::string>();
      if (!branch_index.count(b)) {
        branch_index[b] = out.miou.size();
        out.miou.push_back({b, {}, {}});
      }
      Series& s = out.miou[branch_index[b]];
      s.x.push_back(j["step"].get<double>());
      s.y.push_back(j["miou"].get<double>());
      continue;
    }
    ++out.skipped_lines;
  }
  return out;
}

namespace {

constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void panel(std::ostringstream& os, const std::vector<Series>& series, const std::string& title,
           double top, double width, double height) {
  const double left = 60, right = width - 130, bottom = top + height - 30;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double ytop = top + 25;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - ytop); };

  os << "<text x='" << left << "' y='" << top + 15 << "' font-size='14'>" << title << "</text>\n";
  os << "<rect x='" << left << "' y='" << ytop << "' width='" << right - left << "' height='"
     << bottom - ytop << "' fill='none' stroke='#999'/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    os << "<text x='" << left - 5 << "' y='" << py(yv) + 4
       << "' font-size='10' text-anchor='end'>" << num(yv) << "</text>\n";
    os << "<text x='" << px(xv) << "' y='" << bottom + 14
       << "' font-size='10' text-anchor='middle'>" << num(xv) << "</text>\n";
  }
  int ci = 0;
  for (const auto& s : series) {
    const char* color = kColors[ci % 6];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "'/>\n";
    const double ly = ytop + 15 + 16 * ci;
    os << "<line x1='" << right + 10 << "' y1='" << ly - 4 << "' x2='" << right + 30 << "' y2='"
       << ly - 4 << "' stroke='" << color << "' stroke-width='2'/>\n";
    os << "<text x='" << right + 35 << "' y='" << ly << "' font-size='11'>" << s.name
       << "</text>\n";
    ++ci;
  }
}

}  // namespace

std::string render_svg(const ParsedLog& log) {
  const double width = 720, panel_h = 300;
  const bool has_eval = !log.miou.empty();
  const double height = panel_h * (has_eval ? 2 : 1);
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
     << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  panel(os, log.losses, "loss vs step", 0, width, panel_h);
  if (has_eval) panel(os, log.miou, "validation mIoU vs step", panel_h, width, panel_h);
  os << "</svg>\n";
  return os.str();
}

}  // namespace mkd
