#include "plot/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace hgd {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

void text(std::ostringstream& os, double x, double y, const std::string& s,
          int size = 12, const std::string& extra = "") {
  os << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\""
     << size << "\" font-family=\"sans-serif\"" << extra << ">" << s
     << "</text>\n";
}

}  // namespace

std::string render_profile_plot(const std::vector<PerturbationProfile>& profiles,
                                const std::string& title) {
  if (profiles.empty()) throw ConfigError("profile plot needs profiles");
  const auto& names = profiles.front().layer_names;
  for (auto& p : profiles)
    if (p.layer_names != names)
      throw ConfigError("profiles disagree on the tap axis");

  const double W = 720, H = 420;
  const double x0 = 70, x1 = W - 30, y0 = H - 70, y1 = 40;
  float max_level = 0.f;
  for (auto& p : profiles)
    for (float l : p.levels) max_level = std::max(max_level, l);
  if (max_level <= 0.f) max_level = 1.f;

  auto px = [&](std::size_t i) {
    return x0 + (x1 - x0) * double(i) / double(names.size() - 1);
  };
  auto py = [&](float v) { return y0 - (y0 - y1) * double(v) / max_level; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  text(os, x0, 24, title, 15);

  // Axes and horizontal grid lines.
  os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\""
     << num(x1) << "\" y2=\"" << num(y0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\""
     << num(x0) << "\" y2=\"" << num(y1) << "\" stroke=\"black\"/>\n";
  for (int g = 0; g <= 4; ++g) {
    float v = max_level * float(g) / 4.f;
    os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(py(v)) << "\" x2=\""
       << num(x1) << "\" y2=\"" << num(py(v))
       << "\" stroke=\"#dddddd\"/>\n";
    text(os, 8, py(v) + 4, num(v), 10);
  }
  for (std::size_t i = 0; i < names.size(); ++i)
    text(os, px(i) - 10, y0 + 16, names[i], 10,
         " transform=\"rotate(30 " + num(px(i) - 10) + " " + num(y0 + 16) +
             ")\"");
  text(os, x0, H - 10, "relative perturbation per tap", 11);

  for (std::size_t pi = 0; pi < profiles.size(); ++pi) {
    const auto& p = profiles[pi];
    const char* color = kPalette[pi % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < p.levels.size(); ++i)
      os << num(px(i)) << "," << num(py(p.levels[i])) << " ";
    os << "\"/>\n";
    text(os, x1 - 160, y1 + 16 * double(pi) + 8,
         p.condition_label + " (n=" + std::to_string(p.sample_count) + ")", 11,
         std::string(" fill=\"") + color + "\"");
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_scatter_plot(
    const std::vector<std::pair<std::string, NoiseScatter>>& panels,
    const std::string& title) {
  if (panels.empty()) throw ConfigError("scatter plot needs panels");
  const double P = 260, pad = 50, top = 50;
  const double W = pad + double(panels.size()) * (P + pad);
  const double H = top + P + 60;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  text(os, pad, 28, title, 15);

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& [label, s] = panels[pi];
    double ox = pad + double(pi) * (P + pad);
    double oy = top;
    std::int64_t peak = 1;
    for (auto c : s.histogram) peak = std::max(peak, c);

    double cell = P / double(s.bins);
    for (int r = 0; r < s.bins; ++r)
      for (int c = 0; c < s.bins; ++c) {
        std::int64_t count = s.histogram[std::size_t(r) * s.bins + c];
        if (count == 0) continue;
        // log-ish shading so sparse tails stay visible
        double t = std::log(1.0 + double(count)) / std::log(1.0 + double(peak));
        int shade = int(255.0 * (1.0 - t));
        // histogram row r is the dxhat bin from -range; svg y grows downward
        os << "<rect x=\"" << num(ox + c * cell) << "\" y=\""
           << num(oy + (s.bins - 1 - r) * cell) << "\" width=\""
           << num(cell + 0.1) << "\" height=\"" << num(cell + 0.1)
           << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"/>\n";
      }

    // Fitted line dxhat = k * dx, clipped to the panel.
    auto to_x = [&](double v) { return ox + (v + s.range) / (2 * s.range) * P; };
    auto to_y = [&](double v) {
      return oy + P - (v + s.range) / (2 * s.range) * P;
    };
    double xend = s.range;
    double yend = double(s.slope) * xend;
    if (std::fabs(yend) > s.range && s.slope != 0.f) {
      yend = yend > 0 ? s.range : -s.range;
      xend = yend / double(s.slope);
    }
    os << "<line x1=\"" << num(to_x(-xend)) << "\" y1=\"" << num(to_y(-yend))
       << "\" x2=\"" << num(to_x(xend)) << "\" y2=\"" << num(to_y(yend))
       << "\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n";
    os << "<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\""
       << num(P) << "\" height=\"" << num(P)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    text(os, ox, oy + P + 18, label + "  k=" + num(double(s.slope)), 12);
    text(os, ox, oy + P + 36,
         "range " + num(double(s.range)) + ", bins " + std::to_string(s.bins),
         10);
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write file: " + path);
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hgd
