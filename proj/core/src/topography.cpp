#include "lmda/topography.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace lmda::interpret {

namespace {

double grid_coord(std::size_t i, std::size_t g) {
  if (g == 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(g - 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Blue-white-red ramp over [0,1].
std::string ramp(double u) {
  u = std::clamp(u, 0.0, 1.0);
  int r, g, b;
  if (u < 0.5) {
    const double k = u / 0.5;
    r = static_cast<int>(std::lround(49 + k * (255 - 49)));
    g = static_cast<int>(std::lround(54 + k * (255 - 54)));
    b = static_cast<int>(std::lround(149 + k * (255 - 149)));
  } else {
    const double k = (u - 0.5) / 0.5;
    r = static_cast<int>(std::lround(255 + k * (165 - 255)));
    g = static_cast<int>(std::lround(255 + k * (0 - 255)));
    b = static_cast<int>(std::lround(255 + k * (38 - 255)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

Topography topo_export(std::span<const double> values, const std::vector<std::string>& names,
                       const dataio::Montage& montage, std::size_t grid_size) {
  if (values.size() != names.size()) {
    throw std::invalid_argument("topo_export: " + std::to_string(values.size()) +
                                " values for " + std::to_string(names.size()) + " channels");
  }
  if (values.empty()) throw std::invalid_argument("topo_export: no channels");
  Topography topo;
  topo.channel_values.assign(values.begin(), values.end());
  topo.channel_names = names;
  topo.montage = montage.name();
  std::string missing;
  for (const auto& n : names) {
    if (auto p = montage.lookup(n)) {
      topo.positions.push_back(*p);
    } else {
      missing += (missing.empty() ? "" : ", ") + n;
    }
  }
  if (!missing.empty()) {
    throw std::invalid_argument("topo_export: channels not in montage '" + montage.name() +
                                "': " + missing);
  }
  if (grid_size == 0) return topo;

  const std::size_t G = grid_size;
  topo.grid_size = G;
  topo.grid.assign(G * G, 0.0);
  topo.inside.assign(G * G, false);
  for (std::size_t row = 0; row < G; ++row) {
    const double y = -grid_coord(row, G);
    for (std::size_t col = 0; col < G; ++col) {
      const double x = grid_coord(col, G);
      if (x * x + y * y > 1.0 + 1e-12) continue;
      topo.inside[row * G + col] = true;
      double num = 0.0, den = 0.0;
      bool exact = false;
      for (std::size_t e = 0; e < values.size(); ++e) {
        const double dx = x - topo.positions[e].x, dy = y - topo.positions[e].y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < 1e-24) {
          topo.grid[row * G + col] = values[e];
          exact = true;
          break;
        }
        num += values[e] / d2;
        den += 1.0 / d2;
      }
      if (!exact) topo.grid[row * G + col] = num / den;
    }
  }
  return topo;
}

std::string topography_csv(const Topography& topo) {
  std::string out = "channel,value\n";
  for (std::size_t c = 0; c < topo.channel_values.size(); ++c) {
    out += topo.channel_names[c] + "," + fmt(topo.channel_values[c]) + "\n";
  }
  return out;
}

std::string topography_svg(const Topography& topo, std::string_view title) {
  constexpr double kSize = 400.0, kMargin = 40.0;
  const double radius = (kSize - 2 * kMargin) / 2.0;
  const double cx = kSize / 2.0, cy = kSize / 2.0 + 10.0;
  const auto [lo_it, hi_it] =
      std::minmax_element(topo.channel_values.begin(), topo.channel_values.end());
  const double lo = *lo_it, hi = *hi_it;
  const auto norm = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 0.5; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kSize) +
                  "\" height=\"" + fmt(kSize + 20) + "\" viewBox=\"0 0 " + fmt(kSize) + " " +
                  fmt(kSize + 20) + "\">\n";
  s += "<title>" + escape_xml(title) + "</title>\n";
  s += "<text x=\"" + fmt(cx) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">" + escape_xml(title) + "</text>\n";
  s += "<clipPath id=\"head\"><circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" +
       fmt(radius) + "\"/></clipPath>\n";
  if (topo.grid_size > 0) {
    const std::size_t G = topo.grid_size;
    const double cell = 2.0 * radius / static_cast<double>(G);
    s += "<g clip-path=\"url(#head)\" shape-rendering=\"crispEdges\">\n";
    for (std::size_t row = 0; row < G; ++row) {
      for (std::size_t col = 0; col < G; ++col) {
        if (!topo.inside[row * G + col]) continue;
        s += "<rect x=\"" + fmt(cx - radius + static_cast<double>(col) * cell) + "\" y=\"" +
             fmt(cy - radius + static_cast<double>(row) * cell) + "\" width=\"" +
             fmt(cell + 0.5) + "\" height=\"" + fmt(cell + 0.5) + "\" fill=\"" +
             ramp(norm(topo.grid_at(row, col))) + "\"/>\n";
      }
    }
    s += "</g>\n";
  }
  s += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" + fmt(radius) +
       "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  s += "<polyline points=\"" + fmt(cx - 12) + "," + fmt(cy - radius + 1) + " " + fmt(cx) + "," +
       fmt(cy - radius - 14) + " " + fmt(cx + 12) + "," + fmt(cy - radius + 1) +
       "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  for (std::size_t e = 0; e < topo.positions.size(); ++e) {
    const double ex = cx + topo.positions[e].x * radius;
    const double ey = cy - topo.positions[e].y * radius;
    s += "<circle cx=\"" + fmt(ex) + "\" cy=\"" + fmt(ey) +
         "\" r=\"3\" fill=\"black\"><title>" + escape_xml(topo.channel_names[e]) + " = " +
         fmt(topo.channel_values[e]) + "</title></circle>\n";
    s += "<text x=\"" + fmt(ex + 4) + "\" y=\"" + fmt(ey - 4) +
         "\" font-family=\"sans-serif\" font-size=\"9\">" + escape_xml(topo.channel_names[e]) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace lmda::interpret
