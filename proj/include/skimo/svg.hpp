// Minimal SVG rendering for maze layouts, trajectories, and coverage maps.
// Coordinates follow maze convention: cell (x, y) covers [x, x+1) x [y, y+1),
// drawn at a fixed pixel scale with y increasing downward.

#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skimo/common.hpp"
#include "skimo/maze.hpp"

namespace skimo {

inline constexpr double kSvgScale = 24.0;  // pixels per maze cell

// Linear blend between two #rrggbb colors, t in [0, 1].
inline std::string blend_hex(const std::string& a, const std::string& b, double t) {
  if (a.size() != 7 || b.size() != 7 || a[0] != '#' || b[0] != '#')
    throw UsageError("blend_hex: colors must be #rrggbb");
  t = std::clamp(t, 0.0, 1.0);
  auto channel = [&](int off) {
    int ca = std::stoi(a.substr(size_t(off), 2), nullptr, 16);
    int cb = std::stoi(b.substr(size_t(off), 2), nullptr, 16);
    return int(std::lround(ca + (cb - ca) * t));
  };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(1), channel(3), channel(5));
  return buf;
}

inline std::string svg_open(int width_cells, int height_cells) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_cells * kSvgScale
    << "\" height=\"" << height_cells * kSvgScale << "\" viewBox=\"0 0 "
    << width_cells * kSvgScale << ' ' << height_cells * kSvgScale << "\">\n";
  return o.str();
}

// Walls, free space, start disc, and goal disc.
inline std::string maze_layer(const MazeSpec& spec) {
  std::ostringstream o;
  o << "<rect width=\"" << spec.width * kSvgScale << "\" height=\"" << spec.height * kSvgScale
    << "\" fill=\"#f8f8f4\"/>\n";
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      if (spec.is_wall(x, y))
        o << "<rect x=\"" << x * kSvgScale << "\" y=\"" << y * kSvgScale << "\" width=\""
          << kSvgScale << "\" height=\"" << kSvgScale << "\" fill=\"#3a3a3a\"/>\n";
  o << "<circle cx=\"" << spec.goal[0] * kSvgScale << "\" cy=\"" << spec.goal[1] * kSvgScale
    << "\" r=\"" << spec.goal_radius * kSvgScale << "\" fill=\"#2e9e4f\" fill-opacity=\"0.35\"/>\n";
  o << "<circle cx=\"" << spec.start_center[0] * kSvgScale << "\" cy=\""
    << spec.start_center[1] * kSvgScale << "\" r=\"" << std::max(spec.start_radius, 0.15) * kSvgScale
    << "\" fill=\"none\" stroke=\"#b05f10\" stroke-width=\"1.5\"/>\n";
  return o.str();
}

inline std::string polyline_layer(const std::vector<Vec2>& path, const std::string& color,
                                  double width = 1.5) {
  if (path.size() < 2) return "";
  std::ostringstream o;
  o.precision(6);
  o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
    << "\" points=\"";
  for (size_t i = 0; i < path.size(); ++i) {
    if (i) o << ' ';
    o << path[i][0] * kSvgScale << ',' << path[i][1] * kSvgScale;
  }
  o << "\"/>\n";
  return o.str();
}

// Heat layer: per-cell fill with opacity growing with count.
inline std::string occupancy_layer(const MazeSpec& spec, const std::vector<long long>& counts) {
  if (int(counts.size()) != spec.width * spec.height)
    throw UsageError("occupancy_layer: grid size mismatch");
  long long peak = 0;
  for (long long c : counts) peak = std::max(peak, c);
  if (peak == 0) return "";
  std::ostringstream o;
  o.precision(4);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      long long c = counts[size_t(y) * spec.width + x];
      if (c == 0) continue;
      o << "<rect x=\"" << x * kSvgScale << "\" y=\"" << y * kSvgScale << "\" width=\""
        << kSvgScale << "\" height=\"" << kSvgScale << "\" fill=\"#2166ac\" fill-opacity=\""
        << 0.15 + 0.75 * double(c) / double(peak) << "\"/>\n";
    }
  return o.str();
}

inline std::string svg_close() { return "</svg>\n"; }

// One full document: maze plus optional layers in draw order.
inline std::string maze_svg(const MazeSpec& spec, const std::vector<std::string>& layers) {
  std::string out = svg_open(spec.width, spec.height) + maze_layer(spec);
  for (const auto& l : layers) out += l;
  out += svg_close();
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw UsageError("cannot open for writing: " + path);
  f << content;
}

}  // namespace skimo
