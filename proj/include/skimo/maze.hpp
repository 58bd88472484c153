#pragma once

#include <array>
#include <deque>
#include <sstream>

#include "skimo/common.hpp"

namespace skimo {

inline constexpr double kVMax = 1.0;        // cells per step at full throttle
inline constexpr double kWallEps = 1e-6;    // gap left between agent and wall face
inline constexpr double kSuccessReward = 100.0;

using Vec2 = std::array<double, 2>;

// Static maze description: boolean wall grid in cell units, a disc-shaped
// start region, and a disc goal. Positions are continuous; cell (cx, cy)
// covers [cx, cx+1) x [cy, cy+1).
struct MazeSpec {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> walls;  // row-major [y * width + x], 1 = wall
  Vec2 start_center{0, 0};
  double start_radius = 0;
  Vec2 goal{0, 0};
  double goal_radius = 0;
  int max_episode_steps = 0;
  double reward_on_success = kSuccessReward;

  bool in_bounds(int cx, int cy) const {
    return cx >= 0 && cx < width && cy >= 0 && cy < height;
  }
  bool is_wall(int cx, int cy) const {
    // Everything outside the grid behaves as wall.
    return !in_bounds(cx, cy) || walls[size_t(cy) * width + cx] != 0;
  }
  bool is_free(int cx, int cy) const { return !is_wall(cx, cy); }

  static int cell_of(double x) { return int(std::floor(x)); }
  bool free_at(const Vec2& p) const { return is_free(cell_of(p[0]), cell_of(p[1])); }
};

struct EnvState {
  Vec2 position{0, 0};
  Vec2 velocity{0, 0};
  int step_count = 0;
  bool done = false;

  std::array<double, 4> observation() const {
    return {position[0], position[1], velocity[0], velocity[1]};
  }
};

struct StepResult {
  EnvState state;
  double reward = 0;
  bool done = false;
};

// ---------------------------------------------------------------------------
// Layout file format: header `maze v1 <width> <height> <goal_radius>
// <max_steps>` followed by height rows of `#` wall / `.` free / `S`
// start-center / `G` goal. The start-region radius is not part of the file;
// it defaults to goal_radius and may be overridden by run configuration.

inline std::string save_maze(const MazeSpec& spec) {
  std::ostringstream out;
  out << "maze v1 " << spec.width << " " << spec.height << " " << spec.goal_radius << " "
      << spec.max_episode_steps << "\n";
  int sx = MazeSpec::cell_of(spec.start_center[0]), sy = MazeSpec::cell_of(spec.start_center[1]);
  int gx = MazeSpec::cell_of(spec.goal[0]), gy = MazeSpec::cell_of(spec.goal[1]);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      char c = spec.is_wall(x, y) ? '#' : '.';
      if (x == sx && y == sy) c = 'S';
      if (x == gx && y == gy) c = 'G';
      out << c;
    }
    out << "\n";
  }
  return out.str();
}

// Distances over the free-cell grid, 4-connected BFS from one cell; -1 where
// unreachable. Shared by validation, shortest_path, and the data generator.
inline std::vector<int> bfs_distances(const MazeSpec& spec, int sx, int sy) {
  std::vector<int> dist(size_t(spec.width) * spec.height, -1);
  std::deque<std::pair<int, int>> q;
  dist[size_t(sy) * spec.width + sx] = 0;
  q.emplace_back(sx, sy);
  constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop_front();
    int d = dist[size_t(y) * spec.width + x];
    for (int k = 0; k < 4; ++k) {
      int nx = x + dx[k], ny = y + dy[k];
      if (spec.is_wall(nx, ny)) continue;
      auto& nd = dist[size_t(ny) * spec.width + nx];
      if (nd < 0) {
        nd = d + 1;
        q.emplace_back(nx, ny);
      }
    }
  }
  return dist;
}

inline MazeSpec load_maze(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  MazeSpec spec;
  std::string header;
  if (!std::getline(in, header)) throw FormatError(FormatError::Kind::Truncated, "empty maze file");
  std::istringstream hs(header);
  if (!(hs >> magic) || magic != "maze")
    throw FormatError(FormatError::Kind::BadMagic, "maze header must start with 'maze'");
  if (!(hs >> version) || version != "v1")
    throw FormatError(FormatError::Kind::BadVersion, "unsupported maze version: " + version);
  if (!(hs >> spec.width >> spec.height >> spec.goal_radius >> spec.max_episode_steps))
    throw FormatError(FormatError::Kind::Malformed, "maze header missing fields");
  if (spec.width <= 0 || spec.height <= 0 || spec.goal_radius <= 0 || spec.max_episode_steps <= 0)
    throw FormatError(FormatError::Kind::Malformed, "maze header fields must be positive");

  spec.walls.assign(size_t(spec.width) * spec.height, 0);
  int n_start = 0, n_goal = 0;
  for (int y = 0; y < spec.height; ++y) {
    std::string row;
    if (!std::getline(in, row))
      throw FormatError(FormatError::Kind::Truncated,
                        "maze grid ends at row " + std::to_string(y) + " of " +
                            std::to_string(spec.height));
    if (int(row.size()) != spec.width)
      throw FormatError(FormatError::Kind::Malformed,
                        "maze row " + std::to_string(y) + " has width " +
                            std::to_string(row.size()) + ", expected " +
                            std::to_string(spec.width));
    for (int x = 0; x < spec.width; ++x) {
      switch (row[x]) {
        case '#': spec.walls[size_t(y) * spec.width + x] = 1; break;
        case '.': break;
        case 'S':
          spec.start_center = {x + 0.5, y + 0.5};
          ++n_start;
          break;
        case 'G':
          spec.goal = {x + 0.5, y + 0.5};
          ++n_goal;
          break;
        default:
          throw FormatError(FormatError::Kind::Malformed,
                            std::string("invalid maze cell character '") + row[x] + "'");
      }
    }
  }
  if (n_start != 1 || n_goal != 1)
    throw FormatError(FormatError::Kind::Malformed,
                      "maze must contain exactly one S and one G cell");
  spec.start_radius = spec.goal_radius;

  // Start and goal must be mutually reachable over free cells.
  auto dist = bfs_distances(spec, MazeSpec::cell_of(spec.start_center[0]),
                            MazeSpec::cell_of(spec.start_center[1]));
  int gi = MazeSpec::cell_of(spec.goal[1]) * spec.width + MazeSpec::cell_of(spec.goal[0]);
  if (dist[size_t(gi)] < 0)
    throw FormatError(FormatError::Kind::Malformed, "no free-cell path from start to goal");
  return spec;
}

// Identity of the layout geometry (not of tunables like start_radius
// overrides): hash of the canonical serialized text.
inline uint64_t layout_hash(const MazeSpec& spec) { return fnv1a64(save_maze(spec)); }

// ---------------------------------------------------------------------------
// Dynamics

namespace detail {

// Advances one coordinate by delta, stopping at the first wall face crossed.
// The other coordinate is held fixed, so each axis resolves independently.
inline double sweep_axis(const MazeSpec& spec, double from, double other, double delta,
                         bool horizontal) {
  if (delta == 0) return from;
  double target = from + delta;
  int other_cell = MazeSpec::cell_of(other);
  int dir = delta > 0 ? 1 : -1;
  // With |delta| <= v_max = 1 at most two boundaries can be involved; loop is
  // general anyway.
  int cell = MazeSpec::cell_of(from);
  while (true) {
    double face = dir > 0 ? double(cell + 1) : double(cell);
    bool crosses = dir > 0 ? target >= face : target < face;
    if (!crosses) return target;
    int next = cell + dir;
    bool wall = horizontal ? spec.is_wall(next, other_cell) : spec.is_wall(other_cell, next);
    if (wall) return face - dir * kWallEps;
    cell = next;
  }
}

}  // namespace detail

inline EnvState reset(const MazeSpec& spec, Rng& rng) {
  EnvState st;
  if (spec.start_radius <= 0) {
    st.position = spec.start_center;
    return st;
  }
  // Uniform over the disc, rejecting wall cells; falls back to the center
  // (guaranteed free by validation) if the region is almost entirely walled.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double r = spec.start_radius * std::sqrt(rng.uniform());
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    Vec2 p{spec.start_center[0] + r * std::cos(theta), spec.start_center[1] + r * std::sin(theta)};
    if (spec.free_at(p)) {
      st.position = p;
      return st;
    }
  }
  st.position = spec.start_center;
  return st;
}

inline StepResult step(const EnvState& state, const Vec2& action, const MazeSpec& spec) {
  if (state.done) throw UsageError("step called on a finished episode");
  EnvState next = state;
  next.velocity = {clampv(action[0], -1.0, 1.0) * kVMax, clampv(action[1], -1.0, 1.0) * kVMax};
  // X resolves fully, then Y at the new X column.
  next.position[0] = detail::sweep_axis(spec, state.position[0], state.position[1],
                                        next.velocity[0], /*horizontal=*/true);
  next.position[1] = detail::sweep_axis(spec, next.position[1], next.position[0],
                                        next.velocity[1], /*horizontal=*/false);
  next.step_count = state.step_count + 1;

  double dx = next.position[0] - spec.goal[0];
  double dy = next.position[1] - spec.goal[1];
  bool reached = std::sqrt(dx * dx + dy * dy) <= spec.goal_radius;
  double reward = reached ? spec.reward_on_success : 0.0;
  next.done = reached || next.step_count >= spec.max_episode_steps;
  return {next, reward, next.done};
}

// BFS shortest path between the cells containing two positions; empty when
// unreachable, single cell when both map to the same cell.
inline std::vector<std::pair<int, int>> shortest_path(const MazeSpec& spec, const Vec2& from,
                                                      const Vec2& to) {
  int fx = MazeSpec::cell_of(from[0]), fy = MazeSpec::cell_of(from[1]);
  int tx = MazeSpec::cell_of(to[0]), ty = MazeSpec::cell_of(to[1]);
  if (spec.is_wall(fx, fy) || spec.is_wall(tx, ty))
    throw UsageError("shortest_path endpoint lies in a wall cell");
  auto dist = bfs_distances(spec, tx, ty);  // distances to target, walk downhill
  if (dist[size_t(fy) * spec.width + fx] < 0) return {};
  std::vector<std::pair<int, int>> path{{fx, fy}};
  int x = fx, y = fy;
  constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
  while (!(x == tx && y == ty)) {
    int d = dist[size_t(y) * spec.width + x];
    for (int k = 0; k < 4; ++k) {
      int nx = x + dx[k], ny = y + dy[k];
      if (!spec.is_wall(nx, ny) && dist[size_t(ny) * spec.width + nx] == d - 1) {
        x = nx;
        y = ny;
        break;
      }
    }
    path.emplace_back(x, y);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Procedural layouts: recursive division with door gaps, solid border.

namespace detail {

inline void divide_region(std::vector<uint8_t>& walls, int W, int x0, int y0, int x1, int y1,
                          Rng& rng) {
  int w = x1 - x0, h = y1 - y0;
  const int min_side = 5;  // stop before chambers get too cramped to split
  if (w < min_side * 2 + 1 && h < min_side * 2 + 1) return;
  bool vertical = w > h ? true : (h > w ? false : rng.uniform_int(2) == 0);
  if (vertical && w < min_side * 2 + 1) vertical = false;
  if (!vertical && h < min_side * 2 + 1) vertical = true;

  if (vertical) {
    // Wall column strictly inside, 2-cell door at a random height.
    int wx = x0 + min_side + rng.uniform_int(w - 2 * min_side);
    int door = y0 + rng.uniform_int(h - 1);
    for (int y = y0; y < y1; ++y)
      if (y != door && y != door + 1) walls[size_t(y) * W + wx] = 1;
    divide_region(walls, W, x0, y0, wx, y1, rng);
    divide_region(walls, W, wx + 1, y0, x1, y1, rng);
  } else {
    int wy = y0 + min_side + rng.uniform_int(h - 2 * min_side);
    int door = x0 + rng.uniform_int(w - 1);
    for (int x = x0; x < x1; ++x)
      if (x != door && x != door + 1) walls[size_t(wy) * W + x] = 1;
    divide_region(walls, W, x0, y0, x1, wy, rng);
    divide_region(walls, W, x0, wy + 1, x1, y1, rng);
  }
}

}  // namespace detail

// Seeded recursive-division maze with wide corridors. Start and goal land on
// the most distant free-cell pair found from a random free seed cell, so the
// task always spans the layout.
inline MazeSpec generate_maze(int width, int height, uint64_t seed, double goal_radius,
                              int max_steps) {
  if (width < 8 || height < 8) throw UsageError("generate_maze: minimum size is 8x8");
  Rng rng(seed);
  MazeSpec spec;
  spec.width = width;
  spec.height = height;
  spec.goal_radius = goal_radius;
  spec.start_radius = goal_radius;
  spec.max_episode_steps = max_steps;
  spec.walls.assign(size_t(width) * height, 0);
  for (int x = 0; x < width; ++x) {
    spec.walls[x] = 1;
    spec.walls[size_t(height - 1) * width + x] = 1;
  }
  for (int y = 0; y < height; ++y) {
    spec.walls[size_t(y) * width] = 1;
    spec.walls[size_t(y) * width + width - 1] = 1;
  }
  detail::divide_region(spec.walls, width, 1, 1, width - 1, height - 1, rng);

  // Farthest-pair heuristic: BFS from a random free cell to find A, then BFS
  // from A to find B; (A, B) approximates the layout diameter.
  auto pick_far = [&](int sx, int sy) {
    auto dist = bfs_distances(spec, sx, sy);
    int best = -1, bx = sx, by = sy;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (dist[size_t(y) * width + x] > best) {
          best = dist[size_t(y) * width + x];
          bx = x;
          by = y;
        }
    return std::pair<int, int>{bx, by};
  };
  int sx, sy;
  do {
    sx = 1 + rng.uniform_int(width - 2);
    sy = 1 + rng.uniform_int(height - 2);
  } while (spec.is_wall(sx, sy));
  auto a = pick_far(sx, sy);
  auto b = pick_far(a.first, a.second);
  spec.start_center = {a.first + 0.5, a.second + 0.5};
  spec.goal = {b.first + 0.5, b.second + 0.5};
  return spec;
}

}  // namespace skimo
