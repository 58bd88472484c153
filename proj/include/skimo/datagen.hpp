#pragma once

#include "skimo/dataset.hpp"
#include "skimo/maze.hpp"

namespace skimo {

// Scripted demonstration generator: BFS waypoints followed by a noisy
// proportional controller. Stands in for an externally collected corpus; the
// data stays reward- and task-free.
struct DatagenConfig {
  double k_p = 0.5;             // controller gain toward the active waypoint
  double sigma_a = 0.1;         // Gaussian action noise (applied post-clamp)
  double arrival_radius = 0.5;  // leg ends within this distance of its goal
  double waypoint_radius = 0.7; // advance to the next waypoint inside this
  int min_len = 10;             // discard trajectories with fewer actions (H)
  int tour_min_steps = 0;       // >0: chain goals until this many steps (long
                                // segments for open-loop prediction studies)
  int max_leg_steps_slack = 50; // leg step cap = 4 * path_cells + slack
  int max_attempts_per_traj = 100;
};

namespace detail {

inline Vec2 sample_free_point(const MazeSpec& spec, Rng& rng) {
  for (int i = 0; i < 10000; ++i) {
    Vec2 p{rng.uniform(0.0, double(spec.width)), rng.uniform(0.0, double(spec.height))};
    if (spec.free_at(p)) return p;
  }
  throw UsageError("sample_free_point: maze appears to have no free cells");
}

// Drives from st toward `goal`, appending observations/actions. Returns true
// on arrival, false if the step cap was hit.
inline bool run_leg(const MazeSpec& spec, EnvState& st, const Vec2& goal,
                    const DatagenConfig& cfg, Rng& rng, std::vector<float>& obs,
                    std::vector<float>& act) {
  auto path = shortest_path(spec, st.position, goal);
  if (path.empty()) return false;
  // The physics-only spec: goal replaced by the leg target so arrival checks
  // reuse the env's own distance rule; episode cap effectively disabled.
  MazeSpec leg = spec;
  leg.goal = goal;
  leg.goal_radius = cfg.arrival_radius;
  leg.max_episode_steps = 1 << 30;
  int cap = 4 * int(path.size()) + cfg.max_leg_steps_slack;
  size_t wp = 0;
  for (int step_i = 0; step_i < cap; ++step_i) {
    // Advance waypoints the agent has effectively reached; the last waypoint
    // is replaced by the exact goal point.
    while (wp + 1 < path.size()) {
      Vec2 c{path[wp].first + 0.5, path[wp].second + 0.5};
      double dx = c[0] - st.position[0], dy = c[1] - st.position[1];
      if (std::sqrt(dx * dx + dy * dy) > cfg.waypoint_radius) break;
      ++wp;
    }
    Vec2 target = wp + 1 < path.size() ? Vec2{path[wp].first + 0.5, path[wp].second + 0.5} : goal;
    Vec2 a{clampv(cfg.k_p * (target[0] - st.position[0]), -1.0, 1.0) +
               cfg.sigma_a * rng.normal(),
           clampv(cfg.k_p * (target[1] - st.position[1]), -1.0, 1.0) +
               cfg.sigma_a * rng.normal()};
    a = {clampv(a[0], -1.0, 1.0), clampv(a[1], -1.0, 1.0)};  // store what the env executes
    auto res = skimo::step(st, a, leg);
    act.push_back(float(a[0]));
    act.push_back(float(a[1]));
    st = res.state;
    st.done = false;  // the tour owns termination, not the env
    for (double v : st.observation()) obs.push_back(float(v));
    if (res.reward > 0) return true;  // within arrival radius of the leg goal
  }
  return false;
}

}  // namespace detail

struct GenStats {
  int legs_total = 0;
  int legs_arrived = 0;  // reached their goal (vs. capped out)

  double arrival_rate() const { return legs_total ? double(legs_arrived) / legs_total : 0; }
};

// Deterministic in (spec, n_traj, seed): each trajectory runs on its own
// split stream, so corpus content is independent of generation order.
// Step-capped legs still contribute data (imperfect motion is useful skill
// material); only trajectories shorter than min_len are re-rolled.
inline Dataset generate(const MazeSpec& spec, int n_traj, uint64_t seed,
                        const DatagenConfig& cfg = {}, GenStats* stats = nullptr) {
  if (n_traj < 0) throw UsageError("generate: n_traj must be >= 0");
  Dataset ds;
  ds.obs_dim = 4;
  ds.act_dim = 2;
  ds.layout_hash = layout_hash(spec);
  ds.seed = seed;
  Rng base(seed);
  for (int i = 0; i < n_traj; ++i) {
    Rng rng = base.split(uint64_t(i));
    bool emitted = false;
    for (int attempt = 0; attempt < cfg.max_attempts_per_traj && !emitted; ++attempt) {
      EnvState st;
      st.position = detail::sample_free_point(spec, rng);
      std::vector<float> obs, act;
      for (double v : st.observation()) obs.push_back(float(v));
      int steps = 0;
      bool arrived = true;
      std::vector<int> leg_results;
      do {
        Vec2 goal = detail::sample_free_point(spec, rng);
        arrived = detail::run_leg(spec, st, goal, cfg, rng, obs, act);
        leg_results.push_back(arrived ? 1 : 0);
        steps = int(act.size()) / 2;
      } while (arrived && cfg.tour_min_steps > 0 && steps < cfg.tour_min_steps);
      if (steps < cfg.min_len) continue;  // too short to carve a single skill
      Trajectory t;
      t.obs = Mat<float>(steps + 1, 4, std::move(obs));
      t.act = Mat<float>(steps, 2, std::move(act));
      ds.trajectories.push_back(std::move(t));
      emitted = true;
      if (stats)
        for (int r : leg_results) {
          ++stats->legs_total;
          stats->legs_arrived += r;
        }
    }
    if (!emitted)
      throw UsageError("generate: failed to produce trajectory " + std::to_string(i) +
                       " after " + std::to_string(cfg.max_attempts_per_traj) + " attempts");
  }
  return ds;
}

}  // namespace skimo
