// Offline evaluation over trained checkpoints: open-loop prediction
// comparison between the skill-step and env-step dynamics models, replay
// coverage rendering, and deterministic config sweeps. Everything here is
// read-only with respect to the models it is handed.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "skimo/flatmodel.hpp"
#include "skimo/pretrain.hpp"
#include "skimo/rl.hpp"
#include "skimo/svg.hpp"

namespace skimo {

// --- open-loop prediction comparison ----------------------------------------

// Mean Euclidean position error of latent rollouts against ground-truth
// trajectory segments. The flat model is stepped with the logged action at
// every env step; the skill model is stepped once per skill horizon with the
// skill obtained by encoding the corresponding ground-truth window through
// the trained posterior. Errors are measured in raw position units on the
// first two decoded observation dims, so the two models are compared at the
// env steps where their predictions coincide: multiples of the skill horizon.
struct PredictionReport {
  int horizon = 0;        // env steps rolled out per segment
  int skill_horizon = 0;  // env steps covered by one skill-dynamics step
  int segments = 0;
  std::vector<double> flat_err;   // flat_err[k-1]: error after k env steps
  std::vector<double> skill_err;  // skill_err[j]: error after (j+1)*H env steps
  // Decoded paths of the first segment, for overlays.
  std::vector<Vec2> overlay_true, overlay_flat, overlay_skill;

  double flat_at(int env_step) const {
    if (env_step < 1 || env_step > int(flat_err.size()))
      throw UsageError("flat_at: env step out of range");
    return flat_err[size_t(env_step) - 1];
  }

  double skill_at(int env_step) const {
    if (skill_horizon < 1 || env_step < 1 || env_step % skill_horizon != 0)
      throw UsageError("skill_at: env step is not a skill boundary");
    int j = env_step / skill_horizon;
    if (j > int(skill_err.size())) throw UsageError("skill_at: env step out of range");
    return skill_err[size_t(j) - 1];
  }
};

namespace detail {

// Decoded observations live in the model's normalized space; map the first
// two dims back to raw maze coordinates.
template <class S>
Vec2 denorm_position(const Normalizer& norm, bool normalized, const Mat<S>& row_mat, int row) {
  double x = double(row_mat.at(row, 0)), y = double(row_mat.at(row, 1));
  if (normalized && norm.count() > 1) {
    x = norm.mean()[0] + x * norm.stddev(0);
    y = norm.mean()[1] + y * norm.stddev(1);
  }
  return {x, y};
}

inline double dist2d(const Vec2& a, const Vec2& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace detail

template <class S>
PredictionReport rollout_compare(const Dataset& ds, const Agent<S>& agent,
                                 const FlatModel<S>& flat, int horizon, int min_segments = 20,
                                 int max_segments = 64) {
  int H = agent.cfg.skill_horizon;
  if (horizon < 1 || horizon % H != 0)
    throw UsageError("rollout_compare: horizon must be a positive multiple of the skill horizon");
  if (min_segments < 1 || max_segments < min_segments)
    throw UsageError("rollout_compare: bad segment bounds");
  if (ds.obs_dim != agent.cfg.obs_dim || ds.obs_dim != flat.cfg.obs_dim ||
      ds.act_dim != agent.cfg.act_dim || ds.act_dim != flat.cfg.act_dim)
    throw UsageError("rollout_compare: dataset dims do not match the models");

  // Disjoint segments, earliest trajectories first.
  struct Seg {
    int traj, offset;
  };
  std::vector<Seg> segs;
  for (int ti = 0; ti < ds.n_traj() && int(segs.size()) < max_segments; ++ti)
    for (int off = 0; off + horizon < ds.trajectories[size_t(ti)].length() &&
                      int(segs.size()) < max_segments;
         off += horizon)
      segs.push_back({ti, off});
  if (int(segs.size()) < min_segments) {
    std::ostringstream oss;
    oss << "rollout_compare: dataset yields " << segs.size() << " segments of " << horizon
        << " env steps; need at least " << min_segments;
    throw UsageError(oss.str());
  }

  int od = ds.obs_dim, ad = ds.act_dim;
  PredictionReport rep;
  rep.horizon = horizon;
  rep.skill_horizon = H;
  rep.segments = int(segs.size());
  rep.flat_err.assign(size_t(horizon), 0.0);
  rep.skill_err.assign(size_t(horizon / H), 0.0);

  NoGradGuard ng;
  for (size_t si = 0; si < segs.size(); ++si) {
    const auto& tr = ds.trajectories[size_t(segs[si].traj)];
    int off = segs[si].offset;
    auto obs_row = [&](int t) {
      Mat<float> m(1, od);
      std::memcpy(m.row(0), tr.obs.row(off + t), sizeof(float) * size_t(od));
      return m;
    };
    auto true_pos = [&](int t) {
      return Vec2{double(tr.obs.at(off + t, 0)), double(tr.obs.at(off + t, 1))};
    };

    // Flat model: one latent step per logged action.
    Mat<S> hf = flat.encode_raw(flat.normalize_rows(obs_row(0)));
    std::vector<Vec2> flat_path{true_pos(0)};
    for (int t = 0; t < horizon; ++t) {
      Mat<S> a(1, ad);
      for (int j = 0; j < ad; ++j) a.at(0, j) = S(tr.act.at(off + t, j));
      hf = flat.dynamics_raw(hf, a);
      Vec2 p = detail::denorm_position(flat.norm, flat.cfg.normalize_obs, flat.decode_raw(hf), 0);
      rep.flat_err[size_t(t)] += detail::dist2d(p, true_pos(t + 1));
      flat_path.push_back(p);
    }

    // Skill model: encode each ground-truth window into a skill, step the
    // skill dynamics once per window.
    Mat<S> hs = agent.encode_raw(agent.normalize_rows(obs_row(0)));
    std::vector<Vec2> skill_path{true_pos(0)};
    for (int k = 0; k < horizon / H; ++k) {
      Mat<S> win(1, H * (od + ad));
      for (int t = 0; t < H; ++t) {
        Mat<S> so = agent.normalize_rows(obs_row(k * H + t));
        S* dst = win.row(0) + t * (od + ad);
        std::copy(so.row(0), so.row(0) + od, dst);
        for (int j = 0; j < ad; ++j) dst[od + j] = S(tr.act.at(off + k * H + t, j));
      }
      Mat<S> zm = agent.skill_posterior(Tensor<S>::from_mat(win)).mean.to_mat();
      for (auto& v : zm.d) v = std::tanh(v);
      hs = agent.dynamics_raw(hs, zm);
      Vec2 p = detail::denorm_position(agent.norm, agent.cfg.normalize_obs, agent.decode_raw(hs), 0);
      rep.skill_err[size_t(k)] += detail::dist2d(p, true_pos((k + 1) * H));
      skill_path.push_back(p);
    }

    if (si == 0) {
      for (int t = 0; t <= horizon; ++t) rep.overlay_true.push_back(true_pos(t));
      rep.overlay_flat = std::move(flat_path);
      rep.overlay_skill = std::move(skill_path);
    }
  }
  for (auto& e : rep.flat_err) e /= double(rep.segments);
  for (auto& e : rep.skill_err) e /= double(rep.segments);
  return rep;
}

inline std::string prediction_overlay_svg(const MazeSpec& spec, const PredictionReport& rep) {
  return maze_svg(spec, {maze_layer(spec), polyline_layer(rep.overlay_true, "#2b2b2b", 2.0),
                         polyline_layer(rep.overlay_flat, "#c23b22"),
                         polyline_layer(rep.overlay_skill, "#1f6fb5")});
}

// --- replay coverage --------------------------------------------------------

// Cell occupancy of every stored transition start state plus per-episode
// paths shaded old-to-new, rendered over the maze.
struct CoverageResult {
  int width = 0, height = 0;
  std::vector<long long> counts;  // [height * width], row-major
  long long total = 0;            // == transitions counted
  int episodes = 0;
  std::string svg;
};

inline CoverageResult coverage_map(const ReplayBuffer& buf, const MazeSpec& spec) {
  if (buf.obs_dim() < 2) throw UsageError("coverage_map: need at least 2 observation dims");
  CoverageResult cr;
  cr.width = spec.width;
  cr.height = spec.height;
  cr.counts.assign(size_t(spec.width) * size_t(spec.height), 0);
  auto ids = buf.episode_ids();
  cr.episodes = int(ids.size());

  std::vector<std::string> layers{maze_layer(spec)};
  for (long long id : ids)
    for (const auto& t : *buf.episode(id)) {
      int cx = std::clamp(int(std::floor(t.s[0])), 0, spec.width - 1);
      int cy = std::clamp(int(std::floor(t.s[1])), 0, spec.height - 1);
      ++cr.counts[size_t(cy) * size_t(spec.width) + size_t(cx)];
      ++cr.total;
    }
  layers.push_back(occupancy_layer(spec, cr.counts));
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto& ep = *buf.episode(ids[i]);
    std::vector<Vec2> path;
    path.reserve(ep.size() + 1);
    for (const auto& t : ep) path.push_back({double(t.s[0]), double(t.s[1])});
    path.push_back({double(ep.back().s_next[0]), double(ep.back().s_next[1])});
    double frac = ids.size() > 1 ? double(i) / double(ids.size() - 1) : 1.0;
    layers.push_back(polyline_layer(path, blend_hex("#cfe8ff", "#08306b", frac)));
  }
  cr.svg = maze_svg(spec, layers);
  return cr;
}

// --- ablation sweeps --------------------------------------------------------

enum class AblationParam { skill_horizon, plan_horizon };

struct SweepConfig {
  AblationParam param = AblationParam::skill_horizon;
  std::vector<int> values;
  std::vector<uint64_t> seeds;
  AgentConfig agent;
  PretrainConfig pre;
  RlConfig rl;
  PlanConfig plan;
  long long csv_grid_step = 0;  // 0: total_env_steps / 20

  void validate() const {
    if (values.empty()) throw UsageError("sweep: need at least one value");
    if (seeds.empty()) throw UsageError("sweep: need at least one seed");
    for (int v : values)
      if (v < 1) throw UsageError("sweep: values must be >= 1");
  }
};

struct AblationRun {
  int value = 0;
  uint64_t seed = 0;
  TrainResult result;
};

// Mean return over the trailing `k` finished episodes; the comparison metric
// for sweep points.
inline double trailing_mean_return(const std::vector<TrainRow>& rows, int k) {
  if (rows.empty() || k < 1) return 0.0;
  int n = std::min<int>(k, int(rows.size()));
  double s = 0;
  for (int i = int(rows.size()) - n; i < int(rows.size()); ++i) s += rows[size_t(i)].episode_return;
  return s / double(n);
}

// One row per run and grid point, carrying the latest finished episode
// forward so every config/seed pair is sampled at identical env steps.
inline void write_sweep_csv(const std::vector<AblationRun>& runs, long long grid_step,
                            long long max_step, const std::string& path) {
  if (grid_step < 1 || max_step < 0) throw UsageError("write_sweep_csv: bad grid");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("write_sweep_csv: cannot open " + path);
  out << "config_value,seed,env_step,return,success\n";
  for (const auto& run : runs) {
    size_t next = 0;
    double ret = 0.0;
    int suc = 0;
    for (long long g = 0; g <= max_step; g += grid_step) {
      while (next < run.result.rows.size() && run.result.rows[next].env_step <= g) {
        ret = run.result.rows[next].episode_return;
        suc = run.result.rows[next].success ? 1 : 0;
        ++next;
      }
      std::ostringstream line;
      line.precision(9);
      line << run.value << ',' << run.seed << ',' << g << ',' << ret << ',' << suc;
      out << line.str() << '\n';
    }
  }
}

// Full pipeline per (value, seed): fresh agent, offline pretraining on the
// shared dataset, downstream training on the maze. Sequential and seeded, so
// a sweep over a single value reproduces a plain run exactly.
template <class S>
std::vector<AblationRun> ablation_sweep(const MazeSpec& spec, const Dataset& ds,
                                       const SweepConfig& sc, const std::string& csv_path = "") {
  sc.validate();
  std::vector<AblationRun> runs;
  for (int v : sc.values)
    for (uint64_t seed : sc.seeds) {
      AgentConfig ac = sc.agent;
      PretrainConfig pc = sc.pre;
      PlanConfig pl = sc.plan;
      if (sc.param == AblationParam::skill_horizon) {
        ac.skill_horizon = v;
        pc.skill_horizon = v;
      } else {
        pl.horizon = v;
      }
      Agent<S> ag(ac);
      ag.init(seed);
      pretrain(ag, ds, pc, seed);
      auto res = train_downstream(spec, ag, sc.rl, pl, seed);
      runs.push_back({v, seed, std::move(res)});
    }
  if (!csv_path.empty()) {
    long long step =
        sc.csv_grid_step > 0 ? sc.csv_grid_step : std::max<long long>(1, sc.rl.total_env_steps / 20);
    write_sweep_csv(runs, step, sc.rl.total_env_steps, csv_path);
  }
  return runs;
}

}  // namespace skimo
