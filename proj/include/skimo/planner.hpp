// Skill-space planning: cross-entropy optimization over skill sequences with
// policy-seeded candidates, learned reward/value scoring through the latent
// dynamics, and the MPC wrapper that decodes the chosen skill into actions.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "skimo/agent.hpp"
#include "skimo/maze.hpp"

namespace skimo {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct PlanConfig {
  int horizon = 10;       // N: skills planned ahead (after warm-up annealing)
  int n_cem = 6;          // optimization iterations
  int n_sample = 512;     // Gaussian candidates per iteration
  int n_pi = 25;          // policy-seeded candidates per iteration
  int k = 64;             // elites kept for the refit
  double momentum = 0.1;  // blend of previous mean into the refit mean
  double temperature = 0.5;
  double std_max = 0.5;
  double std_min = 0.01;
  long long std_decay_steps = 100000;
  long long horizon_decay_steps = 100000;
  double gamma = 0.99;
  bool use_cem = true;  // false: act by sampling the task policy directly
  // Known return bounds: the bootstrap value in candidate scores is clamped
  // into this range so value extrapolation cannot dominate planning.
  double value_min = -std::numeric_limits<double>::infinity();
  double value_max = std::numeric_limits<double>::infinity();

  void validate() const {
    if (horizon < 1) throw UsageError("plan: horizon must be >= 1");
    if (n_cem < 0 || n_sample < 1 || n_pi < 0) throw UsageError("plan: bad candidate counts");
    if (k < 1 || k > n_sample + n_pi) throw UsageError("plan: k must be in [1, n_sample + n_pi]");
    if (std_min <= 0 || std_min > std_max) throw UsageError("plan: need 0 < std_min <= std_max");
    if (temperature <= 0) throw UsageError("plan: temperature must be > 0");
    if (momentum < 0 || momentum > 1) throw UsageError("plan: momentum must be in [0, 1]");
    if (gamma < 0 || gamma > 1) throw UsageError("plan: gamma must be in [0, 1]");
    if (std::isnan(value_min) || std::isnan(value_max) || value_min > value_max)
      throw UsageError("plan: need value_min <= value_max");
  }
};

// Sampling distribution over a skill sequence: one (mu, sigma) row per skill.
struct PlanDistribution {
  Mat<float> mu, sigma;
  int rows() const { return mu.rows; }
};

struct Schedules {
  double std_cap = 0;
  int horizon = 0;
};

// Exploration annealing: the sampling-std cap shrinks std_max -> std_min and
// the planning horizon grows 1 -> N, both linearly over their decay windows.
inline Schedules decay_schedules(long long env_step, const PlanConfig& cfg) {
  if (env_step < 0) throw UsageError("decay_schedules: negative step");
  auto frac = [&](long long steps) {
    if (steps <= 0) return 1.0;
    return std::min(1.0, double(env_step) / double(steps));
  };
  Schedules s;
  double fs = frac(cfg.std_decay_steps);
  s.std_cap = fs >= 1.0 ? cfg.std_min : cfg.std_max + (cfg.std_min - cfg.std_max) * fs;
  s.horizon = int(std::lround(1.0 + (cfg.horizon - 1) * frac(cfg.horizon_decay_steps)));
  return s;
}

// --- return estimation ------------------------------------------------------

// Scores a batch of candidate skill sequences from a shared start latent:
//   sum_i gamma^i R(h_i, z_i) + gamma^N Q(h_N, pi(h_N) mean),
// unrolled through the latent dynamics. A candidate that produces any
// non-finite number is scored -inf and never selected.
template <class S>
std::vector<double> estimate_returns(const Agent<S>& agent, const Mat<S>& h0_row,
                                     const std::vector<Mat<float>>& skills, double gamma,
                                     double value_min = kNegInf, double value_max = -kNegInf) {
  int C = int(skills.size());
  if (C == 0) return {};
  int n_steps = skills[0].rows, d = skills[0].cols, latent = h0_row.cols;
  Mat<S> h(C, latent);
  for (int c = 0; c < C; ++c) std::copy(h0_row.row(0), h0_row.row(0) + latent, h.row(c));
  std::vector<double> total(size_t(C), 0.0);
  double discount = 1.0;
  Mat<S> z(C, d);
  for (int i = 0; i < n_steps; ++i) {
    for (int c = 0; c < C; ++c) {
      if (skills[size_t(c)].rows != n_steps || skills[size_t(c)].cols != d)
        throw UsageError("estimate_returns: ragged candidate shapes");
      for (int j = 0; j < d; ++j) z.row(c)[j] = S(skills[size_t(c)].at(i, j));
    }
    Mat<S> r = agent.reward_raw(h, z);
    h = agent.dynamics_raw(h, z);
    for (int c = 0; c < C; ++c) total[size_t(c)] += discount * double(r.at(c, 0));
    discount *= gamma;
  }
  auto [pm, pls] = agent.task_policy_raw(h);
  Mat<S> zq(C, d);
  for (int c = 0; c < C; ++c)
    for (int j = 0; j < d; ++j) zq.row(c)[j] = S(std::tanh(double(pm.at(c, j))));
  Mat<S> q = agent.value_raw(h, zq);
  for (int c = 0; c < C; ++c) {
    total[size_t(c)] += discount * std::clamp(double(q.at(c, 0)), value_min, value_max);
    for (int j = 0; j < latent; ++j)
      if (!std::isfinite(double(h.at(c, j)))) total[size_t(c)] = kNegInf;
    if (!std::isfinite(total[size_t(c)])) total[size_t(c)] = kNegInf;
  }
  return total;
}

// Single-sequence convenience form of the scorer.
template <class S>
double estimate_return(const Agent<S>& agent, const Mat<S>& h0_row, const Mat<float>& skills,
                       double gamma) {
  for (float v : skills.d)
    if (!std::isfinite(v)) throw UsageError("estimate_return: non-finite skill input");
  return estimate_returns(agent, h0_row, std::vector<Mat<float>>{skills}, gamma)[0];
}

// --- the CEM loop -----------------------------------------------------------

// Soft elite statistics: weights proportional to exp((score - best) / T), so
// T -> 0 collapses onto the single best elite and T -> inf approaches the
// unweighted elite mean.
inline PlanDistribution refit_elites(const std::vector<const Mat<float>*>& elites,
                                     const std::vector<double>& scores, double temperature) {
  if (elites.empty() || elites.size() != scores.size())
    throw UsageError("refit_elites: empty or mismatched elites");
  int rows = elites[0]->rows, cols = elites[0]->cols;
  double best = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double wsum = 0;
  for (size_t e = 0; e < scores.size(); ++e) {
    w[e] = std::exp((scores[e] - best) / temperature);
    wsum += w[e];
  }
  PlanDistribution out;
  out.mu = Mat<float>(rows, cols);
  out.sigma = Mat<float>(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double m = 0;
      for (size_t e = 0; e < elites.size(); ++e) m += w[e] * double(elites[e]->at(i, j));
      m /= wsum;
      double var = 0;
      for (size_t e = 0; e < elites.size(); ++e) {
        double dlt = double(elites[e]->at(i, j)) - m;
        var += w[e] * dlt * dlt;
      }
      out.mu.at(i, j) = float(m);
      out.sigma.at(i, j) = float(std::sqrt(var / wsum));
    }
  return out;
}

struct CemResult {
  PlanDistribution dist;
  std::vector<double> best_scores;  // best-so-far after each iteration
  bool any_finite = false;
};

// Generic CEM driver over skill sequences. `score` maps a candidate list to
// scores (candidate-index order); `seeds` contributes extra candidates each
// iteration (policy rollouts in the planner, empty elsewhere). Candidates are
// clamped to the valid skill box [-1, 1].
template <class ScoreFn, class SeedFn>
CemResult cem_optimize(PlanDistribution dist, const PlanConfig& cfg, double std_cap,
                       ScoreFn&& score, SeedFn&& seeds, Rng& rng,
                       const std::function<void(const PlanDistribution&)>& observer = {}) {
  CemResult res;
  double best_so_far = kNegInf;
  int rows = dist.rows(), cols = dist.mu.cols;
  for (int iter = 0; iter < cfg.n_cem; ++iter) {
    std::vector<Mat<float>> cands;
    cands.reserve(size_t(cfg.n_sample));
    for (int c = 0; c < cfg.n_sample; ++c) {
      Mat<float> m(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          m.at(i, j) = float(clampv(
              double(dist.mu.at(i, j)) + double(dist.sigma.at(i, j)) * rng.normal(), -1.0, 1.0));
      cands.push_back(std::move(m));
    }
    for (auto& m : seeds(rng)) cands.push_back(std::move(m));
    std::vector<double> scores = score(cands);
    if (scores.size() != cands.size()) throw UsageError("cem_optimize: scorer size mismatch");

    std::vector<int> order;
    for (int c = 0; c < int(scores.size()); ++c)
      if (scores[size_t(c)] > kNegInf) order.push_back(c);
    if (order.empty()) {
      res.best_scores.push_back(best_so_far);
      if (observer) observer(dist);
      continue;
    }
    res.any_finite = true;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[size_t(a)] != scores[size_t(b)]) return scores[size_t(a)] > scores[size_t(b)];
      return a < b;
    });
    int n_elite = std::min<int>(cfg.k, int(order.size()));
    std::vector<const Mat<float>*> elites;
    std::vector<double> elite_scores;
    for (int e = 0; e < n_elite; ++e) {
      elites.push_back(&cands[size_t(order[size_t(e)])]);
      elite_scores.push_back(scores[size_t(order[size_t(e)])]);
    }
    PlanDistribution fit = refit_elites(elites, elite_scores, cfg.temperature);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        dist.mu.at(i, j) = float(cfg.momentum * double(dist.mu.at(i, j)) +
                                 (1.0 - cfg.momentum) * double(fit.mu.at(i, j)));
        dist.sigma.at(i, j) = float(clampv(double(fit.sigma.at(i, j)), cfg.std_min, std_cap));
      }
    best_so_far = std::max(best_so_far, elite_scores[0]);
    res.best_scores.push_back(best_so_far);
    if (observer) observer(dist);
  }
  res.dist = std::move(dist);
  return res;
}

// --- planning from an observation -------------------------------------------

struct PlanResult {
  std::vector<float> skill;  // first skill of the plan, the one to execute
  PlanDistribution dist;     // final distribution, reusable as warm start
  std::vector<double> best_scores;
  bool fallback = false;  // every candidate scored -inf; skill is the policy mean
};

namespace detail {

// Imagined task-policy rollouts through the latent dynamics: `n_mean` rollouts
// follow the policy mean (all identical), the rest sample it.
template <class S>
std::vector<Mat<float>> policy_rollouts(const Agent<S>& agent, const Mat<S>& h0_row, int n_steps,
                                        int n_mean, int n_sampled, Rng& rng) {
  std::vector<Mat<float>> out;
  int d = agent.cfg.skill_dim, latent = agent.cfg.latent_dim;
  if (n_mean > 0) {
    Mat<float> seq(n_steps, d);
    Mat<S> h = h0_row;
    for (int i = 0; i < n_steps; ++i) {
      Mat<S> m = agent.task_policy_raw(h).first;
      Mat<S> z(1, d);
      for (int j = 0; j < d; ++j) {
        z.at(0, j) = S(std::tanh(double(m.at(0, j))));
        seq.at(i, j) = float(z.at(0, j));
      }
      h = agent.dynamics_raw(h, z);
    }
    for (int c = 0; c < n_mean; ++c) out.push_back(seq);
  }
  if (n_sampled > 0) {
    Mat<S> h(n_sampled, latent);
    for (int c = 0; c < n_sampled; ++c)
      std::copy(h0_row.row(0), h0_row.row(0) + latent, h.row(c));
    std::vector<Mat<float>> seqs(size_t(n_sampled), Mat<float>(n_steps, d));
    for (int i = 0; i < n_steps; ++i) {
      auto [m, ls] = agent.task_policy_raw(h);
      Mat<S> z(n_sampled, d);
      for (int c = 0; c < n_sampled; ++c)
        for (int j = 0; j < d; ++j) {
          double zj = std::tanh(double(m.at(c, j)) + std::exp(double(ls.at(c, j))) * rng.normal());
          z.at(c, j) = S(zj);
          seqs[size_t(c)].at(i, j) = float(zj);
        }
      h = agent.dynamics_raw(h, z);
    }
    for (auto& s : seqs) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

template <class S>
PlanResult plan(const Agent<S>& agent, const Mat<float>& obs_row, const PlanConfig& cfg,
                long long env_step, const PlanDistribution* prev, Rng& rng,
                bool deterministic = false) {
  cfg.validate();
  if (obs_row.rows != 1 || obs_row.cols != agent.cfg.obs_dim)
    throw UsageError("plan: expected a single observation row");
  Schedules sched = decay_schedules(env_step, cfg);
  int n_steps = sched.horizon, d = agent.cfg.skill_dim;
  Mat<S> h0 = agent.encode_raw(agent.normalize_rows(obs_row));

  PlanResult res;
  if (!cfg.use_cem) {
    auto [m, ls] = agent.task_policy_raw(h0);
    res.skill.resize(size_t(d));
    for (int j = 0; j < d; ++j) {
      double raw = deterministic ? double(m.at(0, j))
                                 : double(m.at(0, j)) + std::exp(double(ls.at(0, j))) * rng.normal();
      res.skill[size_t(j)] = float(std::tanh(raw));
    }
    return res;
  }

  // Initial distribution: mu = 0 (or the previous plan shifted one skill
  // left), sigma = 1 clamped into the annealed band.
  PlanDistribution dist;
  dist.mu = Mat<float>(n_steps, d);
  dist.sigma = Mat<float>(n_steps, d);
  float sigma0 = float(clampv(1.0, cfg.std_min, sched.std_cap));
  for (auto& v : dist.sigma.d) v = sigma0;
  if (prev != nullptr)
    for (int i = 0; i + 1 < prev->rows() && i < n_steps; ++i)
      for (int j = 0; j < d; ++j) dist.mu.at(i, j) = prev->mu.at(i + 1, j);

  auto score = [&](const std::vector<Mat<float>>& cands) {
    return estimate_returns(agent, h0, cands, cfg.gamma, cfg.value_min, cfg.value_max);
  };
  auto seeds = [&](Rng& r) {
    int n_mean = cfg.n_pi / 2;
    return detail::policy_rollouts(agent, h0, n_steps, n_mean, cfg.n_pi - n_mean, r);
  };
  CemResult cem = cem_optimize(std::move(dist), cfg, sched.std_cap, score, seeds, rng);
  res.dist = std::move(cem.dist);
  res.best_scores = std::move(cem.best_scores);

  if (cfg.n_cem > 0 && !cem.any_finite) {
    res.fallback = true;
    Mat<S> m = agent.task_policy_raw(h0).first;
    res.skill.resize(size_t(d));
    for (int j = 0; j < d; ++j) res.skill[size_t(j)] = float(std::tanh(double(m.at(0, j))));
    return res;
  }
  res.skill.resize(size_t(d));
  for (int j = 0; j < d; ++j) {
    double v = double(res.dist.mu.at(0, j));
    if (!deterministic) v += double(res.dist.sigma.at(0, j)) * rng.normal();
    res.skill[size_t(j)] = float(clampv(v, -1.0, 1.0));
  }
  return res;
}

// --- MPC execution ----------------------------------------------------------

inline Mat<float> observation_row(const EnvState& st, int obs_dim) {
  auto o = st.observation();
  if (obs_dim != int(o.size())) throw UsageError("observation_row: obs_dim mismatch");
  Mat<float> m(1, obs_dim);
  for (int j = 0; j < obs_dim; ++j) m.at(0, j) = float(o[size_t(j)]);
  return m;
}

struct SkillRunResult {
  Mat<float> actions;  // executed low-level actions, one row per env step
  double reward = 0;   // summed env reward over the executed steps
  bool done = false;
};

// Decodes a fixed skill for H env steps (fewer if the episode terminates
// mid-skill), accumulating reward. Optionally records the visited states.
template <class S>
SkillRunResult run_skill(const MazeSpec& spec, EnvState& st, const Agent<S>& agent,
                         const Mat<S>& z, std::vector<EnvState>* trace = nullptr) {
  if (st.done) throw UsageError("run_skill: episode already finished");
  int H = agent.cfg.skill_horizon, ad = agent.cfg.act_dim;
  SkillRunResult res;
  std::vector<float> acts;
  for (int t = 0; t < H; ++t) {
    Mat<S> a =
        agent.low_policy_raw(agent.normalize_rows(observation_row(st, agent.cfg.obs_dim)), z);
    Vec2 action{double(a.at(0, 0)), ad > 1 ? double(a.at(0, 1)) : 0.0};
    StepResult sr = step(st, action, spec);
    st = sr.state;
    res.reward += sr.reward;
    for (int j = 0; j < ad; ++j) acts.push_back(float(a.at(0, j)));
    if (trace) trace->push_back(st);
    if (sr.done) {
      res.done = true;
      break;
    }
  }
  int executed = int(acts.size()) / ad;
  res.actions = Mat<float>(executed, ad, std::move(acts));
  return res;
}

struct MpcResult {
  std::vector<float> skill;
  PlanDistribution dist;
  Mat<float> actions;
  double reward = 0;
  bool done = false;
  bool fallback = false;
};

// Plans once, then executes the chosen skill.
template <class S>
MpcResult act_mpc(const MazeSpec& spec, EnvState& st, const Agent<S>& agent, const PlanConfig& cfg,
                  long long env_step, const PlanDistribution* prev, Rng& rng,
                  bool deterministic = false, std::vector<EnvState>* trace = nullptr) {
  if (st.done) throw UsageError("act_mpc: episode already finished");
  PlanResult pr =
      plan(agent, observation_row(st, agent.cfg.obs_dim), cfg, env_step, prev, rng, deterministic);
  Mat<S> z(1, agent.cfg.skill_dim);
  for (int j = 0; j < agent.cfg.skill_dim; ++j) z.at(0, j) = S(pr.skill[size_t(j)]);
  SkillRunResult run = run_skill(spec, st, agent, z, trace);

  MpcResult res;
  res.skill = std::move(pr.skill);
  res.dist = std::move(pr.dist);
  res.fallback = pr.fallback;
  res.actions = std::move(run.actions);
  res.reward = run.reward;
  res.done = run.done;
  return res;
}

}  // namespace skimo
