// Phase 2: downstream learning in skill space. The agent alternates
// environment interaction (planned skills decoded by the frozen low-level
// policy) with gradient updates: the encoder/dynamics/reward/value heads
// minimize an N-step unrolled prediction loss with gradient-stopped TD
// targets, and the task policy maximizes predicted value under a KL leash to
// the pretrained skill prior, with the leash weight auto-tuned toward a
// target divergence. The skill repertoire itself (decoder-side networks) is
// never updated here.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "skimo/agent.hpp"
#include "skimo/maze.hpp"
#include "skimo/planner.hpp"
#include "skimo/replay.hpp"

namespace skimo {

struct RlConfig {
  double gamma = 0.99;
  double lambda_latent = 2.0;   // latent consistency weight
  double lambda_reward = 0.5;   // reward prediction weight
  double lambda_value = 0.1;    // value prediction weight
  double rho = 0.5;             // geometric weight on unrolled loss steps
  double model_lr = 1e-3;       // encoder/dynamics/reward/value
  double actor_lr = 1e-3;       // task policy
  double alpha_init = 1.0;      // KL leash weight
  double alpha_lr = 3e-4;       // leash tuning rate (0 freezes alpha)
  double target_divergence = 3.0;
  // Known bounds on the discounted return, when the task has them. Value
  // estimates are clamped into this range wherever they steer learning (TD
  // targets and the actor objective), which stops out-of-distribution value
  // extrapolation from feeding back into the policy. Defaults disable it.
  double value_min = -std::numeric_limits<double>::infinity();
  double value_max = std::numeric_limits<double>::infinity();
  long long warmup_steps = 50000;  // env steps acted from the prior, no updates
  int env_steps_per_update = 500;
  int minibatches_per_update = 10;
  int batch = 128;
  int n_unroll = 10;  // N: skill transitions per sampled window
  double tau = 0.01;
  int target_update_freq = 2;  // soft-update period, in minibatches
  long long total_env_steps = 0;
  long long buffer_capacity = 1000000;
  bool replan_every_step = false;  // re-plan each env step instead of each
                                   // skill boundary (experimental)
  bool freeze_model = false;       // keep encoder/dynamics at their pretrained
                                   // values; only reward/value/policy learn
  long long eval_every = 0;        // env-step period for in-loop evaluation
  int eval_episodes = 20;
  double stop_at_success = -1;  // end training once in-loop eval success rate
                                // reaches this (< 0: never)

  void validate() const {
    if (gamma < 0 || gamma > 1) throw UsageError("rl: gamma must be in [0, 1]");
    if (lambda_latent < 0 || lambda_reward < 0 || lambda_value < 0)
      throw UsageError("rl: loss weights must be non-negative");
    if (rho < 0 || rho > 1) throw UsageError("rl: rho must be in [0, 1]");
    if (model_lr < 0 || actor_lr < 0 || alpha_lr < 0)
      throw UsageError("rl: learning rates must be non-negative");
    if (alpha_init <= 0) throw UsageError("rl: alpha_init must be positive");
    if (target_divergence < 0) throw UsageError("rl: target_divergence must be non-negative");
    if (warmup_steps < 0 || total_env_steps < 0) throw UsageError("rl: step counts negative");
    if (env_steps_per_update <= 0 || minibatches_per_update <= 0 || batch <= 0 || n_unroll <= 0)
      throw UsageError("rl: update cadence fields must be positive");
    if (tau < 0 || tau > 1) throw UsageError("rl: tau must be in [0, 1]");
    if (target_update_freq <= 0) throw UsageError("rl: target_update_freq must be positive");
    if (buffer_capacity <= 0) throw UsageError("rl: buffer_capacity must be positive");
    if (eval_every < 0 || eval_episodes < 0) throw UsageError("rl: eval fields negative");
    if (std::isnan(value_min) || std::isnan(value_max) || value_min > value_max)
      throw UsageError("rl: need value_min <= value_max");
  }
};

inline bool at_goal(const MazeSpec& spec, const Vec2& p) {
  double dx = p[0] - spec.goal[0], dy = p[1] - spec.goal[1];
  return std::sqrt(dx * dx + dy * dy) <= spec.goal_radius;
}

// --- batch plumbing ---------------------------------------------------------

// Rows of one unroll step i gathered across the batch.
inline Mat<float> rl_step_rows(const Mat<float>& m, int batch, int n, int i) {
  Mat<float> out(batch, m.cols);
  for (int b = 0; b < batch; ++b)
    std::memcpy(out.row(b), m.row(b * n + i), sizeof(float) * size_t(m.cols));
  return out;
}

template <class S>
Mat<S> cast_rows(const Mat<float>& m) {
  Mat<S> out(m.rows, m.cols);
  for (size_t k = 0; k < m.d.size(); ++k) out.d[k] = S(m.d[k]);
  return out;
}

template <class S>
void check_rl_batch(const Agent<S>& agent, const RlWindowBatch& wb) {
  if (wb.batch <= 0 || wb.n <= 0) throw UsageError("rl: empty window batch");
  if (wb.obs_dim != agent.cfg.obs_dim || wb.skill_dim != agent.cfg.skill_dim)
    throw UsageError("rl: window batch dims do not match agent config");
}

// --- model/critic objective -------------------------------------------------

// Unrolls predicted latents through the dynamics head from the encoded first
// observation and accumulates, with geometric step weights:
//   latent consistency to the target-encoded next observation,
//   reward prediction against the stored skill-step return, and
//   value prediction against the gradient-stopped TD target
//     y = r + gamma * Q_target(h_next, tanh(policy_mean(h_next)))
// where h_next is the predicted next latent and terminal transitions drop the
// bootstrap. Targets are clamped into [value_min, value_max]. Gradients reach the encoder, dynamics, reward, and value heads;
// the policy only shapes the constant target.
template <class S>
struct DownstreamParts {
  Tensor<S> total;
  double consistency = 0, reward = 0, value = 0;  // weighted contributions
};

template <class S>
DownstreamParts<S> downstream_model_loss(const Agent<S>& agent, const RlWindowBatch& wb,
                                         const RlConfig& cfg) {
  check_rl_batch(agent, wb);
  int B = wb.batch, N = wb.n;
  S invB = S(1.0 / double(B));

  DownstreamParts<S> parts;
  Tensor<S> total = Tensor<S>::scalar(S(0));
  Tensor<S> h = agent.encode(agent.obs_tensor(rl_step_rows(wb.s, B, N, 0)));
  double w = 1.0;
  for (int i = 0; i < N; ++i) {
    Tensor<S> z = Tensor<S>::from_mat(cast_rows<S>(rl_step_rows(wb.z, B, N, i)));
    Mat<float> r_i = rl_step_rows(wb.r, B, N, i);

    Tensor<S> h_next = agent.dynamics(h, z);
    Tensor<S> target_h = agent.target_encode(agent.obs_tensor(rl_step_rows(wb.s_next, B, N, i)));
    Tensor<S> cons = mul_scalar(sum_sq_diff(h_next, target_h), invB);

    Tensor<S> rew = mul_scalar(sum_sq_diff(agent.reward(h, z), Tensor<S>::from_mat(cast_rows<S>(r_i))), invB);

    // TD target from the numeric next latent; constant by construction.
    Mat<S> y(B, 1);
    {
      NoGradGuard ng;
      Mat<S> hv = h_next.to_mat();
      Mat<S> pm = agent.task_policy_raw(hv).first;
      for (auto& v : pm.d) v = S(std::tanh(double(v)));
      Mat<S> qn = agent.target_value_raw(hv, pm);
      for (int b = 0; b < B; ++b) {
        double boot = wb.done_at(b, i) ? 0.0 : cfg.gamma * double(qn.at(b, 0));
        y.at(b, 0) = S(std::clamp(double(r_i.at(b, 0)) + boot, cfg.value_min, cfg.value_max));
      }
    }
    Tensor<S> val = mul_scalar(sum_sq_diff(agent.value(h, z), Tensor<S>::from_mat(y)), invB);

    Tensor<S> step = add(add(mul_scalar(cons, S(cfg.lambda_latent)),
                             mul_scalar(rew, S(cfg.lambda_reward))),
                         mul_scalar(val, S(cfg.lambda_value)));
    total = add(total, mul_scalar(step, S(w)));
    parts.consistency += w * cfg.lambda_latent * double(cons.item());
    parts.reward += w * cfg.lambda_reward * double(rew.item());
    parts.value += w * cfg.lambda_value * double(val.item());

    h = h_next;
    w *= cfg.rho;
  }
  parts.total = total;
  return parts;
}

// --- actor objective --------------------------------------------------------

// Evaluates the task policy at imagined latents along the stored-skill unroll
// (entering the graph as constants), maximizing the frozen value head's score
// of a reparameterized policy sample while penalizing divergence from the
// pretrained prior at the corresponding true states. Only task-policy
// parameters receive gradients.
template <class S>
struct PolicyParts {
  Tensor<S> total;
  double q_term = 0, kl_term = 0;  // weighted contributions
  double mean_kl = 0;              // unweighted step-mean divergence
};

template <class S>
PolicyParts<S> policy_loss(const Agent<S>& agent, const RlWindowBatch& wb, const RlConfig& cfg,
                           double alpha, Rng& rng) {
  check_rl_batch(agent, wb);
  int B = wb.batch, N = wb.n;

  std::vector<Mat<S>> hs;
  hs.reserve(size_t(N));
  {
    NoGradGuard ng;
    Mat<S> h = agent.encode_raw(agent.normalize_rows(rl_step_rows(wb.s, B, N, 0)));
    for (int i = 0; i < N; ++i) {
      hs.push_back(h);
      if (i + 1 < N) h = agent.dynamics_raw(h, cast_rows<S>(rl_step_rows(wb.z, B, N, i)));
    }
  }

  PolicyParts<S> parts;
  Tensor<S> total = Tensor<S>::scalar(S(0));
  double w = 1.0, kl_sum = 0.0;
  for (int i = 0; i < N; ++i) {
    Tensor<S> h_const = Tensor<S>::from_mat(hs[size_t(i)]);
    DiagGaussian<S> pol = agent.task_policy(h_const);
    Tensor<S> z_pi = tanh_op(pol.sample(rng));
    Tensor<S> q = mean(clamp_op(agent.value(h_const, z_pi, /*frozen=*/true), S(cfg.value_min),
                                S(cfg.value_max)));

    Mat<S> h_true;
    {
      NoGradGuard ng;
      h_true = agent.encode_raw(agent.normalize_rows(rl_step_rows(wb.s, B, N, i)));
    }
    DiagGaussian<S> prior = agent.skill_prior(Tensor<S>::from_mat(h_true), /*frozen=*/true).detached();
    Tensor<S> kl = pol.kl_to(prior);

    Tensor<S> step = add(neg(q), mul_scalar(kl, S(alpha)));
    total = add(total, mul_scalar(step, S(w)));
    double klv = double(kl.item());
    parts.q_term += w * double(q.item());
    parts.kl_term += w * alpha * klv;
    kl_sum += klv;
    w *= cfg.rho;
  }
  parts.mean_kl = kl_sum / double(N);
  parts.total = total;
  return parts;
}

// Dual-style leash tuning: log alpha moves proportionally to the divergence
// surplus; a zero tuning rate (or exactly-met target) leaves alpha untouched.
inline double tune_alpha(double current_kl, const RlConfig& cfg, double alpha) {
  if (!(alpha > 0)) throw UsageError("tune_alpha: alpha must be positive");
  double delta = cfg.alpha_lr * (current_kl - cfg.target_divergence);
  if (delta == 0) return alpha;
  return std::clamp(std::exp(std::log(alpha) + delta), 1e-6, 1e2);
}

// --- evaluation -------------------------------------------------------------

inline constexpr long long kFullyDecayedStep = 1LL << 40;

struct EvalStats {
  int episodes = 0;
  double mean_return = 0, success_rate = 0, mean_length = 0;
  std::vector<double> returns;
  std::vector<int> lengths;
  std::vector<uint8_t> successes;
  std::vector<std::vector<Vec2>> trajectories;  // positions incl. start
};

// Rolls out full episodes with fully decayed planner schedules. In
// deterministic mode the plan mean is executed; either way the run is a pure
// function of the seed and never mutates the agent.
template <class S>
EvalStats evaluate(const MazeSpec& spec, const Agent<S>& agent, const PlanConfig& plan_cfg,
                   int episodes, uint64_t seed, bool deterministic = true) {
  EvalStats out;
  out.episodes = episodes;
  if (episodes <= 0) return out;
  Rng root(seed);
  double ret_sum = 0, len_sum = 0;
  int succ_sum = 0;
  for (int e = 0; e < episodes; ++e) {
    Rng ep_rng = root.split(uint64_t(e));
    EnvState st = reset(spec, ep_rng);
    std::vector<Vec2> traj{st.position};
    std::vector<EnvState> trace;
    double ep_return = 0;
    PlanDistribution prev;
    bool have_prev = false;
    while (!st.done) {
      trace.clear();
      MpcResult mr = act_mpc(spec, st, agent, plan_cfg, kFullyDecayedStep,
                             have_prev ? &prev : nullptr, ep_rng, deterministic, &trace);
      ep_return += mr.reward;
      prev = std::move(mr.dist);
      have_prev = true;
      for (const auto& es : trace) traj.push_back(es.position);
    }
    bool success = ep_return >= kSuccessReward;
    ret_sum += ep_return;
    len_sum += st.step_count;
    succ_sum += success ? 1 : 0;
    out.returns.push_back(ep_return);
    out.lengths.push_back(st.step_count);
    out.successes.push_back(success ? 1 : 0);
    out.trajectories.push_back(std::move(traj));
  }
  out.mean_return = ret_sum / episodes;
  out.success_rate = double(succ_sum) / episodes;
  out.mean_length = len_sum / episodes;
  return out;
}

// --- training loop ----------------------------------------------------------

struct TrainRow {
  long long env_step = 0;
  long long episode = 0;
  double episode_return = 0;
  int success = 0;
  int length = 0;
  double l_model = 0, l_consistency = 0, l_reward = 0, l_value = 0;
  double l_policy = 0, alpha = 0, kl = 0;
};

struct EvalPoint {
  long long env_step = 0;
  double success_rate = 0, mean_return = 0;
};

struct TrainResult {
  std::vector<TrainRow> rows;    // one per finished episode
  std::vector<EvalPoint> evals;  // in-loop evaluations, if enabled
  long long env_steps = 0;
  long long episodes = 0;
  long long updates = 0;  // minibatches applied
  double alpha = 0;
  bool stopped_early = false;
};

// Interleaved collect/update loop on a pretrained agent. Reward, value, and
// task-policy heads restart from scratch (the policy then copies the prior),
// while encoder and dynamics finetune from their pretrained values; the
// decoder-side networks stay fixed throughout. Episodes are driven skill by
// skill: prior samples during warm-up, planned skills afterwards. Every
// env_steps_per_update collected steps, minibatches_per_update model/critic
// and actor steps are applied, with periodic target blending.
template <class S>
TrainResult train_downstream(const MazeSpec& spec, Agent<S>& agent, const RlConfig& cfg,
                             const PlanConfig& plan_cfg, uint64_t seed,
                             const std::string& csv_path = "",
                             const std::string& crash_dump_path = "") {
  cfg.validate();
  plan_cfg.validate();
  if (agent.cfg.obs_dim != 4) throw UsageError("train_downstream: agent obs_dim must match maze");
  TrainResult result;
  result.alpha = cfg.alpha_init;
  if (cfg.total_env_steps == 0) return result;

  // Phase-2 head reset: fresh reward/value/policy, policy warm-started from
  // the prior, value target synced to the fresh heads. Encoder/dynamics
  // targets keep their pretrained state.
  agent.init_phi(fnv1a64("downstream-phi") ^ seed);
  agent.init_task_policy_from_prior();
  agent.reset_target_group("phi.");

  std::vector<std::string> model_names;
  if (!cfg.freeze_model) model_names = agent.psi_names();
  for (const auto& n : agent.ps.names_with_prefix("phi.r.")) model_names.push_back(n);
  for (const auto& n : agent.ps.names_with_prefix("phi.q.")) model_names.push_back(n);
  auto actor_names = agent.ps.names_with_prefix("phi.pi.");
  Adam<S> model_opt(model_names, S(cfg.model_lr));
  Adam<S> actor_opt(actor_names, S(cfg.actor_lr));
  std::vector<std::string> target_names;
  if (!cfg.freeze_model) target_names = agent.targets.names_with_prefix("psi.");
  for (const auto& n : agent.targets.names_with_prefix("phi.")) target_names.push_back(n);

  ReplayBuffer buffer(size_t(cfg.buffer_capacity), agent.cfg.obs_dim, agent.cfg.skill_dim);

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw UsageError("train_downstream: cannot open csv path " + csv_path);
    csv << "env_step,episode,episode_return,success,episode_len,l_model,l_consistency,l_reward,"
           "l_value,l_policy,alpha,kl\n";
  }

  Rng root(seed);
  Rng reset_rng = root.split(fnv1a64("reset"));
  Rng act_rng = root.split(fnv1a64("act"));
  Rng update_rng = root.split(fnv1a64("update"));

  double alpha = cfg.alpha_init;
  long long env_step = 0, update_count = 0;
  long long next_update_at = cfg.warmup_steps + cfg.env_steps_per_update;
  long long next_eval_at = cfg.eval_every > 0 ? cfg.eval_every : -1;
  TrainRow last_update;  // carries loss diagnostics into episode rows
  last_update.alpha = alpha;

  auto dump_and_throw = [&](const std::string& what) {
    if (!crash_dump_path.empty()) agent.save(crash_dump_path);
    std::ostringstream oss;
    oss << "train_downstream: non-finite " << what << " at env_step " << env_step << " (update "
        << update_count << ")";
    throw NumericError(oss.str());
  };

  auto run_updates = [&] {
    if (buffer.eligible_windows(cfg.n_unroll) <= 0) return;
    for (int m = 0; m < cfg.minibatches_per_update; ++m) {
      RlWindowBatch wb = buffer.sample(cfg.batch, cfg.n_unroll, update_rng);

      agent.ps.zero_grads();
      auto model = downstream_model_loss(agent, wb, cfg);
      double l_model = double(model.total.item());
      if (!std::isfinite(l_model)) dump_and_throw("model loss");
      model.total.backward();
      model_opt.step(agent.ps);

      agent.ps.zero_grads();
      auto pol = policy_loss(agent, wb, cfg, alpha, update_rng);
      double l_policy = double(pol.total.item());
      if (!std::isfinite(l_policy)) dump_and_throw("policy loss");
      pol.total.backward();
      actor_opt.step(agent.ps);
      alpha = tune_alpha(pol.mean_kl, cfg, alpha);

      ++update_count;
      if (update_count % cfg.target_update_freq == 0)
        soft_update(agent.ps, agent.targets, target_names, S(cfg.tau));

      last_update.l_model = l_model;
      last_update.l_consistency = model.consistency;
      last_update.l_reward = model.reward;
      last_update.l_value = model.value;
      last_update.l_policy = l_policy;
      last_update.alpha = alpha;
      last_update.kl = pol.mean_kl;
    }
  };

  bool stop = false;
  while (!stop && env_step < cfg.total_env_steps) {
    EnvState st = reset(spec, reset_rng);
    if (agent.cfg.normalize_obs) agent.norm.update(st.observation().data());
    double ep_return = 0;
    long long episode_id = result.episodes;
    int trans_index = 0;
    PlanDistribution prev;
    bool have_prev = false;
    std::vector<EnvState> trace;

    while (!st.done && env_step < cfg.total_env_steps) {
      Mat<float> obs = observation_row(st, agent.cfg.obs_dim);
      Mat<S> z(1, agent.cfg.skill_dim);
      if (env_step < cfg.warmup_steps) {
        Mat<S> h = agent.encode_raw(agent.normalize_rows(obs));
        auto pr = agent.prior_raw(h);
        for (int j = 0; j < agent.cfg.skill_dim; ++j) {
          double m = double(pr.first.at(0, j)), ls = double(pr.second.at(0, j));
          z.at(0, j) = S(std::tanh(m + std::exp(ls) * act_rng.normal()));
        }
        have_prev = false;
      } else {
        PlanResult pl = plan(agent, obs, plan_cfg, env_step, have_prev ? &prev : nullptr, act_rng,
                             /*deterministic=*/false);
        for (int j = 0; j < agent.cfg.skill_dim; ++j) z.at(0, j) = S(pl.skill[size_t(j)]);
        prev = std::move(pl.dist);
        have_prev = true;
      }

      trace.clear();
      SkillRunResult run;
      if (cfg.replan_every_step && env_step >= cfg.warmup_steps) {
        // Experimental: re-plan after every env step but keep skill-boundary
        // bookkeeping — the transition stores the skill chosen at the
        // boundary, later plans only steer the executed actions.
        std::vector<float> acts;
        Mat<S> z_cur = z;
        for (int t = 0; t < agent.cfg.skill_horizon && !st.done; ++t) {
          Mat<S> a = agent.low_policy_raw(
              agent.normalize_rows(observation_row(st, agent.cfg.obs_dim)), z_cur);
          StepResult sr = step(
              st, Vec2{double(a.at(0, 0)), agent.cfg.act_dim > 1 ? double(a.at(0, 1)) : 0.0},
              spec);
          st = sr.state;
          run.reward += sr.reward;
          for (int j = 0; j < agent.cfg.act_dim; ++j) acts.push_back(float(a.at(0, j)));
          trace.push_back(st);
          run.done = sr.done;
          if (sr.done || t + 1 >= agent.cfg.skill_horizon) break;
          PlanResult pl = plan(agent, observation_row(st, agent.cfg.obs_dim), plan_cfg,
                               env_step + t + 1, &prev, act_rng, false);
          for (int j = 0; j < agent.cfg.skill_dim; ++j) z_cur.at(0, j) = S(pl.skill[size_t(j)]);
          prev = std::move(pl.dist);
        }
        int executed = int(acts.size()) / agent.cfg.act_dim;
        run.actions = Mat<float>(executed, agent.cfg.act_dim, std::move(acts));
      } else {
        run = run_skill(spec, st, agent, z, &trace);
      }
      if (agent.cfg.normalize_obs)
        for (const auto& es : trace) agent.norm.update(es.observation().data());

      SkillTransition tr;
      tr.s.assign(obs.d.begin(), obs.d.end());
      tr.z.resize(size_t(agent.cfg.skill_dim));
      for (int j = 0; j < agent.cfg.skill_dim; ++j) tr.z[size_t(j)] = float(z.at(0, j));
      Mat<float> obs_next = observation_row(st, agent.cfg.obs_dim);
      tr.s_next.assign(obs_next.d.begin(), obs_next.d.end());
      tr.r = run.reward;
      tr.done = at_goal(spec, st.position);
      tr.episode_id = episode_id;
      tr.index = trans_index++;
      buffer.push(std::move(tr));

      env_step += run.actions.rows;
      ep_return += run.reward;

      while (env_step >= next_update_at) {
        run_updates();
        next_update_at += cfg.env_steps_per_update;
      }
    }

    result.env_steps = env_step;
    ++result.episodes;
    if (st.done) {
      TrainRow row = last_update;
      row.env_step = env_step;
      row.episode = episode_id;
      row.episode_return = ep_return;
      row.success = ep_return >= kSuccessReward ? 1 : 0;
      row.length = st.step_count;
      result.rows.push_back(row);
      if (csv.is_open()) {
        std::ostringstream line;
        line.precision(9);
        line << row.env_step << ',' << row.episode << ',' << row.episode_return << ','
             << row.success << ',' << row.length << ',' << row.l_model << ','
             << row.l_consistency << ',' << row.l_reward << ',' << row.l_value << ','
             << row.l_policy << ',' << row.alpha << ',' << row.kl;
        csv << line.str() << '\n';
        csv.flush();
      }
    }

    if (next_eval_at > 0 && env_step >= next_eval_at) {
      EvalStats ev = evaluate(spec, agent, plan_cfg, cfg.eval_episodes,
                              seed ^ fnv1a64("inloop-eval") ^ uint64_t(env_step), true);
      result.evals.push_back({env_step, ev.success_rate, ev.mean_return});
      while (next_eval_at <= env_step) next_eval_at += cfg.eval_every;
      if (cfg.stop_at_success >= 0 && ev.success_rate >= cfg.stop_at_success) {
        result.stopped_early = true;
        stop = true;
      }
    }
  }

  result.updates = update_count;
  result.alpha = alpha;
  return result;
}

}  // namespace skimo
