// Unified run configuration: one structured text file covering the maze,
// network sizes, pretraining, planning, downstream learning, data
// generation, the flat baseline, and ablation switches. Defaults are the
// full-scale maze hyperparameters; a config file overrides them and CLI
// flags override the file. Unknown sections or keys are rejected so typos
// cannot silently fall back to defaults.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "skimo/agent.hpp"
#include "skimo/datagen.hpp"
#include "skimo/flatmodel.hpp"
#include "skimo/planner.hpp"
#include "skimo/pretrain.hpp"
#include "skimo/rl.hpp"

namespace skimo {

struct RunConfig {
  // [run]
  std::string maze_path;
  std::string out_dir = "runs";
  uint64_t seed = 0;

  // [agent] / [pretrain] / [plan] / [rl] / [datagen] / [flat]
  AgentConfig agent;
  PretrainConfig pretrain;
  PlanConfig plan;
  RlConfig rl;
  DatagenConfig datagen;
  int n_traj = 3000;
  FlatConfig flat;
  FlatTrainConfig flat_train;

  // [ablation]
  bool no_cem = false;
  bool no_joint_training = false;
  bool flat_dynamics = false;  // single-step skills: skill_horizon forced to 1
  bool freeze_model = false;

  // Push the ablation switches and shared fields into the sub-configs they
  // control. Called by validate(), so configs handed to commands are coherent.
  void reconcile() {
    pretrain.skill_horizon = agent.skill_horizon;
    flat.obs_dim = agent.obs_dim;
    flat.act_dim = agent.act_dim;
    if (no_cem) plan.use_cem = false;
    if (no_joint_training) pretrain.joint_training = false;
    if (freeze_model) rl.freeze_model = true;
    if (flat_dynamics) {
      agent.skill_horizon = 1;
      pretrain.skill_horizon = 1;
    }
  }

  void validate() {
    reconcile();
    if (n_traj < 1) throw UsageError("config: datagen.n_traj must be >= 1");
    pretrain.validate();
    plan.validate();
    rl.validate();
    flat_train.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: " + key + " expects true/false, got '" + v + "'");
}

template <class T>
T parse_num(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  T out;
  if (!(ss >> out)) throw UsageError("config: " + key + " has a malformed value '" + v + "'");
  std::string rest;
  std::getline(ss, rest);
  if (!trim(rest).empty())
    throw UsageError("config: " + key + " has trailing junk in '" + v + "'");
  return out;
}

}  // namespace detail

// Apply one `section.key = value` assignment; throws on unknown keys.
inline void config_set(RunConfig& c, const std::string& section, const std::string& key,
                       const std::string& value) {
  std::string full = section + "." + key;
  auto num_i = [&] { return detail::parse_num<int>(value, full); };
  auto num_ll = [&] { return detail::parse_num<long long>(value, full); };
  auto num_u64 = [&] { return detail::parse_num<uint64_t>(value, full); };
  auto num_d = [&] { return detail::parse_num<double>(value, full); };
  auto flag = [&] { return detail::parse_bool(value, full); };

  if (section == "run") {
    if (key == "maze") c.maze_path = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "seed") c.seed = num_u64();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "agent") {
    if (key == "latent_dim") c.agent.latent_dim = num_i();
    else if (key == "skill_dim") c.agent.skill_dim = num_i();
    else if (key == "hidden") c.agent.hidden = num_i();
    else if (key == "n_hidden") c.agent.n_hidden = num_i();
    else if (key == "skill_horizon") c.agent.skill_horizon = num_i();
    else if (key == "init_scale") c.agent.init_scale = num_d();
    else if (key == "normalize_obs") c.agent.normalize_obs = flag();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "pretrain") {
    if (key == "n_unroll") c.pretrain.n_unroll = num_i();
    else if (key == "batch") c.pretrain.batch = num_i();
    else if (key == "lr") c.pretrain.lr = num_d();
    else if (key == "beta") c.pretrain.beta = num_d();
    else if (key == "lambda_obs") c.pretrain.lambda_obs = num_d();
    else if (key == "lambda_latent") c.pretrain.lambda_latent = num_d();
    else if (key == "lambda_bc") c.pretrain.lambda_bc = num_d();
    else if (key == "lambda_prior") c.pretrain.lambda_prior = num_d();
    else if (key == "rho") c.pretrain.rho = num_d();
    else if (key == "tau") c.pretrain.tau = num_d();
    else if (key == "iterations") c.pretrain.iterations = num_i();
    else if (key == "minibatches_per_update") c.pretrain.minibatches_per_update = num_i();
    else if (key == "log_every") c.pretrain.log_every = num_i();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "plan") {
    if (key == "horizon") c.plan.horizon = num_i();
    else if (key == "n_cem") c.plan.n_cem = num_i();
    else if (key == "n_sample") c.plan.n_sample = num_i();
    else if (key == "n_pi") c.plan.n_pi = num_i();
    else if (key == "k") c.plan.k = num_i();
    else if (key == "momentum") c.plan.momentum = num_d();
    else if (key == "temperature") c.plan.temperature = num_d();
    else if (key == "std_max") c.plan.std_max = num_d();
    else if (key == "std_min") c.plan.std_min = num_d();
    else if (key == "std_decay_steps") c.plan.std_decay_steps = num_ll();
    else if (key == "horizon_decay_steps") c.plan.horizon_decay_steps = num_ll();
    else if (key == "gamma") c.plan.gamma = num_d();
    else if (key == "value_min") c.plan.value_min = num_d();
    else if (key == "value_max") c.plan.value_max = num_d();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "rl") {
    if (key == "gamma") c.rl.gamma = num_d();
    else if (key == "lambda_latent") c.rl.lambda_latent = num_d();
    else if (key == "lambda_reward") c.rl.lambda_reward = num_d();
    else if (key == "lambda_value") c.rl.lambda_value = num_d();
    else if (key == "rho") c.rl.rho = num_d();
    else if (key == "model_lr") c.rl.model_lr = num_d();
    else if (key == "actor_lr") c.rl.actor_lr = num_d();
    else if (key == "alpha_init") c.rl.alpha_init = num_d();
    else if (key == "alpha_lr") c.rl.alpha_lr = num_d();
    else if (key == "target_divergence") c.rl.target_divergence = num_d();
    else if (key == "warmup_steps") c.rl.warmup_steps = num_ll();
    else if (key == "env_steps_per_update") c.rl.env_steps_per_update = num_ll();
    else if (key == "minibatches_per_update") c.rl.minibatches_per_update = num_i();
    else if (key == "batch") c.rl.batch = num_i();
    else if (key == "n_unroll") c.rl.n_unroll = num_i();
    else if (key == "tau") c.rl.tau = num_d();
    else if (key == "target_update_freq") c.rl.target_update_freq = num_i();
    else if (key == "total_env_steps") c.rl.total_env_steps = num_ll();
    else if (key == "buffer_capacity") c.rl.buffer_capacity = num_ll();
    else if (key == "replan_every_step") c.rl.replan_every_step = flag();
    else if (key == "eval_every") c.rl.eval_every = num_ll();
    else if (key == "eval_episodes") c.rl.eval_episodes = num_i();
    else if (key == "stop_at_success") c.rl.stop_at_success = num_d();
    else if (key == "value_min") c.rl.value_min = num_d();
    else if (key == "value_max") c.rl.value_max = num_d();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "datagen") {
    if (key == "n_traj") c.n_traj = num_i();
    else if (key == "k_p") c.datagen.k_p = num_d();
    else if (key == "sigma_a") c.datagen.sigma_a = num_d();
    else if (key == "arrival_radius") c.datagen.arrival_radius = num_d();
    else if (key == "waypoint_radius") c.datagen.waypoint_radius = num_d();
    else if (key == "min_len") c.datagen.min_len = num_i();
    else if (key == "tour_min_steps") c.datagen.tour_min_steps = num_i();
    else if (key == "max_leg_steps_slack") c.datagen.max_leg_steps_slack = num_i();
    else if (key == "max_attempts_per_traj") c.datagen.max_attempts_per_traj = num_i();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "flat") {
    if (key == "latent_dim") c.flat.latent_dim = num_i();
    else if (key == "hidden") c.flat.hidden = num_i();
    else if (key == "n_hidden") c.flat.n_hidden = num_i();
    else if (key == "normalize_obs") c.flat.normalize_obs = flag();
    else if (key == "n_unroll") c.flat_train.n_unroll = num_i();
    else if (key == "batch") c.flat_train.batch = num_i();
    else if (key == "lr") c.flat_train.lr = num_d();
    else if (key == "lambda_obs") c.flat_train.lambda_obs = num_d();
    else if (key == "lambda_latent") c.flat_train.lambda_latent = num_d();
    else if (key == "rho") c.flat_train.rho = num_d();
    else if (key == "tau") c.flat_train.tau = num_d();
    else if (key == "iterations") c.flat_train.iterations = num_i();
    else if (key == "log_every") c.flat_train.log_every = num_i();
    else throw UsageError("config: unknown key " + full);
  } else if (section == "ablation") {
    if (key == "no_cem") c.no_cem = flag();
    else if (key == "no_joint_training") c.no_joint_training = flag();
    else if (key == "flat_dynamics") c.flat_dynamics = flag();
    else if (key == "freeze_model") c.freeze_model = flag();
    else throw UsageError("config: unknown key " + full);
  } else {
    throw UsageError("config: unknown section [" + section + "]");
  }
}

// Parse `[section]` / `key = value` text with '#' or ';' comment lines,
// overriding the fields of `base`.
inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "<stream>",
                                  RunConfig base = {}) {
  RunConfig c = std::move(base);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw UsageError("config: malformed section header at " + origin + ":" +
                         std::to_string(lineno));
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: expected key = value at " + origin + ":" +
                       std::to_string(lineno));
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (section.empty())
      throw UsageError("config: key '" + key + "' appears before any [section] at " + origin +
                       ":" + std::to_string(lineno));
    if (key.empty() || value.empty())
      throw UsageError("config: empty key or value at " + origin + ":" + std::to_string(lineno));
    config_set(c, section, key, value);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  return parse_run_config(in, path);
}

// The effective configuration, printable back as a parseable file; embedded
// in run manifests so a run can be reproduced from its artifacts alone.
inline std::string render_run_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "[run]\n";
  o << "maze = " << c.maze_path << "\n";
  o << "out_dir = " << c.out_dir << "\n";
  o << "seed = " << c.seed << "\n";
  o << "\n[agent]\n";
  o << "latent_dim = " << c.agent.latent_dim << "\n";
  o << "skill_dim = " << c.agent.skill_dim << "\n";
  o << "hidden = " << c.agent.hidden << "\n";
  o << "n_hidden = " << c.agent.n_hidden << "\n";
  o << "skill_horizon = " << c.agent.skill_horizon << "\n";
  o << "init_scale = " << c.agent.init_scale << "\n";
  o << "normalize_obs = " << (c.agent.normalize_obs ? "true" : "false") << "\n";
  o << "\n[pretrain]\n";
  o << "n_unroll = " << c.pretrain.n_unroll << "\n";
  o << "batch = " << c.pretrain.batch << "\n";
  o << "lr = " << c.pretrain.lr << "\n";
  o << "beta = " << c.pretrain.beta << "\n";
  o << "lambda_obs = " << c.pretrain.lambda_obs << "\n";
  o << "lambda_latent = " << c.pretrain.lambda_latent << "\n";
  o << "lambda_bc = " << c.pretrain.lambda_bc << "\n";
  o << "lambda_prior = " << c.pretrain.lambda_prior << "\n";
  o << "rho = " << c.pretrain.rho << "\n";
  o << "tau = " << c.pretrain.tau << "\n";
  o << "iterations = " << c.pretrain.iterations << "\n";
  o << "minibatches_per_update = " << c.pretrain.minibatches_per_update << "\n";
  o << "log_every = " << c.pretrain.log_every << "\n";
  o << "\n[plan]\n";
  o << "horizon = " << c.plan.horizon << "\n";
  o << "n_cem = " << c.plan.n_cem << "\n";
  o << "n_sample = " << c.plan.n_sample << "\n";
  o << "n_pi = " << c.plan.n_pi << "\n";
  o << "k = " << c.plan.k << "\n";
  o << "momentum = " << c.plan.momentum << "\n";
  o << "temperature = " << c.plan.temperature << "\n";
  o << "std_max = " << c.plan.std_max << "\n";
  o << "std_min = " << c.plan.std_min << "\n";
  o << "std_decay_steps = " << c.plan.std_decay_steps << "\n";
  o << "horizon_decay_steps = " << c.plan.horizon_decay_steps << "\n";
  o << "gamma = " << c.plan.gamma << "\n";
  if (std::isfinite(c.plan.value_min)) o << "value_min = " << c.plan.value_min << "\n";
  if (std::isfinite(c.plan.value_max)) o << "value_max = " << c.plan.value_max << "\n";
  o << "\n[rl]\n";
  o << "gamma = " << c.rl.gamma << "\n";
  o << "lambda_latent = " << c.rl.lambda_latent << "\n";
  o << "lambda_reward = " << c.rl.lambda_reward << "\n";
  o << "lambda_value = " << c.rl.lambda_value << "\n";
  o << "rho = " << c.rl.rho << "\n";
  o << "model_lr = " << c.rl.model_lr << "\n";
  o << "actor_lr = " << c.rl.actor_lr << "\n";
  o << "alpha_init = " << c.rl.alpha_init << "\n";
  o << "alpha_lr = " << c.rl.alpha_lr << "\n";
  o << "target_divergence = " << c.rl.target_divergence << "\n";
  o << "warmup_steps = " << c.rl.warmup_steps << "\n";
  o << "env_steps_per_update = " << c.rl.env_steps_per_update << "\n";
  o << "minibatches_per_update = " << c.rl.minibatches_per_update << "\n";
  o << "batch = " << c.rl.batch << "\n";
  o << "n_unroll = " << c.rl.n_unroll << "\n";
  o << "tau = " << c.rl.tau << "\n";
  o << "target_update_freq = " << c.rl.target_update_freq << "\n";
  o << "total_env_steps = " << c.rl.total_env_steps << "\n";
  o << "buffer_capacity = " << c.rl.buffer_capacity << "\n";
  o << "replan_every_step = " << (c.rl.replan_every_step ? "true" : "false") << "\n";
  o << "eval_every = " << c.rl.eval_every << "\n";
  o << "eval_episodes = " << c.rl.eval_episodes << "\n";
  o << "stop_at_success = " << c.rl.stop_at_success << "\n";
  if (std::isfinite(c.rl.value_min)) o << "value_min = " << c.rl.value_min << "\n";
  if (std::isfinite(c.rl.value_max)) o << "value_max = " << c.rl.value_max << "\n";
  o << "\n[datagen]\n";
  o << "n_traj = " << c.n_traj << "\n";
  o << "k_p = " << c.datagen.k_p << "\n";
  o << "sigma_a = " << c.datagen.sigma_a << "\n";
  o << "arrival_radius = " << c.datagen.arrival_radius << "\n";
  o << "waypoint_radius = " << c.datagen.waypoint_radius << "\n";
  o << "min_len = " << c.datagen.min_len << "\n";
  o << "tour_min_steps = " << c.datagen.tour_min_steps << "\n";
  o << "max_leg_steps_slack = " << c.datagen.max_leg_steps_slack << "\n";
  o << "max_attempts_per_traj = " << c.datagen.max_attempts_per_traj << "\n";
  o << "\n[flat]\n";
  o << "latent_dim = " << c.flat.latent_dim << "\n";
  o << "hidden = " << c.flat.hidden << "\n";
  o << "n_hidden = " << c.flat.n_hidden << "\n";
  o << "normalize_obs = " << (c.flat.normalize_obs ? "true" : "false") << "\n";
  o << "n_unroll = " << c.flat_train.n_unroll << "\n";
  o << "batch = " << c.flat_train.batch << "\n";
  o << "lr = " << c.flat_train.lr << "\n";
  o << "lambda_obs = " << c.flat_train.lambda_obs << "\n";
  o << "lambda_latent = " << c.flat_train.lambda_latent << "\n";
  o << "rho = " << c.flat_train.rho << "\n";
  o << "tau = " << c.flat_train.tau << "\n";
  o << "iterations = " << c.flat_train.iterations << "\n";
  o << "log_every = " << c.flat_train.log_every << "\n";
  o << "\n[ablation]\n";
  o << "no_cem = " << (c.no_cem ? "true" : "false") << "\n";
  o << "no_joint_training = " << (c.no_joint_training ? "true" : "false") << "\n";
  o << "flat_dynamics = " << (c.flat_dynamics ? "true" : "false") << "\n";
  o << "freeze_model = " << (c.freeze_model ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace skimo
