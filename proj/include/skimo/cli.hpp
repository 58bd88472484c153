// Command-line orchestration: config resolution (defaults < file < flags,
// with SKIMO_OUT_DIR as the fallback output root), subcommand dispatch, and
// run manifests. Exit codes: 0 success, 1 runtime abort, 2 usage or config
// error (bad flags, unreadable or mismatched inputs).

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skimo/config.hpp"
#include "skimo/evalsuite.hpp"

namespace skimo {

inline constexpr const char* kVersion = "skimo-0.1.0";

namespace cli_detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline uint64_t file_hash(const std::string& path) { return fnv1a64(read_file(path)); }

inline std::string hex64(uint64_t v) {
  std::ostringstream o;
  o << std::hex << v;
  return o.str();
}

// Effective config: env-derived output root, then the file, then flags.
inline RunConfig resolve_config(const std::string& config_path) {
  RunConfig base;
  if (const char* env = std::getenv("SKIMO_OUT_DIR"); env && *env) base.out_dir = env;
  std::ifstream in(config_path);
  if (!in) throw UsageError("config: cannot open " + config_path);
  RunConfig cfg = parse_run_config(in, config_path, base);
  return cfg;
}

inline MazeSpec load_spec(const RunConfig& cfg) {
  if (cfg.maze_path.empty()) throw UsageError("config: run.maze is required");
  return load_maze(read_file(cfg.maze_path));
}

inline std::filesystem::path make_out_dir(const std::string& out) {
  std::filesystem::path p(out);
  std::filesystem::create_directories(p);
  return p;
}

struct ManifestFile {
  std::string role, path;
};

inline void write_manifest(const std::filesystem::path& out, const std::string& command,
                           const RunConfig& cfg, const std::vector<ManifestFile>& files) {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = cfg.seed;
  j["config"] = render_run_config(cfg);
  nlohmann::json fh = nlohmann::json::object();
  for (const auto& f : files)
    fh[f.role] = {{"path", f.path}, {"fnv1a64", hex64(file_hash(f.path))}};
  j["files"] = fh;
  std::ofstream o(out / "run.json", std::ios::trunc);
  if (!o) throw UsageError("cannot write " + (out / "run.json").string());
  o << j.dump(2) << "\n";
}

}  // namespace cli_detail

// --- subcommand bodies ------------------------------------------------------

inline int cmd_gen_data(RunConfig cfg) {
  cfg.validate();
  auto spec = cli_detail::load_spec(cfg);
  auto out = cli_detail::make_out_dir(cfg.out_dir);
  auto ds = generate(spec, cfg.n_traj, cfg.seed, cfg.datagen);
  std::string path = (out / "dataset.bin").string();
  save_dataset(ds, path);
  long long steps = 0;
  for (const auto& t : ds.trajectories) steps += t.length() - 1;
  std::cout << "dataset: " << ds.n_traj() << " trajectories, mean length " << ds.mean_length()
            << ", " << steps << " env steps -> " << path << "\n";
  cli_detail::write_manifest(out, "gen-data", cfg,
                             {{"maze", cfg.maze_path}, {"dataset", path}});
  return 0;
}

inline int cmd_pretrain(RunConfig cfg, const std::string& data_path, bool flat_baseline) {
  cfg.validate();
  auto spec = cli_detail::load_spec(cfg);
  auto out = cli_detail::make_out_dir(cfg.out_dir);
  auto ds = load_dataset(data_path, cfg.agent.obs_dim, cfg.agent.act_dim);
  check_layout(ds, layout_hash(spec));

  if (flat_baseline) {
    FlatModel<float> model(cfg.flat);
    model.init(cfg.seed);
    auto rows = train_flat_model(model, ds, cfg.flat_train, cfg.seed,
                                 (out / "flat_pretrain.csv").string());
    std::string ck = (out / "flat.ckpt").string();
    model.save(ck);
    std::cout << "flat baseline: " << cfg.flat_train.iterations << " iterations, final loss "
              << (rows.empty() ? 0.0 : rows.back().l_total) << " -> " << ck << "\n";
    cli_detail::write_manifest(out, "pretrain --flat", cfg,
                               {{"maze", cfg.maze_path},
                                {"dataset", data_path},
                                {"checkpoint", ck},
                                {"log", (out / "flat_pretrain.csv").string()}});
    return 0;
  }

  Agent<float> agent(cfg.agent);
  agent.init(cfg.seed);
  auto rows = pretrain(agent, ds, cfg.pretrain, cfg.seed, (out / "pretrain.csv").string());
  std::string ck = (out / "pretrained.ckpt").string();
  agent.save(ck);
  std::cout << "pretrain: " << cfg.pretrain.iterations << " iterations, final loss "
            << (rows.empty() ? 0.0 : rows.back().l_total) << " -> " << ck << "\n";
  cli_detail::write_manifest(out, "pretrain", cfg,
                             {{"maze", cfg.maze_path},
                              {"dataset", data_path},
                              {"checkpoint", ck},
                              {"log", (out / "pretrain.csv").string()}});
  return 0;
}

inline int cmd_train(RunConfig cfg, const std::string& ckpt_path) {
  cfg.validate();
  auto spec = cli_detail::load_spec(cfg);
  auto out = cli_detail::make_out_dir(cfg.out_dir);
  Agent<float> agent(cfg.agent);
  agent.load(ckpt_path);

  auto res = train_downstream(spec, agent, cfg.rl, cfg.plan, cfg.seed,
                              (out / "train.csv").string(), (out / "crash.ckpt").string());
  std::string ck = (out / "trained.ckpt").string();
  agent.save(ck);
  if (!res.evals.empty()) {
    std::ofstream ev(out / "eval_points.csv", std::ios::trunc);
    ev << "env_step,success_rate,mean_return\n";
    for (const auto& p : res.evals) {
      std::ostringstream line;
      line.precision(9);
      line << p.env_step << ',' << p.success_rate << ',' << p.mean_return;
      ev << line.str() << '\n';
    }
  }
  std::cout << "train: " << res.env_steps << " env steps, " << res.episodes << " episodes, "
            << res.updates << " updates";
  if (!res.evals.empty()) std::cout << ", last eval success " << res.evals.back().success_rate;
  if (res.stopped_early) std::cout << " (stopped at success target)";
  std::cout << " -> " << ck << "\n";
  cli_detail::write_manifest(out, "train", cfg,
                             {{"maze", cfg.maze_path},
                              {"input_checkpoint", ckpt_path},
                              {"checkpoint", ck},
                              {"log", (out / "train.csv").string()}});
  return 0;
}

inline int cmd_eval(RunConfig cfg, const std::string& ckpt_path, int episodes,
                    bool deterministic) {
  cfg.validate();
  if (episodes < 1) throw UsageError("eval: --episodes must be >= 1");
  auto spec = cli_detail::load_spec(cfg);
  auto out = cli_detail::make_out_dir(cfg.out_dir);
  Agent<float> agent(cfg.agent);
  agent.load(ckpt_path);

  auto stats = evaluate(spec, agent, cfg.plan, episodes, cfg.seed, deterministic);
  std::vector<cli_detail::ManifestFile> files{{"maze", cfg.maze_path},
                                              {"checkpoint", ckpt_path}};
  std::ofstream jl(out / "eval.jsonl", std::ios::trunc);
  for (int e = 0; e < stats.episodes; ++e) {
    nlohmann::json j;
    j["episode"] = e;
    j["return"] = stats.returns[size_t(e)];
    j["length"] = stats.lengths[size_t(e)];
    j["success"] = bool(stats.successes[size_t(e)]);
    jl << j.dump() << "\n";

    std::ostringstream name;
    name << "episode_" << std::setw(3) << std::setfill('0') << e << ".svg";
    std::string color = stats.successes[size_t(e)] ? "#2e9e4f" : "#c23b22";
    std::string svg = maze_svg(
        spec, {maze_layer(spec), polyline_layer(stats.trajectories[size_t(e)], color, 2.0)});
    write_text_file((out / name.str()).string(), svg);
    files.push_back({name.str(), (out / name.str()).string()});
  }
  jl.close();
  files.push_back({"stats", (out / "eval.jsonl").string()});
  std::cout << "eval: success " << stats.success_rate << ", mean return " << stats.mean_return
            << ", mean length " << stats.mean_length << " over " << stats.episodes
            << " episodes\n";
  cli_detail::write_manifest(out, "eval", cfg, files);
  return 0;
}

inline int cmd_rollout_compare(RunConfig cfg, const std::string& ckpt_path,
                               const std::string& flat_ckpt_path, const std::string& data_path,
                               int horizon) {
  cfg.validate();
  auto spec = cli_detail::load_spec(cfg);
  auto out = cli_detail::make_out_dir(cfg.out_dir);
  Agent<float> agent(cfg.agent);
  agent.load(ckpt_path);
  FlatModel<float> flat(cfg.flat);
  flat.load(flat_ckpt_path);
  auto ds = load_dataset(data_path, cfg.agent.obs_dim, cfg.agent.act_dim);
  check_layout(ds, layout_hash(spec));

  auto rep = rollout_compare(ds, agent, flat, horizon);
  std::ofstream csv(out / "prediction.csv", std::ios::trunc);
  csv << "env_step,flat_err,skill_err\n";
  for (int t = 1; t <= rep.horizon; ++t) {
    std::ostringstream line;
    line.precision(9);
    line << t << ',' << rep.flat_at(t) << ',';
    if (t % rep.skill_horizon == 0) line << rep.skill_at(t);
    csv << line.str() << '\n';
  }
  csv.close();
  write_text_file((out / "prediction.svg").string(), prediction_overlay_svg(spec, rep));
  std::cout << "rollout-compare: " << rep.segments << " segments, final flat err "
            << rep.flat_at(rep.horizon) << " vs skill err " << rep.skill_at(rep.horizon) << " ("
            << (rep.flat_at(rep.horizon) > rep.skill_at(rep.horizon) ? "skill model wins"
                                                                     : "flat model wins")
            << ")\n";
  cli_detail::write_manifest(out, "rollout-compare", cfg,
                             {{"maze", cfg.maze_path},
                              {"checkpoint", ckpt_path},
                              {"flat_checkpoint", flat_ckpt_path},
                              {"dataset", data_path},
                              {"report", (out / "prediction.csv").string()}});
  return 0;
}

// --- dispatch ---------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"desk-scale skill-based model-based RL pipeline"};
  app.require_subcommand(1);

  std::string config_path, data_path, ckpt_path, flat_ckpt_path, out_override;
  uint64_t seed_override = 0;
  int n_traj = 0, episodes = 0, horizon = 500;
  bool flat_baseline = false, stochastic = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config file")->required();
    sub->add_option("--out", out_override, "output directory (overrides config)");
    sub->add_option("--seed", seed_override, "seed (overrides config)");
  };

  auto* gen = app.add_subcommand("gen-data", "collect a task-agnostic trajectory corpus");
  add_common(gen);
  gen->add_option("--n-traj", n_traj, "trajectories to collect (overrides config)");

  auto* pre = app.add_subcommand("pretrain", "train skill repertoire, prior, and dynamics offline");
  add_common(pre);
  pre->add_option("--data", data_path, "dataset file")->required();
  pre->add_flag("--flat", flat_baseline, "train the single-step baseline instead");

  auto* trn = app.add_subcommand("train", "downstream task learning from a pretrained checkpoint");
  add_common(trn);
  trn->add_option("--ckpt", ckpt_path, "pretrained checkpoint")->required();

  auto* evl = app.add_subcommand("eval", "roll out a trained agent and render its episodes");
  add_common(evl);
  evl->add_option("--ckpt", ckpt_path, "trained checkpoint")->required();
  evl->add_option("--episodes", episodes, "evaluation episodes (overrides config)");
  evl->add_flag("--stochastic", stochastic, "sample plans instead of executing the mean");

  auto* cmp = app.add_subcommand("rollout-compare", "open-loop prediction error comparison");
  add_common(cmp);
  cmp->add_option("--ckpt", ckpt_path, "skill-model checkpoint")->required();
  cmp->add_option("--flat-ckpt", flat_ckpt_path, "flat-model checkpoint")->required();
  cmp->add_option("--data", data_path, "held-out dataset file")->required();
  cmp->add_option("--horizon", horizon, "env steps to roll out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig cfg = cli_detail::resolve_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (sub->count("--seed")) cfg.seed = seed_override;

    if (gen->parsed()) {
      if (gen->count("--n-traj")) cfg.n_traj = n_traj;
      return cmd_gen_data(std::move(cfg));
    }
    if (pre->parsed()) return cmd_pretrain(std::move(cfg), data_path, flat_baseline);
    if (trn->parsed()) return cmd_train(std::move(cfg), ckpt_path);
    if (evl->parsed()) {
      int n = evl->count("--episodes") ? episodes : cfg.rl.eval_episodes;
      return cmd_eval(std::move(cfg), ckpt_path, n, !stochastic);
    }
    if (cmp->parsed())
      return cmd_rollout_compare(std::move(cfg), ckpt_path, flat_ckpt_path, data_path, horizon);
    throw UsageError("no subcommand selected");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "refusing input: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace skimo
